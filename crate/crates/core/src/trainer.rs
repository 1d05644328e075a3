//! Three-stage training: mini-batched Adam, mini-batched AdamW, then
//! full-set L-BFGS.
//!
//! Every randomized piece draws from its own stream derived from the master
//! seed, so changing one stage's budget leaves the earlier stages' batch
//! sequences untouched. The returned parameters are the best seen anywhere
//! in the run, judged by the total loss on the full interior set.

use std::fmt;
use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{LossBreakdown, LossConfig, LossProblem};
use crate::model::{NetworkConfig, NetworkParameters};
use crate::optim::{AdamConfig, AdamState, Evaluation, LbfgsConfig, LbfgsState, LbfgsStatus, LineSearchConfig};
use crate::physics::MaterialParameters;
use crate::real::{Precision, Real};
use crate::sampler::{mix_seed, sample, CollocationSet, Point, SamplingCounts};

const INIT_STREAM: u64 = 0;
const SAMPLING_STREAM: u64 = 1;
const STAGE_STREAM_BASE: u64 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamStage {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub patience: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfgsStage {
    pub iterations: usize,
    pub history: usize,
    pub grad_tol: f64,
    pub loss_tol: f64,
}

/// Optimizer budgets and batch size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub stage1: AdamStage,
    pub stage2: AdamStage,
    pub stage3: LbfgsStage,
    pub batch_size: usize,
    /// Write elapsed seconds into the history; off keeps the history byte-reproducible.
    #[serde(default)]
    pub record_wall_clock: bool,
}

impl Schedule {
    pub const PAPER: Schedule = Schedule {
        stage1: AdamStage {
            epochs: 18_000,
            lr: 2e-3,
            weight_decay: 0.0,
            patience: 2_000,
        },
        stage2: AdamStage {
            epochs: 12_000,
            lr: 8e-4,
            weight_decay: 1.5e-5,
            patience: 1_500,
        },
        stage3: LbfgsStage {
            iterations: 600,
            history: 80,
            grad_tol: 1e-10,
            loss_tol: 1e-10,
        },
        batch_size: 3_000,
        record_wall_clock: false,
    };

    pub const DESK: Schedule = Schedule {
        stage1: AdamStage {
            epochs: 2_000,
            lr: 2e-3,
            weight_decay: 0.0,
            patience: 500,
        },
        stage2: AdamStage {
            epochs: 1_000,
            lr: 8e-4,
            weight_decay: 1.5e-5,
            patience: 250,
        },
        stage3: LbfgsStage {
            iterations: 200,
            history: 80,
            grad_tol: 1e-10,
            loss_tol: 1e-10,
        },
        batch_size: 500,
        record_wall_clock: false,
    };

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if s.epochs == 0 || s.patience == 0 {
                return Err(Error::Config(format!("{name}: epochs and patience must be positive")));
            }
            if s.patience > s.epochs {
                return Err(Error::Config(format!(
                    "{name}: patience {} exceeds the epoch budget {}",
                    s.patience, s.epochs
                )));
            }
            if !(s.lr.is_finite() && s.lr > 0.0) {
                return Err(Error::Config(format!("{name}: lr must be positive and finite")));
            }
            if !(s.weight_decay.is_finite() && s.weight_decay >= 0.0) {
                return Err(Error::Config(format!("{name}: weight_decay must be non-negative")));
            }
        }
        let s3 = &self.stage3;
        if s3.iterations == 0 || s3.history == 0 {
            return Err(Error::Config("stage3: iterations and history must be positive".into()));
        }
        if !(s3.grad_tol >= 0.0 && s3.loss_tol >= 0.0) {
            return Err(Error::Config("stage3: tolerances must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::PAPER
    }
}

/// Everything a training run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub network: NetworkConfig,
    pub sampling: SamplingCounts,
    pub loss: LossConfig,
    pub material: MaterialParameters,
    pub schedule: Schedule,
    pub seed: u64,
    pub precision: Precision,
}

pub const DEFAULT_SEED: u64 = 2024;

impl TrainingConfig {
    pub fn paper() -> Self {
        TrainingConfig {
            network: NetworkConfig::PAPER,
            sampling: SamplingCounts::PAPER,
            loss: LossConfig::default(),
            material: MaterialParameters::default(),
            schedule: Schedule::PAPER,
            seed: DEFAULT_SEED,
            precision: Precision::F32,
        }
    }

    /// Laptop-scale run: 4x64 network, 2,000/500/500 points, budgets 2,000/1,000/200.
    pub fn desk() -> Self {
        TrainingConfig {
            network: NetworkConfig::DESK,
            sampling: SamplingCounts::DESK,
            schedule: Schedule::DESK,
            precision: Precision::F64,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.material.validate()?;
        self.schedule.validate()?;
        let c = &self.sampling;
        if c.n_interior == 0 || c.n_boundary == 0 || c.n_initial == 0 {
            return Err(Error::Config("every collocation set must be non-empty".into()));
        }
        if self.schedule.batch_size > c.n_interior {
            return Err(Error::Config(format!(
                "batch_size {} exceeds n_interior {}",
                self.schedule.batch_size, c.n_interior
            )));
        }
        if self.loss.chunk_size == 0 {
            return Err(Error::Config("loss chunk_size must be positive".into()));
        }
        Ok(())
    }

    pub fn init_seed(&self) -> u64 {
        mix_seed(self.seed, INIT_STREAM)
    }

    pub fn sampling_seed(&self) -> u64 {
        mix_seed(self.seed, SAMPLING_STREAM)
    }

    pub fn stage_seed(&self, stage: u8) -> u64 {
        mix_seed(self.seed, STAGE_STREAM_BASE + u64::from(stage))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub stage: u8,
    pub iter: usize,
    pub pde: f64,
    pub bc: f64,
    pub ic: f64,
    pub total: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub rows: Vec<HistoryRow>,
}

pub const HISTORY_HEADER: &str = "stage,iter,pde,bc,ic,total,seconds";

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &HistoryRow> {
        self.rows.iter().filter(move |r| r.stage == stage)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{HISTORY_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{:e},{:e},{:e},{:e},{:.3}",
                r.stage, r.iter, r.pde, r.bc, r.ic, r.total, r.seconds
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII output")
    }
}

/// True once the best loss so far has stood for `patience` consecutive
/// entries (the entry that set it included) without a strict decrease.
pub fn early_stop_check(losses: &[f64], patience: usize) -> bool {
    assert!(patience >= 1, "patience must be at least 1");
    let n = losses.len();
    if n < patience {
        return false;
    }
    let mut best = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < losses[best] {
            best = i;
        }
    }
    best + patience <= n
}

/// Streaming form of [`early_stop_check`].
#[derive(Debug, Clone)]
struct Stagnation {
    patience: usize,
    seen: usize,
    best: f64,
    best_at: usize,
}

impl Stagnation {
    fn new(patience: usize) -> Self {
        Stagnation {
            patience,
            seen: 0,
            best: f64::INFINITY,
            best_at: 0,
        }
    }

    fn push(&mut self, loss: f64) -> bool {
        if self.seen == 0 || loss < self.best {
            self.best = loss;
            self.best_at = self.seen;
        }
        self.seen += 1;
        self.best_at + self.patience <= self.seen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Budget,
    EarlyStop,
    Converged(LbfgsStatus),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageSummary {
    pub stage: u8,
    /// Checksum of the parameters at the stage's first evaluation.
    pub start_checksum: u64,
    pub end_checksum: u64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Full-interior total loss at the stage's end parameters.
    pub end_total: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T: Real> {
    /// Lowest full-set total loss seen during the run.
    pub params: NetworkParameters<T>,
    pub best_total: f64,
    pub history: TrainingHistory,
    pub stages: Vec<StageSummary>,
    /// Parameters at the end of each stage, in stage order.
    pub checkpoints: Vec<NetworkParameters<T>>,
    pub collocation: CollocationSet,
}

/// A run that stopped on an error, with whatever it had produced.
#[derive(Debug)]
pub struct TrainingFailure<T: Real> {
    pub error: Error,
    pub history: TrainingHistory,
    pub last_params: Option<NetworkParameters<T>>,
    pub checkpoints: Vec<NetworkParameters<T>>,
}

impl<T: Real> fmt::Display for TrainingFailure<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted after {} history rows: {}", self.history.len(), self.error)
    }
}

impl<T: Real> std::error::Error for TrainingFailure<T> {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl<T: Real> From<Error> for TrainingFailure<T> {
    fn from(error: Error) -> Self {
        TrainingFailure {
            error,
            history: TrainingHistory::default(),
            last_params: None,
            checkpoints: Vec::new(),
        }
    }
}

struct Best<T: Real> {
    total: f64,
    params: Option<NetworkParameters<T>>,
}

impl<T: Real> Best<T> {
    fn offer(&mut self, total: f64, params: &NetworkParameters<T>) {
        if total.is_finite() && (self.params.is_none() || total < self.total) {
            self.total = total;
            self.params = Some(params.clone());
        }
    }
}

struct Run<'a, T: Real> {
    cfg: &'a TrainingConfig,
    set: CollocationSet,
    problem: LossProblem,
    history: TrainingHistory,
    checkpoints: Vec<NetworkParameters<T>>,
    stages: Vec<StageSummary>,
    best: Best<T>,
    started: Instant,
    progress: &'a mut dyn FnMut(&HistoryRow),
}

fn non_finite(stage: u8, iteration: usize) -> Error {
    Error::NonFinite {
        stage,
        iteration,
        what: "loss",
    }
}

impl<T: Real> Run<'_, T> {
    fn record(&mut self, stage: u8, iter: usize, b: &LossBreakdown<T>) {
        let seconds = if self.cfg.schedule.record_wall_clock {
            self.started.elapsed().as_secs_f64()
        } else {
            0.0
        };
        let row = HistoryRow {
            stage,
            iter,
            pde: b.pde.as_f64(),
            bc: b.bc.as_f64(),
            ic: b.ic.as_f64(),
            total: b.total.as_f64(),
            seconds,
        };
        (self.progress)(&row);
        self.history.rows.push(row);
    }

    fn full_total(&self, params: &NetworkParameters<T>) -> Result<f64> {
        Ok(self.problem.evaluate(params, &self.set.interior)?.total.as_f64())
    }

    fn adam_stage(&mut self, stage: u8, params: &mut NetworkParameters<T>) -> Result<()> {
        let s = if stage == 1 {
            self.cfg.schedule.stage1
        } else {
            self.cfg.schedule.stage2
        };
        let config = if s.weight_decay > 0.0 {
            AdamConfig::adamw(s.lr, s.weight_decay)
        } else {
            AdamConfig::adam(s.lr)
        };
        let stage_seed = self.cfg.stage_seed(stage);
        let mut flat = params.to_flat();
        let mut adam = AdamState::new(flat.len(), config);
        let mut stagnation = Stagnation::new(s.patience);
        let start_checksum = params.checksum();
        let mut batch_best: Option<(T, NetworkParameters<T>)> = None;
        let mut stop = StopReason::Budget;
        let mut iterations = 0;

        for iter in 0..s.epochs {
            let batch = self
                .set
                .minibatch(self.cfg.schedule.batch_size, mix_seed(stage_seed, iter as u64))?;
            let (b, g) = self.problem.value_and_grad(params, &batch)?;
            if !b.is_finite() || !g.is_finite() {
                return Err(non_finite(stage, iter));
            }
            self.record(stage, iter, &b);
            iterations = iter + 1;
            if batch_best.as_ref().is_none_or(|(t, _)| b.total < *t) {
                batch_best = Some((b.total, params.clone()));
            }
            if stagnation.push(b.total.as_f64()) {
                stop = StopReason::EarlyStop;
                break;
            }
            adam.step(&mut flat, &g).map_err(|e| match e {
                Error::NonFinite { iteration, what, .. } => Error::NonFinite {
                    stage,
                    iteration,
                    what,
                },
                other => other,
            })?;
            params.set_flat(&flat)?;
        }

        if let Some((_, p)) = batch_best {
            let total = self.full_total(&p)?;
            self.best.offer(total, &p);
        }
        self.finish_stage(stage, params, start_checksum, iterations, stop)
    }

    fn finish_stage(
        &mut self,
        stage: u8,
        params: &NetworkParameters<T>,
        start_checksum: u64,
        iterations: usize,
        stop: StopReason,
    ) -> Result<()> {
        let end_total = self.full_total(params)?;
        if !end_total.is_finite() {
            return Err(non_finite(stage, iterations));
        }
        self.best.offer(end_total, params);
        self.checkpoints.push(params.clone());
        self.stages.push(StageSummary {
            stage,
            start_checksum,
            end_checksum: params.checksum(),
            iterations,
            stop,
            end_total,
        });
        Ok(())
    }

    fn lbfgs_stage(&mut self, params: &mut NetworkParameters<T>) -> Result<()> {
        const STAGE: u8 = 3;
        let s = self.cfg.schedule.stage3;
        let config = LbfgsConfig {
            history: s.history,
            grad_tol: s.grad_tol,
            loss_tol: s.loss_tol,
            line_search: LineSearchConfig::default(),
        };
        let mut state: LbfgsState<T, LossBreakdown<T>> = LbfgsState::new(config);
        let mut flat = params.to_flat();
        let start_checksum = params.checksum();
        let template = params.clone();
        let problem = self.problem.clone();
        let interior: Vec<Point> = self.set.interior.clone();
        let mut loss_fn = |theta: &[T]| -> Result<Evaluation<T, LossBreakdown<T>>> {
            let p = template.with_flat(theta)?;
            let (b, g) = problem.value_and_grad(&p, &interior)?;
            Ok(Evaluation {
                value: b.total,
                grad: g.entries,
                extra: b,
            })
        };

        let mut stop = StopReason::Budget;
        let mut iterations = 0;
        for iter in 0..s.iterations {
            let current = state.ensure_evaluated(&flat, &mut loss_fn)?;
            let b = current.extra;
            let total = b.total.as_f64();
            if !b.is_finite() {
                return Err(non_finite(STAGE, iter));
            }
            let current_params = template.with_flat(&flat)?;
            self.best.offer(total, &current_params);
            self.record(STAGE, iter, &b);
            iterations = iter + 1;
            let step = state.step(&mut flat, &mut loss_fn)?;
            if step.converged() {
                stop = StopReason::Converged(step.status);
                break;
            }
        }
        params.set_flat(&flat)?;
        self.finish_stage(STAGE, params, start_checksum, iterations, stop)
    }
}

/// Runs all three stages. See [`train_with_progress`].
pub fn train<T: Real>(cfg: &TrainingConfig) -> std::result::Result<TrainingOutcome<T>, TrainingFailure<T>> {
    train_with_progress(cfg, &mut |_| {})
}

/// Runs all three stages, calling `progress` after each history row.
///
/// A non-finite loss aborts the run; the failure carries the history so far,
/// the last parameters and the stage checkpoints already taken.
pub fn train_with_progress<T: Real>(
    cfg: &TrainingConfig,
    progress: &mut dyn FnMut(&HistoryRow),
) -> std::result::Result<TrainingOutcome<T>, TrainingFailure<T>> {
    cfg.validate()?;
    if T::PRECISION != cfg.precision {
        return Err(Error::Config(format!(
            "configured for {}-bit but trained in {}-bit arithmetic",
            cfg.precision, T::PRECISION
        ))
        .into());
    }
    let set = sample(cfg.sampling, cfg.sampling_seed());
    let problem = LossProblem {
        boundary: set.boundary.clone(),
        initial: set.initial.clone(),
        material: cfg.material,
        config: cfg.loss,
    };
    let mut params = NetworkParameters::<T>::init(cfg.network, cfg.init_seed())?;
    let mut run = Run {
        cfg,
        set,
        problem,
        history: TrainingHistory::default(),
        checkpoints: Vec::new(),
        stages: Vec::new(),
        best: Best {
            total: f64::INFINITY,
            params: None,
        },
        started: Instant::now(),
        progress,
    };

    let result = run
        .adam_stage(1, &mut params)
        .and_then(|()| run.adam_stage(2, &mut params))
        .and_then(|()| run.lbfgs_stage(&mut params));
    if let Err(error) = result {
        return Err(TrainingFailure {
            error,
            history: run.history,
            last_params: Some(params),
            checkpoints: run.checkpoints,
        });
    }
    let best = run.best.params.expect("every stage offers a candidate");
    Ok(TrainingOutcome {
        params: best,
        best_total: run.best.total,
        history: run.history,
        stages: run.stages,
        checkpoints: run.checkpoints,
        collocation: run.set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(budgets: (usize, usize, usize)) -> TrainingConfig {
        let mut cfg = TrainingConfig::desk();
        cfg.network = NetworkConfig {
            width: 6,
            hidden_layers: 2,
        };
        cfg.sampling = SamplingCounts {
            n_interior: 40,
            n_boundary: 10,
            n_initial: 10,
        };
        cfg.schedule.batch_size = 16;
        cfg.schedule.stage1.epochs = budgets.0;
        cfg.schedule.stage1.patience = budgets.0;
        cfg.schedule.stage2.epochs = budgets.1;
        cfg.schedule.stage2.patience = budgets.1;
        cfg.schedule.stage3.iterations = budgets.2;
        cfg
    }

    #[test]
    fn presets() {
        let p = TrainingConfig::paper();
        assert_eq!(
            (p.schedule.stage1.epochs, p.schedule.stage2.epochs, p.schedule.stage3.iterations),
            (18_000, 12_000, 600)
        );
        assert_eq!((p.schedule.stage1.lr, p.schedule.stage1.patience), (2e-3, 2_000));
        assert_eq!(
            (p.schedule.stage2.lr, p.schedule.stage2.weight_decay, p.schedule.stage2.patience),
            (8e-4, 1.5e-5, 1_500)
        );
        assert_eq!(p.schedule.batch_size, 3_000);
        p.validate().unwrap();
        let d = TrainingConfig::desk();
        assert_eq!(d.network, NetworkConfig::DESK);
        assert_eq!(d.sampling.n_interior, 2_000);
        assert_eq!(
            (d.schedule.stage1.epochs, d.schedule.stage2.epochs, d.schedule.stage3.iterations),
            (2_000, 1_000, 200)
        );
        assert_eq!(d.schedule.batch_size, 500);
        assert_eq!(d.material, p.material);
        d.validate().unwrap();
    }

    #[test]
    fn invalid_schedules() {
        let mut c = tiny((1, 1, 1));
        c.schedule.stage1.epochs = 0;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = tiny((5, 1, 1));
        c.schedule.stage1.patience = 6;
        assert!(c.validate().is_err());
        let mut c = tiny((1, 1, 1));
        c.schedule.stage3.iterations = 0;
        assert!(c.validate().is_err());
        let mut c = tiny((1, 1, 1));
        c.schedule.batch_size = 41;
        assert!(c.validate().is_err());
        let c = tiny((1, 1, 1));
        assert!(matches!(train::<f32>(&c).unwrap_err().error, Error::Config(_)));
    }

    #[test]
    fn early_stop_examples() {
        assert!(!early_stop_check(&[5.0, 4.0, 3.0, 2.0, 1.0], 2));
        assert!(early_stop_check(&[1.0, 1.0, 1.0], 2));
        assert!(!early_stop_check(&[3.0, 2.9999], 2));
        assert!(early_stop_check(&[3.0, 2.9999, 2.9999], 2));
        assert!(!early_stop_check(&[], 1));
        assert!(early_stop_check(&[7.0], 1));
    }

    proptest! {
        #[test]
        fn streaming_matches_batch_rule(
            losses in prop::collection::vec(0u8..6, 1..30),
            patience in 1usize..6,
        ) {
            let losses: Vec<f64> = losses.into_iter().map(f64::from).collect();
            let mut s = Stagnation::new(patience);
            for n in 1..=losses.len() {
                prop_assert_eq!(s.push(losses[n - 1]), early_stop_check(&losses[..n], patience));
            }
        }
    }

    #[test]
    fn unit_budgets_give_three_rows() {
        let out = train::<f64>(&tiny((1, 1, 1))).unwrap();
        let stages: Vec<(u8, usize)> = out.history.rows.iter().map(|r| (r.stage, r.iter)).collect();
        assert_eq!(stages, vec![(1, 0), (2, 0), (3, 0)]);
        assert_eq!(out.checkpoints.len(), 3);
        assert_eq!(out.stages.len(), 3);
    }

    #[test]
    fn stages_chain_and_best_is_monotone() {
        let out = train::<f64>(&tiny((30, 20, 10))).unwrap();
        let s = &out.stages;
        assert_eq!(s[1].start_checksum, s[0].end_checksum);
        assert_eq!(s[2].start_checksum, s[1].end_checksum);
        for (stage, ckpt) in s.iter().zip(&out.checkpoints) {
            assert_eq!(ckpt.checksum(), stage.end_checksum);
            assert!(out.best_total <= stage.end_total);
        }
        let cfg = tiny((30, 20, 10));
        let set = sample(cfg.sampling, cfg.sampling_seed());
        let problem = LossProblem {
            boundary: set.boundary.clone(),
            initial: set.initial.clone(),
            material: cfg.material,
            config: cfg.loss,
        };
        let best = problem.evaluate(&out.params, &set.interior).unwrap().total;
        assert_eq!(best, out.best_total);
        for ckpt in &out.checkpoints {
            assert!(best <= problem.evaluate(ckpt, &set.interior).unwrap().total);
        }
        for stage in 1..=3u8 {
            let iters: Vec<usize> = out.history.stage(stage).map(|r| r.iter).collect();
            assert!(iters.windows(2).all(|w| w[0] < w[1]));
        }
        let first = out.history.rows.first().unwrap().total;
        assert!(out.best_total < first);
    }

    #[test]
    fn history_is_reproducible() {
        let cfg = tiny((15, 10, 5));
        let a = train::<f64>(&cfg).unwrap().history.to_csv_string();
        let b = train::<f64>(&cfg).unwrap().history.to_csv_string();
        assert_eq!(a, b);
        assert!(a.starts_with("stage,iter,pde,bc,ic,total,seconds\n"));
        let mut other = cfg.clone();
        other.seed += 1;
        assert_ne!(a, train::<f64>(&other).unwrap().history.to_csv_string());
    }

    #[test]
    fn stage_budgets_do_not_perturb_earlier_stages() {
        let a = train::<f64>(&tiny((12, 5, 2))).unwrap();
        let b = train::<f64>(&tiny((12, 9, 4))).unwrap();
        let s1 = |h: &TrainingHistory| h.stage(1).copied().collect::<Vec<_>>();
        assert_eq!(s1(&a.history), s1(&b.history));
        assert_eq!(a.stages[0].end_checksum, b.stages[0].end_checksum);
    }

    #[test]
    fn early_stopping_cuts_a_stage_short() {
        let mut cfg = tiny((400, 1, 1));
        cfg.schedule.stage1.patience = 1;
        let out = train::<f64>(&cfg).unwrap();
        assert_eq!(out.stages[0].stop, StopReason::EarlyStop);
        assert!(out.stages[0].iterations < 400);
    }

    #[test]
    fn divergence_aborts_with_history() {
        let mut cfg = tiny((50, 1, 1));
        cfg.schedule.stage1.lr = 1e300;
        let err = train::<f64>(&cfg).unwrap_err();
        assert!(matches!(err.error, Error::NonFinite { stage: 1, .. }), "{}", err.error);
        assert!(!err.history.is_empty());
        assert!(err.last_params.is_some());
        assert!(err.checkpoints.is_empty());
    }

    #[test]
    fn wall_clock_is_opt_in() {
        let out = train::<f64>(&tiny((2, 1, 1))).unwrap();
        assert!(out.history.rows.iter().all(|r| r.seconds == 0.0));
        let mut cfg = tiny((2, 1, 1));
        cfg.schedule.record_wall_clock = true;
        let out = train::<f64>(&cfg).unwrap();
        assert!(out.history.rows.last().unwrap().seconds > 0.0);
    }

    #[test]
    fn single_precision_run() {
        let mut cfg = tiny((5, 5, 3));
        cfg.precision = Precision::F32;
        let out = train::<f32>(&cfg).unwrap();
        assert_eq!(out.stages.len(), 3);
        assert!(out.best_total.is_finite());
    }
}
