//! Dense-grid comparison against the closed-form solution.
//!
//! Grids are uniform and include both endpoints. Error norms are plain
//! discrete 2-norm ratios over the flattened grid.

use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::NetworkParameters;
use crate::physics::exact_solution;
use crate::real::{lit, Real};

/// Time points of the exported field curves.
pub const DEFAULT_SLICE_TIMES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
pub const DEFAULT_GRID: usize = 450;

const POINTS_PER_TASK: usize = 4_096;

/// Anything that predicts `(u, phi)` at a batch of points.
pub trait FieldModel: Sync {
    fn predict(&self, xs: &[f64], ts: &[f64]) -> (Vec<f64>, Vec<f64>);
}

impl<T: Real> FieldModel for NetworkParameters<T> {
    fn predict(&self, xs: &[f64], ts: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<T> = xs.iter().map(|&v| lit(v)).collect();
        let ts: Vec<T> = ts.iter().map(|&v| lit(v)).collect();
        let (u, phi) = NetworkParameters::predict(self, &xs, &ts);
        (
            u.into_iter().map(T::as_f64).collect(),
            phi.into_iter().map(T::as_f64).collect(),
        )
    }
}

/// The closed-form solution itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactModel;

impl FieldModel for ExactModel {
    fn predict(&self, xs: &[f64], ts: &[f64]) -> (Vec<f64>, Vec<f64>) {
        xs.iter()
            .zip(ts)
            .map(|(&x, &t)| {
                let f = exact_solution(x, t);
                (f.u, f.phi)
            })
            .unzip()
    }
}

/// The closed-form solution multiplied by a constant.
#[derive(Debug, Clone, Copy)]
pub struct ScaledExact(pub f64);

impl FieldModel for ScaledExact {
    fn predict(&self, xs: &[f64], ts: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (u, phi) = ExactModel.predict(xs, ts);
        (
            u.into_iter().map(|v| self.0 * v).collect(),
            phi.into_iter().map(|v| self.0 * v).collect(),
        )
    }
}

/// Predicts in parallel over fixed-size point chunks; output order matches input order.
pub fn predict_points<M: FieldModel + ?Sized>(model: &M, xs: &[f64], ts: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let parts: Vec<(Vec<f64>, Vec<f64>)> = xs
        .par_chunks(POINTS_PER_TASK)
        .zip(ts.par_chunks(POINTS_PER_TASK))
        .map(|(x, t)| model.predict(x, t))
        .collect();
    let mut u = Vec::with_capacity(xs.len());
    let mut phi = Vec::with_capacity(xs.len());
    for (pu, pp) in parts {
        u.extend(pu);
        phi.extend(pp);
    }
    (u, phi)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub nx: usize,
    pub nt: usize,
    pub slice_times: Vec<f64>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            nx: DEFAULT_GRID,
            nt: DEFAULT_GRID,
            slice_times: DEFAULT_SLICE_TIMES.to_vec(),
        }
    }
}

impl EvaluationConfig {
    pub fn grid(nx: usize, nt: usize) -> Self {
        EvaluationConfig {
            nx,
            nt,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.nt < 2 {
            return Err(Error::Config(format!(
                "evaluation grid needs nx, nt >= 2 (got {} x {})",
                self.nx, self.nt
            )));
        }
        if let Some(t) = self.slice_times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Config(format!("slice time {t} lies outside [0, 1]")));
        }
        Ok(())
    }
}

/// `n` evenly spaced points from 0 to 1 inclusive.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Field curves along `x` at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Slice {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_pred: Vec<f64>,
    pub u_exact: Vec<f64>,
    pub phi_pred: Vec<f64>,
    pub phi_exact: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub rel_l2_u: f64,
    pub rel_l2_phi: f64,
    pub nx: usize,
    pub nt: usize,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    /// Indexed `[x, t]`.
    pub abs_error_u: Array2<f64>,
    pub abs_error_phi: Array2<f64>,
    pub slice_times: Vec<f64>,
    pub slices: Vec<Slice>,
}

impl ErrorReport {
    pub fn points(&self) -> usize {
        self.nx * self.nt
    }

    /// Largest absolute error of either field on the `x = 0` and `x = 1` columns.
    pub fn boundary_max_abs_error(&self) -> f64 {
        let last = self.nx - 1;
        [0, last]
            .iter()
            .flat_map(|&i| {
                self.abs_error_u
                    .row(i)
                    .iter()
                    .chain(self.abs_error_phi.row(i).iter())
                    .copied()
                    .collect::<Vec<_>>()
            })
            .fold(0.0, f64::max)
    }

    /// `x,t,abs_err_u,abs_err_phi`, `x` outer.
    pub fn write_errors_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "x,t,abs_err_u,abs_err_phi")?;
        for (i, x) in self.x.iter().enumerate() {
            for (j, t) in self.t.iter().enumerate() {
                writeln!(
                    w,
                    "{x},{t},{:e},{:e}",
                    self.abs_error_u[[i, j]],
                    self.abs_error_phi[[i, j]]
                )?;
            }
        }
        Ok(())
    }

    /// `t,x,u_pred,u_exact,phi_pred,phi_exact`, one block per slice time.
    pub fn write_slices_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "t,x,u_pred,u_exact,phi_pred,phi_exact")?;
        for s in &self.slices {
            for k in 0..s.x.len() {
                writeln!(
                    w,
                    "{},{},{:e},{:e},{:e},{:e}",
                    s.t, s.x[k], s.u_pred[k], s.u_exact[k], s.phi_pred[k], s.phi_exact[k]
                )?;
            }
        }
        Ok(())
    }

    /// Flat `key = value` summary; `extra` pairs are appended verbatim.
    pub fn write_summary(&self, mut w: impl Write, extra: &[(&str, String)]) -> Result<()> {
        writeln!(w, "rel_l2_u = {:e}", self.rel_l2_u)?;
        writeln!(w, "rel_l2_phi = {:e}", self.rel_l2_phi)?;
        writeln!(w, "nx = {}", self.nx)?;
        writeln!(w, "nt = {}", self.nt)?;
        writeln!(w, "points = {}", self.points())?;
        writeln!(w, "boundary_max_abs_error = {:e}", self.boundary_max_abs_error())?;
        for (k, v) in extra {
            writeln!(w, "{k} = {v}")?;
        }
        Ok(())
    }
}

/// `|pred - exact| / |exact|` in the Euclidean norm.
pub fn relative_l2(pred: &[f64], exact: &[f64]) -> Result<f64> {
    if pred.len() != exact.len() {
        return Err(Error::Shape(format!(
            "prediction has {} points, reference has {}",
            pred.len(),
            exact.len()
        )));
    }
    let den: f64 = exact.iter().map(|e| e * e).sum::<f64>().sqrt();
    if den == 0.0 || !den.is_finite() {
        return Err(Error::UndefinedMetric);
    }
    let num: f64 = pred
        .iter()
        .zip(exact)
        .map(|(p, e)| (p - e) * (p - e))
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Evaluates on an `nx x nt` grid with the default slice times.
pub fn evaluate<M: FieldModel + ?Sized>(model: &M, nx: usize, nt: usize) -> Result<ErrorReport> {
    evaluate_with(model, &EvaluationConfig::grid(nx, nt))
}

pub fn evaluate_with<M: FieldModel + ?Sized>(model: &M, cfg: &EvaluationConfig) -> Result<ErrorReport> {
    cfg.validate()?;
    let (xg, tg) = (uniform_grid(cfg.nx), uniform_grid(cfg.nt));
    let n = cfg.nx * cfg.nt;
    let mut xs = Vec::with_capacity(n);
    let mut ts = Vec::with_capacity(n);
    for &x in &xg {
        for &t in &tg {
            xs.push(x);
            ts.push(t);
        }
    }
    let (u, phi) = predict_points(model, &xs, &ts);
    let (ue, pe) = ExactModel.predict(&xs, &ts);
    let rel_l2_u = relative_l2(&u, &ue)?;
    let rel_l2_phi = relative_l2(&phi, &pe)?;
    let abs = |p: &[f64], e: &[f64]| {
        let v: Vec<f64> = p.iter().zip(e).map(|(a, b)| (a - b).abs()).collect();
        Array2::from_shape_vec((cfg.nx, cfg.nt), v).expect("grid shape")
    };
    let abs_error_u = abs(&u, &ue);
    let abs_error_phi = abs(&phi, &pe);

    let slices = cfg
        .slice_times
        .iter()
        .map(|&t| {
            let ts = vec![t; xg.len()];
            let (u_pred, phi_pred) = predict_points(model, &xg, &ts);
            let (u_exact, phi_exact) = ExactModel.predict(&xg, &ts);
            Slice {
                t,
                x: xg.clone(),
                u_pred,
                u_exact,
                phi_pred,
                phi_exact,
            }
        })
        .collect();

    Ok(ErrorReport {
        rel_l2_u,
        rel_l2_phi,
        nx: cfg.nx,
        nt: cfg.nt,
        x: xg,
        t: tg,
        abs_error_u,
        abs_error_phi,
        slice_times: cfg.slice_times.clone(),
        slices,
    })
}
