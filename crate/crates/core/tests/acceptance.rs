//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints a PASS/FAIL line regardless of outcome; exits nonzero on any FAIL.

use std::process::ExitCode;
use std::time::Instant;

use ppinn::autodiff::GradientVector;
use ppinn::evaluator::evaluate;
use ppinn::fdm::{convergence_study, UNSTABLE_LIMIT};
use ppinn::gradcheck::{curvature_gradient_check, input_derivative_check, interior_points};
use ppinn::model::{NetworkConfig, NetworkParameters};
use ppinn::optim::{AdamConfig, AdamState, Evaluation, LbfgsConfig, LbfgsState};
use ppinn::physics::{manufactured_residual_max, MaterialParameters};
use ppinn::trainer::{train, TrainingConfig, TrainingOutcome};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

struct Report {
    failures: usize,
}

impl Report {
    fn line(&mut self, id: &str, pass: bool, detail: String) {
        if !pass {
            self.failures += 1;
        }
        println!("[{}] {id}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
}

fn rosenbrock(p: &[f64]) -> ppinn::Result<Evaluation<f64, ()>> {
    let (x, y) = (p[0], p[1]);
    Ok(Evaluation {
        value: (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2),
        grad: vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)],
        extra: (),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn optimizer_suite() -> (bool, String) {
    let config = LbfgsConfig::default();
    let (c1, c2) = (config.line_search.c1, config.line_search.c2);
    let mut state = LbfgsState::new(config);
    let mut p = vec![-1.2, 1.0];
    let mut f = rosenbrock;
    let mut value = f64::INFINITY;
    let mut iterations = 0;
    let mut wolfe_ok = true;
    for _ in 0..100 {
        let before = p.clone();
        let f0 = rosenbrock(&before).unwrap();
        let out = state.step(&mut p, &mut f).unwrap();
        iterations += 1;
        value = out.value;
        if out.alpha.is_some() {
            // both conditions are invariant to the step length scaling, so
            // check them along the actual displacement
            let delta: Vec<f64> = p.iter().zip(&before).map(|(a, b)| a - b).collect();
            let f1 = rosenbrock(&p).unwrap();
            let slope0 = dot(&f0.grad, &delta);
            let decrease = f1.value <= f0.value + c1 * slope0;
            let curvature = dot(&f1.grad, &delta).abs() <= c2 * slope0.abs();
            wolfe_ok &= decrease && curvature && slope0 < 0.0;
        }
        if value < 1e-8 || out.converged() {
            break;
        }
    }

    let mut adam = AdamState::new(1, AdamConfig::adam(2e-3));
    let mut q = [1.0f64];
    adam.step(&mut q, &GradientVector::new(vec![1.0])).unwrap();
    let adam_err = (q[0] - (1.0 - 2e-3 / (1.0 + 1e-8))).abs();

    let pass = value < 1e-8 && iterations <= 100 && wolfe_ok && adam_err < 1e-12;
    (
        pass,
        format!(
            "Rosenbrock f = {value:.2e} after {iterations} iterations, strong Wolfe on every step: {wolfe_ok}; \
             Adam hand trace error {adam_err:.1e}"
        ),
    )
}

fn desk_run() -> (TrainingOutcome<f64>, f64) {
    let started = Instant::now();
    let out = train::<f64>(&TrainingConfig::desk()).unwrap_or_else(|e| panic!("desk training failed: {e}"));
    (out, started.elapsed().as_secs_f64())
}

fn main() -> ExitCode {
    let mut r = Report { failures: 0 };
    let mat = MaterialParameters::default();

    let worst = manufactured_residual_max(&mat, 50);
    r.line(
        "1 manufactured-solution zeroing",
        worst < 1e-10,
        format!("max |r| on 50x50 grid = {worst:.2e} (< 1e-10)"),
    );

    let net = NetworkParameters::<f64>::init(NetworkConfig::DESK, 11).unwrap();
    let inputs = input_derivative_check(&net, &interior_points(100, 12)).unwrap();
    let params = curvature_gradient_check(&net, &interior_points(4, 13), 20, 14).unwrap();
    r.line(
        "2 autodiff correctness",
        inputs.max_discrepancy < 1e-5 && params.max_discrepancy < 1e-4,
        format!(
            "4x64 input derivatives {:.2e} (< 1e-5, {} values); depth-3 parameter gradient {:.2e} (< 1e-4, {} parameters)",
            inputs.max_discrepancy, inputs.compared, params.max_discrepancy, params.compared
        ),
    );

    let (pass, detail) = optimizer_suite();
    r.line("3 optimizer suite", pass, detail);

    let study = convergence_study(&mat, &[51, 101, 201]).unwrap();
    let ratios: Vec<f64> = study.iter().filter_map(|row| row.ratio).collect();
    let unstable = study.iter().map(|row| row.max_unstable_amplitude).fold(0.0, f64::max);
    r.line(
        "4 FDM convergence",
        ratios.iter().all(|q| (3.5..=4.5).contains(q)) && unstable < UNSTABLE_LIMIT,
        format!("refinement ratios {ratios:.3?} (in [3.5, 4.5]); unstable mode max {unstable:.1e} (< 1e-6)"),
    );

    let (first, seconds) = desk_run();
    let report = evaluate(&first.params, 100, 100).unwrap();
    let final_total = first.stages.last().map(|s| s.end_total).unwrap_or(f64::NAN);
    r.line(
        "5 desk-scale training",
        report.rel_l2_u < 0.10 && report.rel_l2_phi < 0.15,
        format!(
            "rel_l2_u = {:.4e} (< 0.10), rel_l2_phi = {:.4e} (< 0.15), final total loss {final_total:.3e}, {seconds:.0}s",
            report.rel_l2_u, report.rel_l2_phi
        ),
    );
    let boundary = report.boundary_max_abs_error();
    r.line(
        "6 boundary suppression",
        boundary < 1e-6,
        format!("max abs error at x = 0 and x = 1: {boundary:.2e} (< 1e-6)"),
    );
    r.line(
        "7 error ordering",
        report.rel_l2_phi > report.rel_l2_u,
        format!(
            "rel_l2_phi = {:.4e} vs rel_l2_u = {:.4e} for seed {}",
            report.rel_l2_phi,
            report.rel_l2_u,
            TrainingConfig::desk().seed
        ),
    );

    let (second, _) = desk_run();
    let (a, b) = (first.history.to_csv_string(), second.history.to_csv_string());
    r.line(
        "8 determinism",
        a == b,
        format!("two desk runs, history CSVs of {} and {} bytes, identical: {}", a.len(), b.len(), a == b),
    );

    r.line(
        "desk regression loss",
        final_total < 1e-3,
        format!("final total loss {final_total:.3e} (< 1e-3)"),
    );

    if r.failures == 0 {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} criteria failed", r.failures);
        ExitCode::FAILURE
    }
}
