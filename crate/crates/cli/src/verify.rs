use std::process::ExitCode;

use anyhow::Result;
use ppinn::autodiff::{finite_difference_check, DerivativeOrder, Var};
use ppinn::fdm::{convergence_study, UNSTABLE_LIMIT};
use ppinn::gradcheck::{curvature_gradient_check, input_derivative_check, interior_points};
use ppinn::model::{NetworkConfig, NetworkParameters};
use ppinn::physics::{manufactured_residual_max, MaterialParameters};

struct Row {
    name: String,
    value: String,
    bound: String,
    pass: bool,
    note: Option<String>,
}

impl Row {
    fn below(name: impl Into<String>, value: f64, bound: f64) -> Row {
        Row {
            name: name.into(),
            value: format!("{value:.3e}"),
            bound: format!("< {bound:.0e}"),
            pass: value < bound,
            note: None,
        }
    }

    fn failed(name: impl Into<String>, why: impl std::fmt::Display) -> Row {
        Row {
            name: name.into(),
            value: "error".into(),
            bound: String::new(),
            pass: false,
            note: Some(why.to_string()),
        }
    }
}

fn sin_pi(x: Var<'_, f64>) -> Var<'_, f64> {
    x.scale(std::f64::consts::PI).sin()
}

pub fn run(e33: Option<f64>, rho: Option<f64>, fdm_nx: &[usize], seed: u64) -> Result<ExitCode> {
    let base = MaterialParameters::default();
    let mat = MaterialParameters::new(
        rho.unwrap_or(base.rho),
        base.c_e,
        e33.unwrap_or(base.e33),
        base.eps_s,
        base.eps0,
    )?;
    let mut rows = Vec::new();

    rows.push(Row::below("consistency defect", mat.consistency_defect(), 1e-12));
    rows.push(Row::below(
        "manufactured residual, 50x50 grid",
        manufactured_residual_max(&mat, 50),
        1e-10,
    ));

    // the standing wave lies on the eigenvector (2, 1) with eigenvalue 1
    let a = mat.system_matrix();
    let image = [2.0 * a[0][0] + a[0][1], 2.0 * a[1][0] + a[1][1]];
    rows.push(Row::below(
        "|A (2,1) - (2,1)|",
        (image[0] - 2.0).hypot(image[1] - 1.0),
        1e-12,
    ));
    match mat.characteristics() {
        Ok(c) => rows.push(Row {
            name: "eigenvalues of A".into(),
            value: format!("{:.6}, {:.6}", c.eigenvalues[0], c.eigenvalues[1]),
            bound: "1, -4/3".into(),
            pass: (c.eigenvalues[0] - 1.0).abs() < 1e-12 && (c.eigenvalues[1] + 4.0 / 3.0).abs() < 1e-12,
            note: None,
        }),
        Err(e) => rows.push(Row::failed("eigenvalues of A", e)),
    }

    for (name, order, h) in [
        ("d/dx tanh at 0.3", DerivativeOrder::First, 1e-5),
        ("d2/dx2 tanh at 0.3", DerivativeOrder::Second, 1e-4),
    ] {
        let d = finite_difference_check(|x| x.tanh(), 0.3, h, order)?;
        rows.push(Row::below(name, d, 1e-6));
    }
    for (name, order, h) in [
        ("d/dx sin(pi x) at 0.25", DerivativeOrder::First, 1e-5),
        ("d2/dx2 sin(pi x) at 0.25", DerivativeOrder::Second, 1e-4),
    ] {
        let d = finite_difference_check(sin_pi, 0.25, h, order)?;
        rows.push(Row::below(name, d, 1e-6));
    }

    let net = NetworkParameters::<f64>::init(NetworkConfig::DESK, seed)?;
    let inputs = input_derivative_check(&net, &interior_points(100, seed ^ 1))?;
    rows.push(Row::below(
        format!("4x64 input derivatives ({} values, worst {})", inputs.compared, inputs.worst),
        inputs.max_discrepancy,
        1e-5,
    ));
    let params = curvature_gradient_check(&net, &interior_points(4, seed ^ 2), 20, seed ^ 3)?;
    rows.push(Row::below(
        format!("d/dtheta mean(u_xx^2) ({} parameters)", params.compared),
        params.max_discrepancy,
        1e-4,
    ));

    match convergence_study(&mat, fdm_nx) {
        Ok(study) => {
            for r in &study {
                rows.push(Row::below(
                    format!("FDM nx={} unstable mode", r.nx),
                    r.max_unstable_amplitude,
                    UNSTABLE_LIMIT,
                ));
                if let Some(ratio) = r.ratio {
                    rows.push(Row {
                        name: format!("FDM nx={} error ratio (error {:.3e})", r.nx, r.max_error),
                        value: format!("{ratio:.3}"),
                        bound: "[3.5, 4.5]".into(),
                        pass: (3.5..=4.5).contains(&ratio),
                        note: None,
                    });
                }
            }
        }
        Err(e) => rows.push(Row::failed("FDM convergence", e)),
    }

    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0);
    let value_w = rows.iter().map(|r| r.value.len()).max().unwrap_or(0);
    for r in &rows {
        println!(
            "{:<name_w$}  {:>value_w$}  {:<10}  {}",
            r.name,
            r.value,
            r.bound,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    for r in &rows {
        if let Some(note) = &r.note {
            println!("{}: {note}", r.name);
        }
    }
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed == 0 {
        println!("all {} checks passed", rows.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("{failed} of {} checks failed", rows.len());
        Ok(ExitCode::FAILURE)
    }
}
