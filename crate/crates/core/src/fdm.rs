//! Finite-difference reference solver on characteristic variables.
//!
//! With both residuals set to zero the system reads `(u, phi)_tt = A (u, phi)_xx`.
//! Diagonalizing `A = V diag(lambda) V^-1` splits it into scalar equations
//! `w_tt = lambda w_xx` for `w = V^-1 (u, phi)`. Modes with `lambda > 0` are
//! waves and are advanced with the three-level central scheme. A mode with
//! `lambda <= 0` grows without bound at every wavenumber, so it must start at
//! zero and stay there; its amplitude is tracked and any excursion above
//! [`UNSTABLE_LIMIT`] is reported as [`Error::OracleIntegrity`].

use std::io::Write;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::evaluator::{predict_points, relative_l2, uniform_grid, ExactModel, FieldModel};
use crate::physics::{exact_solution, MaterialParameters};

/// Largest tolerated amplitude of a non-propagating mode.
pub const UNSTABLE_LIMIT: f64 = 1e-6;
/// Courant number target for the fastest wave mode.
pub const CFL_TARGET: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct FdmSolution {
    pub nx: usize,
    pub nt: usize,
    pub x: Vec<f64>,
    pub t: Vec<f64>,
    /// Indexed `[x, t]`, matching the evaluator's error grids.
    pub u: Array2<f64>,
    pub phi: Array2<f64>,
    pub dx: f64,
    /// Internal time step.
    pub dt: f64,
    /// Internal steps per output interval.
    pub substeps: usize,
    /// Courant number `sqrt(lambda_max) dt / dx` of the fastest wave mode.
    pub cfl: f64,
    pub eigenvalues: [f64; 2],
    /// Largest magnitude reached by a non-propagating mode.
    pub max_unstable_amplitude: f64,
    /// Discrete energy of each wave mode, one entry per internal step.
    pub energy: Vec<Vec<f64>>,
}

/// Solves from the closed-form initial data `u = sin(pi x)`, `phi = sin(pi x) / 2`.
pub fn solve_fdm(mat: &MaterialParameters, nx: usize, nt: usize) -> Result<FdmSolution> {
    if !mat.is_consistent() {
        return Err(Error::Parameter(format!(
            "reference solution requires consistent parameters (defect {:e})",
            mat.consistency_defect()
        )));
    }
    solve_fdm_from(mat, nx, nt, |x| {
        let f = exact_solution(x, 0.0);
        (f.u, f.phi)
    })
}

/// Solves from arbitrary initial displacement and potential with zero initial velocity.
pub fn solve_fdm_from(
    mat: &MaterialParameters,
    nx: usize,
    nt: usize,
    initial: impl Fn(f64) -> (f64, f64),
) -> Result<FdmSolution> {
    if nx < 3 || nt < 3 {
        return Err(Error::Config(format!("FDM grid needs nx, nt >= 3 (got {nx} x {nt})")));
    }
    mat.validate()?;
    let ch = mat.characteristics()?;
    let lambda = ch.eigenvalues;
    let x = uniform_grid(nx);
    let t = uniform_grid(nt);
    let dx = x[1];
    let dt_out = t[1];
    let fastest = lambda.iter().cloned().fold(0.0, f64::max);
    let substeps = if fastest > 0.0 {
        ((dt_out * fastest.sqrt() / (CFL_TARGET * dx)).ceil() as usize).max(1)
    } else {
        1
    };
    let dt = dt_out / substeps as f64;
    let cfl = fastest.sqrt() * dt / dx;

    // characteristic initial data, Dirichlet ends pinned
    let mut w0 = [vec![0.0; nx], vec![0.0; nx]];
    for i in 1..nx - 1 {
        let (u, p) = initial(x[i]);
        for m in 0..2 {
            w0[m][i] = ch.left[m][0] * u + ch.left[m][1] * p;
        }
    }
    let mut max_unstable: f64 = 0.0;
    for m in 0..2 {
        if lambda[m] <= 0.0 {
            let scale = (0..nx)
                .map(|i| {
                    let (u, p) = initial(x[i]);
                    ch.left[m][0].abs() * u.abs() + ch.left[m][1].abs() * p.abs()
                })
                .fold(0.0, f64::max);
            // projection residue at rounding level is exactly zero in exact arithmetic
            let floor = 16.0 * f64::EPSILON * scale;
            for v in w0[m].iter_mut() {
                if v.abs() <= floor {
                    *v = 0.0;
                }
            }
            max_unstable = max_unstable.max(w0[m].iter().fold(0.0, |a, v| a.max(v.abs())));
        }
    }
    if max_unstable > UNSTABLE_LIMIT {
        return Err(Error::OracleIntegrity {
            step: 0,
            amplitude: max_unstable,
        });
    }

    let r2 = (dt / dx).powi(2);
    let laplace = |w: &[f64], i: usize| w[i + 1] - 2.0 * w[i] + w[i - 1];
    let mut prev = w0.clone();
    let mut cur = w0.clone();
    for m in 0..2 {
        for i in 1..nx - 1 {
            cur[m][i] = prev[m][i] + 0.5 * lambda[m] * r2 * laplace(&prev[m], i);
        }
    }

    let mut u = Array2::zeros((nx, nt));
    let mut phi = Array2::zeros((nx, nt));
    let store = |w: &[Vec<f64>; 2], j: usize, u: &mut Array2<f64>, phi: &mut Array2<f64>| {
        for i in 1..nx - 1 {
            u[[i, j]] = ch.right[0][0] * w[0][i] + ch.right[0][1] * w[1][i];
            phi[[i, j]] = ch.right[1][0] * w[0][i] + ch.right[1][1] * w[1][i];
        }
    };
    store(&prev, 0, &mut u, &mut phi);

    let energy_of = |a: &[f64], b: &[f64], lam: f64| -> f64 {
        let mut e = 0.0;
        for i in 0..nx - 1 {
            let vel = (b[i] - a[i]) / dt;
            let grad = (b[i + 1] - b[i]) * (a[i + 1] - a[i]) / (dx * dx);
            e += (vel * vel + lam * grad) * dx;
        }
        0.5 * e
    };
    let wave_modes: Vec<usize> = (0..2).filter(|&m| lambda[m] > 0.0).collect();
    let mut energy: Vec<Vec<f64>> = vec![Vec::new(); 2];
    for &m in &wave_modes {
        energy[m].push(energy_of(&prev[m], &cur[m], lambda[m]));
    }

    let total_steps = substeps * (nt - 1);
    let mut next = [vec![0.0; nx], vec![0.0; nx]];
    for step in 1..=total_steps {
        if step % substeps == 0 {
            store(&cur, step / substeps, &mut u, &mut phi);
        }
        if step == total_steps {
            break;
        }
        for m in 0..2 {
            let c = lambda[m] * r2;
            for i in 1..nx - 1 {
                next[m][i] = 2.0 * cur[m][i] - prev[m][i] + c * laplace(&cur[m], i);
            }
            if lambda[m] <= 0.0 {
                let amp = next[m].iter().fold(0.0, |a: f64, v| a.max(v.abs()));
                max_unstable = max_unstable.max(amp);
                if amp > UNSTABLE_LIMIT || !amp.is_finite() {
                    return Err(Error::OracleIntegrity {
                        step,
                        amplitude: amp,
                    });
                }
            }
        }
        for &m in &wave_modes {
            energy[m].push(energy_of(&cur[m], &next[m], lambda[m]));
        }
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
    }

    Ok(FdmSolution {
        nx,
        nt,
        x,
        t,
        u,
        phi,
        dx,
        dt,
        substeps,
        cfl,
        eigenvalues: lambda,
        max_unstable_amplitude: max_unstable,
        energy,
    })
}

impl FdmSolution {
    fn points(&self) -> (Vec<f64>, Vec<f64>) {
        let mut xs = Vec::with_capacity(self.nx * self.nt);
        let mut ts = Vec::with_capacity(self.nx * self.nt);
        for &x in &self.x {
            for &t in &self.t {
                xs.push(x);
                ts.push(t);
            }
        }
        (xs, ts)
    }

    /// Largest pointwise deviation of `(u, phi)` from the closed-form solution.
    pub fn max_error_vs_exact(&self) -> (f64, f64) {
        let mut eu: f64 = 0.0;
        let mut ep: f64 = 0.0;
        for (i, &x) in self.x.iter().enumerate() {
            for (j, &t) in self.t.iter().enumerate() {
                let f = exact_solution(x, t);
                eu = eu.max((self.u[[i, j]] - f.u).abs());
                ep = ep.max((self.phi[[i, j]] - f.phi).abs());
            }
        }
        (eu, ep)
    }

    /// Largest relative drift of a wave mode's energy from its initial value.
    pub fn energy_drift(&self, mode: usize) -> Option<f64> {
        let e = &self.energy[mode];
        let e0 = *e.first()?;
        Some(e.iter().map(|v| ((v - e0) / e0).abs()).fold(0.0, f64::max))
    }

    /// Writes `x,t,abs_err_u,abs_err_phi` with errors of `model` measured against this solution.
    pub fn write_errors_csv<M: FieldModel + ?Sized>(&self, model: &M, mut w: impl Write) -> Result<()> {
        let (xs, ts) = self.points();
        let (u, phi) = predict_points(model, &xs, &ts);
        writeln!(w, "x,t,abs_err_u,abs_err_phi")?;
        for k in 0..xs.len() {
            let (i, j) = (k / self.nt, k % self.nt);
            writeln!(
                w,
                "{},{},{:e},{:e}",
                xs[k],
                ts[k],
                (u[k] - self.u[[i, j]]).abs(),
                (phi[k] - self.phi[[i, j]]).abs()
            )?;
        }
        Ok(())
    }
}

/// Relative L2 errors of gridded fields against the FDM solution.
pub fn compare_fdm_grids(fdm: &FdmSolution, u: &Array2<f64>, phi: &Array2<f64>) -> Result<(f64, f64)> {
    let shape = (fdm.nx, fdm.nt);
    if u.dim() != shape || phi.dim() != shape {
        return Err(Error::Shape(format!(
            "grids {:?} / {:?} do not match the FDM grid {shape:?}",
            u.dim(),
            phi.dim()
        )));
    }
    let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
    Ok((
        relative_l2(&flat(u), &flat(&fdm.u))?,
        relative_l2(&flat(phi), &flat(&fdm.phi))?,
    ))
}

/// Relative L2 errors of a model against the FDM solution on the FDM grid.
pub fn compare_fdm_pinn<M: FieldModel + ?Sized>(fdm: &FdmSolution, model: &M) -> Result<(f64, f64)> {
    let (xs, ts) = fdm.points();
    let (u, phi) = predict_points(model, &xs, &ts);
    let grid = |v: Vec<f64>| Array2::from_shape_vec((fdm.nx, fdm.nt), v).expect("grid shape");
    compare_fdm_grids(fdm, &grid(u), &grid(phi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub nx: usize,
    pub nt: usize,
    pub max_error: f64,
    /// Error of the previous (coarser) row divided by this one.
    pub ratio: Option<f64>,
    pub max_unstable_amplitude: f64,
}

/// Refines with `nt = 2 nx - 1`, which keeps `dt / dx` fixed.
pub fn convergence_study(mat: &MaterialParameters, nxs: &[usize]) -> Result<Vec<ConvergenceRow>> {
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(nxs.len());
    for &nx in nxs {
        let nt = 2 * nx - 1;
        let sol = solve_fdm(mat, nx, nt)?;
        let (eu, ep) = sol.max_error_vs_exact();
        let max_error = eu.max(ep);
        let ratio = rows.last().map(|r| r.max_error / max_error);
        rows.push(ConvergenceRow {
            nx,
            nt,
            max_error,
            ratio,
            max_unstable_amplitude: sol.max_unstable_amplitude,
        });
    }
    Ok(rows)
}

/// Exact-solution comparison on an FDM grid, used as a sanity reference.
pub fn exact_vs_fdm(fdm: &FdmSolution) -> Result<(f64, f64)> {
    compare_fdm_pinn(fdm, &ExactModel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluator::ScaledExact;

    #[test]
    fn accuracy_at_reference_resolution() {
        let sol = solve_fdm(&MaterialParameters::default(), 101, 201).unwrap();
        let (eu, ep) = sol.max_error_vs_exact();
        assert!(eu < 1e-3 && ep < 1e-3, "{eu} {ep}");
        assert!(sol.cfl <= 1.0 && sol.cfl > 0.0);
        assert_eq!(sol.max_unstable_amplitude, 0.0);
        assert!((sol.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((sol.eigenvalues[1] + 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_rows_are_zero() {
        let sol = solve_fdm(&MaterialParameters::default(), 21, 41).unwrap();
        for j in 0..sol.nt {
            for i in [0, sol.nx - 1] {
                assert_eq!(sol.u[[i, j]], 0.0);
                assert_eq!(sol.phi[[i, j]], 0.0);
            }
        }
    }

    #[test]
    fn second_order_convergence() {
        let rows = convergence_study(&MaterialParameters::default(), &[51, 101, 201]).unwrap();
        for r in &rows[1..] {
            let ratio = r.ratio.unwrap();
            assert!((3.5..=4.5).contains(&ratio), "nx {} ratio {ratio}", r.nx);
        }
        assert!(rows.iter().all(|r| r.max_unstable_amplitude < UNSTABLE_LIMIT));
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let sol = solve_fdm_from(&MaterialParameters::default(), 11, 11, |_| (0.0, 0.0)).unwrap();
        assert!(sol.u.iter().chain(sol.phi.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn contaminated_data_is_detected() {
        let err = solve_fdm_from(&MaterialParameters::default(), 41, 41, |x| ((std::f64::consts::PI * x).sin(), 0.0))
            .unwrap_err();
        assert!(matches!(err, Error::OracleIntegrity { .. }), "{err}");
        let tiny = solve_fdm_from(&MaterialParameters::default(), 41, 81, |x| {
            let s = (std::f64::consts::PI * x).sin();
            (s, 0.5 * s + 1e-9 * s)
        });
        assert!(matches!(tiny, Err(Error::OracleIntegrity { step, .. }) if step > 0));
    }

    #[test]
    fn inconsistent_parameters_are_rejected() {
        let m = MaterialParameters {
            e33: -0.9,
            ..MaterialParameters::default()
        };
        assert!(matches!(solve_fdm(&m, 11, 11), Err(Error::Parameter(_))));
        assert!(matches!(solve_fdm(&MaterialParameters::default(), 2, 11), Err(Error::Config(_))));
    }

    #[test]
    fn wave_mode_energy_is_conserved() {
        let sol = solve_fdm(&MaterialParameters::default(), 201, 401).unwrap();
        let drift = sol.energy_drift(0).unwrap();
        assert!(drift < 0.01, "{drift}");
        assert!(sol.energy[1].is_empty());
    }

    #[test]
    fn comparisons() {
        let sol = solve_fdm(&MaterialParameters::default(), 101, 201).unwrap();
        assert_eq!(compare_fdm_grids(&sol, &sol.u, &sol.phi).unwrap(), (0.0, 0.0));
        let (ru, rp) = exact_vs_fdm(&sol).unwrap();
        assert!(ru < 1e-3 && rp < 1e-3);
        let (su, _) = compare_fdm_pinn(&sol, &ScaledExact(1.1)).unwrap();
        assert!((su - 0.1).abs() < 2e-3);
        let small = Array2::zeros((3, 3));
        assert!(matches!(compare_fdm_grids(&sol, &small, &small), Err(Error::Shape(_))));
        let mut buf = Vec::new();
        let coarse = solve_fdm(&MaterialParameters::default(), 5, 5).unwrap();
        coarse.write_errors_csv(&ExactModel, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 26);
    }
}
