//! Material constants, governing residuals, constitutive post-processing and
//! the closed-form standing-wave solution.
//!
//! All quantities are nondimensional on the unit space-time square.
//!
//! The residuals are
//!
//! ```text
//! r1 = rho u_tt - (c_E u_xx - e33 phi_xx)
//! r2 = eps0 phi_tt + e33 u_xx + eps0 phi_xx
//! ```
//!
//! with `eps0` (not `eps_S`) on `phi_xx`. Substituting
//! `u = sin(pi x) cos(pi t)`, `phi = u / 2` makes both vanish identically only
//! when `rho = c_E - e33/2` and `e33 = -eps0`; [`MaterialParameters::derive_consistent`]
//! enforces exactly that.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::model::FieldPair;
use crate::real::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParameters {
    pub rho: f64,
    pub c_e: f64,
    pub e33: f64,
    pub eps_s: f64,
    pub eps0: f64,
}

impl MaterialParameters {
    /// Validated constructor; does not require the manufactured-solution constraints.
    pub fn new(rho: f64, c_e: f64, e33: f64, eps_s: f64, eps0: f64) -> Result<Self> {
        let m = MaterialParameters {
            rho,
            c_e,
            e33,
            eps_s,
            eps0,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho", self.rho),
            ("c_E", self.c_e),
            ("eps_S", self.eps_s),
            ("eps0", self.eps0),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !self.e33.is_finite() {
            return Err(Error::Parameter(format!("e33 must be finite, got {}", self.e33)));
        }
        Ok(())
    }

    /// Completes `(c_E, eps0, eps_S)` so that the standing wave solves the residual
    /// equations exactly: `e33 = -eps0`, `rho = c_E - e33/2`.
    pub fn derive_consistent(c_e: f64, eps0: f64, eps_s: f64) -> Result<Self> {
        if !(c_e > 0.0) || !(eps0 > 0.0) {
            return Err(Error::Parameter(format!(
                "c_E and eps0 must be positive, got c_E={c_e}, eps0={eps0}"
            )));
        }
        let e33 = -eps0;
        let rho = c_e - 0.5 * e33;
        if !(rho > 0.0) {
            return Err(Error::Parameter(format!("derived density {rho} is not positive")));
        }
        Self::new(rho, c_e, e33, eps_s, eps0)
    }

    /// Largest violation of the two manufactured-solution constraints.
    pub fn consistency_defect(&self) -> f64 {
        let density = (self.rho - (self.c_e - 0.5 * self.e33)).abs();
        let coupling = (self.e33 + self.eps0).abs();
        density.max(coupling)
    }

    pub fn is_consistent(&self) -> bool {
        self.consistency_defect() <= 1e-12 * (1.0 + self.c_e.abs() + self.eps0.abs())
    }

    /// Matrix `A` with `(u, phi)_tt = A (u, phi)_xx` when both residuals vanish.
    pub fn system_matrix(&self) -> [[f64; 2]; 2] {
        [
            [self.c_e / self.rho, -self.e33 / self.rho],
            [-self.e33 / self.eps0, -1.0],
        ]
    }

    pub fn characteristics(&self) -> Result<Characteristics> {
        Characteristics::of(self.system_matrix())
    }
}

impl Default for MaterialParameters {
    /// `c_E = eps0 = eps_S = 1`, hence `e33 = -1`, `rho = 1.5`.
    fn default() -> Self {
        Self::derive_consistent(1.0, 1.0, 1.0).expect("default parameters are valid")
    }
}

/// Eigen-decomposition `A = V diag(lambda) V^-1` of a 2x2 system matrix with
/// real eigenvalues, ordered descending.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Characteristics {
    pub eigenvalues: [f64; 2],
    /// Columns are right eigenvectors.
    pub right: [[f64; 2]; 2],
    /// Inverse of `right`; rows are left eigenvectors.
    pub left: [[f64; 2]; 2],
}

impl Characteristics {
    pub fn of(a: [[f64; 2]; 2]) -> Result<Self> {
        let [[a11, a12], [a21, a22]] = a;
        let half_trace = 0.5 * (a11 + a22);
        let half_gap = 0.5 * (a11 - a22);
        let disc = half_gap * half_gap + a12 * a21;
        if disc < 0.0 {
            return Err(Error::Parameter(format!(
                "system matrix has complex eigenvalues (discriminant {disc})"
            )));
        }
        let root = disc.sqrt();
        let eigenvalues = [half_trace + root, half_trace - root];
        let vector = |lambda: f64| -> [f64; 2] {
            // two candidate null vectors of (A - lambda I); take the better conditioned one
            let p = [a12, lambda - a11];
            let q = [lambda - a22, a21];
            let (np, nq) = (p[0].hypot(p[1]), q[0].hypot(q[1]));
            if np == 0.0 && nq == 0.0 {
                return [1.0, 0.0];
            }
            if nq >= np {
                [q[0] / nq, q[1] / nq]
            } else {
                [p[0] / np, p[1] / np]
            }
        };
        let mut v1 = vector(eigenvalues[0]);
        let mut v2 = vector(eigenvalues[1]);
        if root == 0.0 {
            // repeated eigenvalue of a diagonal matrix
            v1 = [1.0, 0.0];
            v2 = [0.0, 1.0];
        }
        let right = [[v1[0], v2[0]], [v1[1], v2[1]]];
        let det = right[0][0] * right[1][1] - right[0][1] * right[1][0];
        if det.abs() < 1e-14 {
            return Err(Error::Parameter("system matrix is not diagonalizable".into()));
        }
        let left = [
            [right[1][1] / det, -right[0][1] / det],
            [-right[1][0] / det, right[0][0] / det],
        ];
        Ok(Characteristics {
            eigenvalues,
            right,
            left,
        })
    }
}

/// `u = sin(pi x) cos(pi t)`, `phi = 0.5 sin(pi x) cos(pi t)`.
pub fn exact_solution<T: Real>(x: T, t: T) -> FieldPair<T> {
    let u = (T::PI() * x).sin() * (T::PI() * t).cos();
    FieldPair {
        u,
        phi: lit::<T>(0.5) * u,
    }
}

/// Graph form of [`exact_solution`].
pub fn exact_solution_var<'g, T: Real>(x: Var<'g, T>, t: Var<'g, T>) -> FieldPair<Var<'g, T>> {
    let u = x.scale(T::PI()).sin() * t.scale(T::PI()).cos();
    FieldPair {
        u,
        phi: u.scale(lit(0.5)),
    }
}

/// Second derivatives entering the residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SecondDerivatives<V> {
    pub u_xx: V,
    pub u_tt: V,
    pub phi_xx: V,
    pub phi_tt: V,
}

/// Analytic second derivatives of the exact solution.
pub fn exact_second_derivatives(x: f64, t: f64) -> SecondDerivatives<f64> {
    let pi2 = std::f64::consts::PI * std::f64::consts::PI;
    let u = exact_solution(x, t).u;
    SecondDerivatives {
        u_xx: -pi2 * u,
        u_tt: -pi2 * u,
        phi_xx: -0.5 * pi2 * u,
        phi_tt: -0.5 * pi2 * u,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPair<V> {
    /// Elastodynamic residual.
    pub r1: V,
    /// Electrodynamic residual.
    pub r2: V,
}

pub fn residual_values<T: Real>(d: SecondDerivatives<T>, mat: &MaterialParameters) -> ResidualPair<T> {
    let (rho, c_e, e33, eps0) = (lit::<T>(mat.rho), lit::<T>(mat.c_e), lit::<T>(mat.e33), lit::<T>(mat.eps0));
    ResidualPair {
        r1: rho * d.u_tt - (c_e * d.u_xx - e33 * d.phi_xx),
        r2: eps0 * d.phi_tt + e33 * d.u_xx + eps0 * d.phi_xx,
    }
}

pub fn residuals<'g, T: Real>(
    d: SecondDerivatives<Var<'g, T>>,
    mat: &MaterialParameters,
) -> ResidualPair<Var<'g, T>> {
    let (rho, c_e, e33, eps0) = (lit::<T>(mat.rho), lit::<T>(mat.c_e), lit::<T>(mat.e33), lit::<T>(mat.eps0));
    ResidualPair {
        r1: d.u_tt.scale(rho) - (d.u_xx.scale(c_e) - d.phi_xx.scale(e33)),
        r2: d.phi_tt.scale(eps0) + d.u_xx.scale(e33) + d.phi_xx.scale(eps0),
    }
}

/// Stress `sigma = c_E u_x - e33 phi_x` and electric displacement `D = e33 u_x + eps_S phi_x`.
pub fn constitutive<T: Real>(u_x: T, phi_x: T, mat: &MaterialParameters) -> (T, T) {
    let (c_e, e33, eps_s) = (lit::<T>(mat.c_e), lit::<T>(mat.e33), lit::<T>(mat.eps_s));
    (c_e * u_x - e33 * phi_x, e33 * u_x + eps_s * phi_x)
}

/// Largest `|r1|, |r2|` of the exact solution on an `n x n` grid including endpoints.
pub fn manufactured_residual_max(mat: &MaterialParameters, n: usize) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            let x = i as f64 / (n - 1) as f64;
            let t = j as f64 / (n - 1) as f64;
            let r = residual_values(exact_second_derivatives(x, t), mat);
            worst = worst.max(r.r1.abs()).max(r.r2.abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{batched_grad, Graph};
    use approx::assert_abs_diff_eq;

    #[test]
    fn exact_solution_examples() {
        assert_eq!(exact_solution(0.5, 0.0), FieldPair { u: 1.0, phi: 0.5 });
        for &x in &[0.0, 0.3, 0.9] {
            let f = exact_solution::<f64>(x, 0.5);
            assert!(f.u.abs() < 1e-16_f64 && f.phi.abs() < 1e-16_f64);
        }
        let f = exact_solution(0.25, 1.0);
        assert_abs_diff_eq!(f.u, -0.707_106_78, epsilon = 1e-8);
        assert_abs_diff_eq!(f.phi, -0.353_553_39, epsilon = 1e-8);
    }

    #[test]
    fn derived_parameters() {
        let m = MaterialParameters::derive_consistent(1.0, 1.0, 1.0).unwrap();
        assert_eq!(
            m,
            MaterialParameters {
                rho: 1.5,
                c_e: 1.0,
                e33: -1.0,
                eps_s: 1.0,
                eps0: 1.0
            }
        );
        let m = MaterialParameters::derive_consistent(2.0, 1.0, 1.0).unwrap();
        assert_eq!((m.rho, m.e33), (2.5, -1.0));
        assert!(m.is_consistent());
        assert!(MaterialParameters::derive_consistent(-1.0, 1.0, 1.0).is_err());
        assert!(MaterialParameters::new(0.0, 1.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn residual_examples() {
        let m = MaterialParameters::default();
        let zero = SecondDerivatives {
            u_xx: 0.0,
            u_tt: 0.0,
            phi_xx: 0.0,
            phi_tt: 0.0,
        };
        assert_eq!(residual_values(zero, &m), ResidualPair { r1: 0.0, r2: 0.0 });

        let d = exact_second_derivatives(0.3, 0.4);
        let r = residual_values(d, &m);
        assert!(r.r1.abs() < 1e-10 && r.r2.abs() < 1e-10);

        let perturbed = MaterialParameters { e33: m.e33 + 0.1, ..m };
        let r = residual_values(d, &perturbed);
        assert_abs_diff_eq!(r.r1, 0.1 * d.phi_xx, epsilon = 1e-12);
        assert!(r.r1.abs() > 1e-3);
    }

    #[test]
    fn manufactured_solution_zeroes_residuals_for_derived_parameters() {
        for (c, e0, es) in [(1.0, 1.0, 1.0), (2.0, 1.0, 1.0), (3.5, 0.25, 2.0)] {
            let m = MaterialParameters::derive_consistent(c, e0, es).unwrap();
            assert!(manufactured_residual_max(&m, 50) < 1e-10);
        }
    }

    #[test]
    fn residuals_from_autodiff_of_exact_solution_vanish() {
        let m = MaterialParameters::default();
        let g = Graph::new();
        let xs: Vec<f64> = (0..7).map(|i| 0.05 + 0.13 * i as f64).collect();
        let ts: Vec<f64> = (0..7).map(|i| 0.9 - 0.12 * i as f64).collect();
        let x = g.column_leaf(&xs);
        let t = g.column_leaf(&ts);
        let f = exact_solution_var(x, t);
        let du = batched_grad(f.u, &[x, t], true).unwrap();
        let dp = batched_grad(f.phi, &[x, t], true).unwrap();
        let d = SecondDerivatives {
            u_xx: batched_grad(du[0], &[x], true).unwrap()[0],
            u_tt: batched_grad(du[1], &[t], true).unwrap()[0],
            phi_xx: batched_grad(dp[0], &[x], true).unwrap()[0],
            phi_tt: batched_grad(dp[1], &[t], true).unwrap()[0],
        };
        let r = residuals(d, &m);
        assert!(r.r1.value().iter().chain(r.r2.value().iter()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn constitutive_examples() {
        let m = MaterialParameters::default();
        assert_eq!(constitutive(0.0, 0.0, &m), (0.0, 0.0));
        assert_eq!(constitutive(1.0, 0.0, &m), (1.0, -1.0));
        assert_eq!(constitutive(0.0, 1.0, &m), (1.0, 1.0));
    }

    #[test]
    fn eigenstructure_of_default_system() {
        let m = MaterialParameters::default();
        let ch = m.characteristics().unwrap();
        assert_abs_diff_eq!(ch.eigenvalues[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ch.eigenvalues[1], -4.0 / 3.0, epsilon = 1e-12);
        let a = m.system_matrix();
        let v = [2.0, 1.0];
        let av = [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]];
        assert_abs_diff_eq!(av[0], v[0], epsilon = 1e-12);
        assert_abs_diff_eq!(av[1], v[1], epsilon = 1e-12);
        // stable eigenvector is parallel to (2, 1)
        let r = ch.right;
        assert_abs_diff_eq!(r[0][0] - 2.0 * r[1][0], 0.0, epsilon = 1e-12);
        // left * right = I
        for i in 0..2 {
            for j in 0..2 {
                let p: f64 = (0..2).map(|k| ch.left[i][k] * ch.right[k][j]).sum();
                assert_abs_diff_eq!(p, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn exact_solution_meets_boundary_and_initial_conditions() {
        for k in 0..=20 {
            let s = k as f64 / 20.0;
            for x in [0.0, 1.0] {
                let f = exact_solution(x, s);
                assert!(f.u.abs() < 1e-15 && f.phi.abs() < 1e-15);
            }
            let f = exact_solution(s, 0.0);
            let sx = (std::f64::consts::PI * s).sin();
            assert_eq!(f.u, sx);
            assert_eq!(f.phi, 0.5 * sx);
        }
        // u_t(x, 0) = -pi sin(pi x) sin(0) = 0
        let g = Graph::new();
        let x = g.column_leaf(&[0.2, 0.5, 0.8]);
        let t = g.column_leaf(&[0.0, 0.0, 0.0]);
        let f = exact_solution_var(x, t);
        let ut = batched_grad(f.u, &[t], false).unwrap()[0].value();
        let pt = batched_grad(f.phi, &[t], false).unwrap()[0].value();
        assert!(ut.iter().chain(pt.iter()).all(|v: &f64| v.abs() < 1e-15));
    }
}
