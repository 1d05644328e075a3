//! Central-difference audits of network derivatives, shared by the test
//! suite and the `verify` command.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{batched_grad, DISCREPANCY_FLOOR, GradientVector, Graph};
use crate::error::{Error, Result};
use crate::model::NetworkParameters;

/// Worst discrepancy over a set of derivative comparisons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckSummary {
    pub compared: usize,
    pub max_discrepancy: f64,
    /// Label of the derivative with the worst discrepancy.
    pub worst: &'static str,
}

impl CheckSummary {
    fn new() -> Self {
        CheckSummary {
            compared: 0,
            max_discrepancy: 0.0,
            worst: "",
        }
    }

    fn add(&mut self, label: &'static str, discrepancy: f64) {
        self.compared += 1;
        // NaN must surface as a failure
        if discrepancy.is_nan() || discrepancy > self.max_discrepancy {
            self.max_discrepancy = discrepancy;
            self.worst = label;
        }
    }
}

/// `n` points drawn uniformly from the open unit square.
pub fn interior_points(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.random_range(0.05..0.95), rng.random_range(0.05..0.95)))
        .collect()
}

/// First and second `x`/`t` derivatives of both constrained outputs against
/// central differences of [`NetworkParameters::predict`]. Discrepancies use
/// the same floored relative measure as
/// [`finite_difference_check`](crate::autodiff::finite_difference_check).
pub fn input_derivative_check(params: &NetworkParameters<f64>, points: &[(f64, f64)]) -> Result<CheckSummary> {
    if points.is_empty() {
        return Err(Error::Config("no points to check".into()));
    }
    let (h1, h2) = (1e-5, 1e-4);
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ts: Vec<f64> = points.iter().map(|p| p.1).collect();

    let g = Graph::new();
    let pv = params.register(&g, false);
    let (x, t) = (g.column_leaf(&xs), g.column_leaf(&ts));
    let out = pv.forward(x, t);
    let mut autodiff = Vec::new();
    for (name, y) in [("u", out.u), ("phi", out.phi)] {
        let d = batched_grad(y, &[x, t], true)?;
        let dxx = batched_grad(d[0], &[x], false)?[0];
        let dtt = batched_grad(d[1], &[t], false)?[0];
        autodiff.push((name, [d[0].value(), d[1].value(), dxx.value(), dtt.value()]));
    }

    let shifted = |dx: f64, dt: f64| {
        let sx: Vec<f64> = xs.iter().map(|v| v + dx).collect();
        let st: Vec<f64> = ts.iter().map(|v| v + dt).collect();
        params.predict(&sx, &st)
    };
    let centre = shifted(0.0, 0.0);
    let (xp1, xm1) = (shifted(h1, 0.0), shifted(-h1, 0.0));
    let (tp1, tm1) = (shifted(0.0, h1), shifted(0.0, -h1));
    let (xp2, xm2) = (shifted(h2, 0.0), shifted(-h2, 0.0));
    let (tp2, tm2) = (shifted(0.0, h2), shifted(0.0, -h2));
    let pick = |pair: &(Vec<f64>, Vec<f64>), k: usize| if k == 0 { pair.0.clone() } else { pair.1.clone() };

    let mut summary = CheckSummary::new();
    for (k, (name, ad)) in autodiff.iter().enumerate() {
        let (c, xp1, xm1, tp1, tm1) = (pick(&centre, k), pick(&xp1, k), pick(&xm1, k), pick(&tp1, k), pick(&tm1, k));
        let (xp2, xm2, tp2, tm2) = (pick(&xp2, k), pick(&xm2, k), pick(&tp2, k), pick(&tm2, k));
        let labels: [&'static str; 4] = if *name == "u" {
            ["u_x", "u_t", "u_xx", "u_tt"]
        } else {
            ["phi_x", "phi_t", "phi_xx", "phi_tt"]
        };
        for i in 0..points.len() {
            let fd = [
                (xp1[i] - xm1[i]) / (2.0 * h1),
                (tp1[i] - tm1[i]) / (2.0 * h1),
                (xp2[i] - 2.0 * c[i] + xm2[i]) / (h2 * h2),
                (tp2[i] - 2.0 * c[i] + tm2[i]) / (h2 * h2),
            ];
            for j in 0..4 {
                let a = ad[j][[i, 0]];
                summary.add(labels[j], (a - fd[j]).abs() / a.abs().max(DISCREPANCY_FLOOR));
            }
        }
    }
    Ok(summary)
}

/// `L = mean((u_xx)^2)` over `points`, a third-order quantity in the parameters.
fn curvature_loss(params: &NetworkParameters<f64>, xs: &[f64], ts: &[f64]) -> Result<f64> {
    let g = Graph::new();
    let pv = params.register(&g, false);
    let (x, t) = (g.column_leaf(xs), g.column_leaf(ts));
    let u = pv.forward(x, t).u;
    let ux = batched_grad(u, &[x], true)?[0];
    let uxx = batched_grad(ux, &[x], false)?[0];
    Ok(uxx.value().mapv(|v| v * v).mean().unwrap_or(0.0))
}

/// Parameter gradient of `mean((u_xx)^2)` against central differences at
/// `count` randomly chosen parameters. Discrepancy is
/// `|ad - fd| / max(|ad|, 1e-6)`.
pub fn curvature_gradient_check(
    params: &NetworkParameters<f64>,
    points: &[(f64, f64)],
    count: usize,
    seed: u64,
) -> Result<CheckSummary> {
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ts: Vec<f64> = points.iter().map(|p| p.1).collect();
    let g = Graph::new();
    let pv = params.register(&g, true);
    let (x, t) = (g.column_leaf(&xs), g.column_leaf(&ts));
    let u = pv.forward(x, t).u;
    let ux = batched_grad(u, &[x], true)?[0];
    let uxx = batched_grad(ux, &[x], true)?[0];
    let loss = uxx.square().mean();
    let grads = g.grad(loss, &pv.all(), false)?;
    let ad = GradientVector::from_vars(&grads).entries;

    let flat = params.to_flat();
    let count = count.min(flat.len());
    let h = 1e-6;
    let mut summary = CheckSummary::new();
    for i in sample(&mut ChaCha8Rng::seed_from_u64(seed), flat.len(), count) {
        let mut plus = flat.clone();
        let mut minus = flat.clone();
        plus[i] += h;
        minus[i] -= h;
        let fp = curvature_loss(&params.with_flat(&plus)?, &xs, &ts)?;
        let fm = curvature_loss(&params.with_flat(&minus)?, &xs, &ts)?;
        let fd = (fp - fm) / (2.0 * h);
        summary.add("dL/dtheta", (ad[i] - fd).abs() / ad[i].abs().max(1e-6));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::NetworkConfig;

    #[test]
    fn random_network_input_derivatives_agree() {
        let p = NetworkParameters::<f64>::init(NetworkConfig::DESK, 3).unwrap();
        let s = input_derivative_check(&p, &interior_points(100, 4)).unwrap();
        assert_eq!(s.compared, 800);
        assert!(s.max_discrepancy < 1e-5, "{s:?}");
    }

    #[test]
    fn curvature_gradient_agrees() {
        let p = NetworkParameters::<f64>::init(NetworkConfig::DESK, 5).unwrap();
        let s = curvature_gradient_check(&p, &interior_points(4, 6), 20, 7).unwrap();
        assert_eq!(s.compared, 20);
        assert!(s.max_discrepancy < 1e-4, "{s:?}");
    }

    #[test]
    fn nan_discrepancy_fails_and_empty_input_is_rejected() {
        let p = NetworkParameters::<f64>::init(NetworkConfig { width: 4, hidden_layers: 1 }, 1).unwrap();
        let mut s = CheckSummary::new();
        s.add("a", 1e-9);
        s.add("b", f64::NAN);
        assert!(s.max_discrepancy.is_nan());
        assert!(input_derivative_check(&p, &[]).is_err());
    }
}
