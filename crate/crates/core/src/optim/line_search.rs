//! Bracket-and-zoom line search for the strong Wolfe conditions
//!
//! ```text
//! f(a) <= f(0) + c1 a f'(0)        (sufficient decrease)
//! |f'(a)| <= c2 |f'(0)|            (curvature)
//! ```
//!
//! Trial steps come from safeguarded cubic interpolation of the two most
//! informative points, falling back to bisection.

use crate::error::{Error, Result};
use crate::real::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub c1: f64,
    pub c2: f64,
    /// Maximum number of function evaluations per search.
    pub max_evals: usize,
}

impl Default for LineSearchConfig {
    fn default() -> Self {
        LineSearchConfig {
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchStatus {
    Accepted,
    BudgetExhausted,
    IntervalCollapsed,
}

#[derive(Debug, Clone)]
pub struct LineSearchOutcome<T, P> {
    pub status: LineSearchStatus,
    pub alpha: T,
    pub value: T,
    pub slope: T,
    /// Whatever the objective returned alongside the accepted point.
    pub payload: Option<P>,
    pub evaluations: usize,
}

impl<T, P> LineSearchOutcome<T, P> {
    pub fn accepted(&self) -> bool {
        self.status == LineSearchStatus::Accepted
    }
}

#[derive(Clone, Copy)]
struct Trial<T> {
    alpha: T,
    value: T,
    slope: T,
}

/// Minimizer of the cubic through two points with slopes, if it exists.
fn cubic_minimizer<T: Real>(a: Trial<T>, b: Trial<T>) -> Option<T> {
    let three = lit::<T>(3.0);
    let two = lit::<T>(2.0);
    let d1 = a.slope + b.slope - three * (a.value - b.value) / (a.alpha - b.alpha);
    let sq = d1 * d1 - a.slope * b.slope;
    if !(sq >= T::zero()) {
        return None;
    }
    let d2 = sq.sqrt() * (b.alpha - a.alpha).signum();
    let x = b.alpha - (b.alpha - a.alpha) * ((b.slope + d2 - d1) / (b.slope - a.slope + two * d2));
    x.is_finite().then_some(x)
}

/// Finds a step satisfying the strong Wolfe conditions along a line.
///
/// `phi(alpha)` returns `(value, directional derivative, payload)`. The
/// directional derivative at zero must be negative.
pub fn strong_wolfe<T, P, F>(
    mut phi: F,
    f0: T,
    d0: T,
    initial_step: T,
    cfg: &LineSearchConfig,
) -> Result<LineSearchOutcome<T, P>>
where
    T: Real,
    F: FnMut(T) -> Result<(T, T, P)>,
{
    if !(d0 < T::zero()) {
        return Err(Error::NotDescent(d0.as_f64()));
    }
    let c1 = lit::<T>(cfg.c1);
    let c2 = lit::<T>(cfg.c2);
    let sufficient = |a: T, f: T| f <= f0 + c1 * a * d0;
    let curvature = |d: T| d.abs() <= -c2 * d0;
    let failed = |status, evaluations| LineSearchOutcome {
        status,
        alpha: T::zero(),
        value: f0,
        slope: d0,
        payload: None,
        evaluations,
    };

    let mut evals = 0usize;
    let mut prev = Trial {
        alpha: T::zero(),
        value: f0,
        slope: d0,
    };
    let mut alpha = initial_step;

    // bracketing phase
    let (mut lo, mut hi) = loop {
        if evals >= cfg.max_evals {
            return Ok(failed(LineSearchStatus::BudgetExhausted, evals));
        }
        let (f, d, payload) = phi(alpha)?;
        evals += 1;
        let cur = Trial {
            alpha,
            value: f,
            slope: d,
        };
        if !f.is_finite() || !sufficient(alpha, f) || (evals > 1 && f >= prev.value) {
            break (prev, cur);
        }
        if curvature(d) {
            return Ok(LineSearchOutcome {
                status: LineSearchStatus::Accepted,
                alpha,
                value: f,
                slope: d,
                payload: Some(payload),
                evaluations: evals,
            });
        }
        if d >= T::zero() {
            break (cur, prev);
        }
        let lower = alpha + lit::<T>(0.01) * (alpha - prev.alpha);
        let upper = alpha * lit::<T>(10.0);
        let next = match cubic_minimizer(prev, cur) {
            Some(x) => x.max(lower).min(upper),
            None => lit::<T>(0.5) * (lower + upper),
        };
        prev = cur;
        alpha = next;
    };

    // zoom phase: lo always satisfies sufficient decrease and has the lower value
    loop {
        if evals >= cfg.max_evals {
            return Ok(failed(LineSearchStatus::BudgetExhausted, evals));
        }
        let width = (hi.alpha - lo.alpha).abs();
        if width <= T::epsilon() * lo.alpha.abs().max(hi.alpha.abs()).max(T::epsilon()) {
            return Ok(failed(LineSearchStatus::IntervalCollapsed, evals));
        }
        let (left, right) = if lo.alpha < hi.alpha {
            (lo.alpha, hi.alpha)
        } else {
            (hi.alpha, lo.alpha)
        };
        let margin = lit::<T>(0.1) * width;
        let alpha = match hi.value.is_finite().then(|| cubic_minimizer(lo, hi)).flatten() {
            Some(x) if x > left + margin && x < right - margin => x,
            _ => lit::<T>(0.5) * (left + right),
        };
        let (f, d, payload) = phi(alpha)?;
        evals += 1;
        let cur = Trial {
            alpha,
            value: f,
            slope: d,
        };
        if !f.is_finite() || !sufficient(alpha, f) || f >= lo.value {
            hi = cur;
        } else {
            if curvature(d) {
                return Ok(LineSearchOutcome {
                    status: LineSearchStatus::Accepted,
                    alpha,
                    value: f,
                    slope: d,
                    payload: Some(payload),
                    evaluations: evals,
                });
            }
            if d * (hi.alpha - lo.alpha) >= T::zero() {
                hi = lo;
            }
            lo = cur;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(a: f64) -> Result<(f64, f64, ())> {
        Ok(((a - 1.0).powi(2), 2.0 * (a - 1.0), ()))
    }

    fn check_wolfe(out: &LineSearchOutcome<f64, ()>, f0: f64, d0: f64, cfg: &LineSearchConfig) {
        assert!(out.accepted());
        assert!(out.value <= f0 + cfg.c1 * out.alpha * d0);
        assert!(out.slope.abs() <= cfg.c2 * d0.abs());
    }

    #[test]
    fn quadratic_line_accepts_near_minimum() {
        let cfg = LineSearchConfig::default();
        for init in [1.0, 0.1, 5.0, 30.0] {
            let out = strong_wolfe(quad, 1.0, -2.0, init, &cfg).unwrap();
            check_wolfe(&out, 1.0, -2.0, &cfg);
            assert!((out.alpha - 1.0).abs() < 0.95, "init {init}: {}", out.alpha);
        }
        let tight = LineSearchConfig { c2: 0.1, ..cfg };
        let out = strong_wolfe(quad, 1.0, -2.0, 0.01, &tight).unwrap();
        check_wolfe(&out, 1.0, -2.0, &tight);
        assert!((out.alpha - 1.0).abs() <= 0.1);
    }

    #[test]
    fn non_descent_direction_is_rejected() {
        let cfg = LineSearchConfig::default();
        let err = strong_wolfe(quad, 1.0, 2.0, 1.0, &cfg).unwrap_err();
        assert!(matches!(err, Error::NotDescent(_)));
        assert!(strong_wolfe(quad, 1.0, 0.0, 1.0, &cfg).is_err());
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        // slope claims descent but the function only increases
        let cfg = LineSearchConfig {
            max_evals: 4,
            ..LineSearchConfig::default()
        };
        let out = strong_wolfe(|a: f64| Ok((1.0 + a, 1.0, ())), 1.0, -1.0, 1.0, &cfg).unwrap();
        assert!(!out.accepted());
        assert_eq!(out.alpha, 0.0);
    }

    #[test]
    fn non_finite_trial_is_backtracked() {
        let cfg = LineSearchConfig::default();
        let phi = |a: f64| {
            if a > 2.0 {
                Ok((f64::NAN, f64::NAN, ()))
            } else {
                quad(a)
            }
        };
        let out = strong_wolfe(phi, 1.0, -2.0, 50.0, &cfg).unwrap();
        check_wolfe(&out, 1.0, -2.0, &cfg);
    }
}
