//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! The inverse-Hessian product comes from the two-loop recursion over at most
//! `history` curvature pairs `(s, y)`, seeded with `H0 = (s'y / y'y) I` from
//! the newest pair. The very first step (and any step after the history is
//! reset) moves along `-g` with initial step length `1 / |g|`.

use std::collections::VecDeque;

use super::line_search::{strong_wolfe, LineSearchConfig, LineSearchStatus};
use crate::error::{Error, Result};
use crate::real::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    pub history: usize,
    pub grad_tol: f64,
    pub loss_tol: f64,
    pub line_search: LineSearchConfig,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            history: 80,
            grad_tol: 1e-10,
            loss_tol: 1e-10,
            line_search: LineSearchConfig::default(),
        }
    }
}

/// Objective value and gradient at a point, plus caller data.
#[derive(Debug, Clone)]
pub struct Evaluation<T, P> {
    pub value: T,
    pub grad: Vec<T>,
    pub extra: P,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfgsStatus {
    Continue,
    GradientTolerance,
    LossChangeTolerance,
    LineSearchFailure,
}

impl LbfgsStatus {
    pub fn converged(self) -> bool {
        self != LbfgsStatus::Continue
    }
}

/// Report of one [`LbfgsState::step`].
#[derive(Debug, Clone, Copy)]
pub struct LbfgsStep<T> {
    pub status: LbfgsStatus,
    /// Objective at the parameters held after the step.
    pub value: T,
    pub grad_norm: T,
    /// Accepted step length, if a step was taken.
    pub alpha: Option<T>,
    pub evaluations: usize,
}

impl<T> LbfgsStep<T> {
    pub fn converged(&self) -> bool {
        self.status.converged()
    }
}

pub struct LbfgsState<T, P = ()> {
    pub config: LbfgsConfig,
    pairs: VecDeque<(Vec<T>, Vec<T>, T)>,
    current: Option<Evaluation<T, P>>,
    /// Number of accepted steps.
    pub iterations: usize,
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

impl<T: Real, P> LbfgsState<T, P> {
    pub fn new(config: LbfgsConfig) -> Self {
        LbfgsState {
            config,
            pairs: VecDeque::with_capacity(config.history),
            current: None,
            iterations: 0,
        }
    }

    /// Evaluation at the current parameters, once one has been made.
    pub fn current(&self) -> Option<&Evaluation<T, P>> {
        self.current.as_ref()
    }

    /// Evaluates `params` unless an evaluation is already cached. The next
    /// [`LbfgsState::step`] reuses it.
    pub fn ensure_evaluated<F>(&mut self, params: &[T], loss_fn: &mut F) -> Result<&Evaluation<T, P>>
    where
        F: FnMut(&[T]) -> Result<Evaluation<T, P>>,
    {
        if self.current.is_none() {
            self.current = Some(Self::evaluate(params, loss_fn)?);
        }
        Ok(self.current.as_ref().expect("evaluated above"))
    }

    pub fn history_len(&self) -> usize {
        self.pairs.len()
    }

    /// Stored `(s, y)` pairs, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = (&[T], &[T])> {
        self.pairs.iter().map(|(s, y, _)| (s.as_slice(), y.as_slice()))
    }

    /// `-H g` by the two-loop recursion.
    fn direction(&self, g: &[T]) -> Vec<T> {
        let mut q = g.to_vec();
        let mut alphas = vec![T::zero(); self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let a = *rho * dot(s, &q);
            alphas[k] = a;
            q.iter_mut().zip(y).for_each(|(qi, &yi)| *qi -= a * yi);
        }
        let gamma = match self.pairs.back() {
            Some((s, y, _)) => dot(s, y) / dot(y, y),
            None => T::one(),
        };
        q.iter_mut().for_each(|v| *v *= gamma);
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let b = *rho * dot(y, &q);
            let c = alphas[k] - b;
            q.iter_mut().zip(s).for_each(|(ri, &si)| *ri += c * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    fn evaluate<F>(params: &[T], loss_fn: &mut F) -> Result<Evaluation<T, P>>
    where
        F: FnMut(&[T]) -> Result<Evaluation<T, P>>,
    {
        let e = loss_fn(params)?;
        if e.grad.len() != params.len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries for {} parameters",
                e.grad.len(),
                params.len()
            )));
        }
        Ok(e)
    }

    /// One quasi-Newton iteration. `loss_fn` must be deterministic.
    ///
    /// On line-search failure the parameters are left untouched and the
    /// status is [`LbfgsStatus::LineSearchFailure`].
    pub fn step<F>(&mut self, params: &mut [T], loss_fn: &mut F) -> Result<LbfgsStep<T>>
    where
        F: FnMut(&[T]) -> Result<Evaluation<T, P>>,
    {
        let mut evaluations = 0;
        if self.current.is_none() {
            self.current = Some(Self::evaluate(params, loss_fn)?);
            evaluations += 1;
        }
        let cur = self.current.as_ref().expect("evaluated above");
        let f0 = cur.value;
        let g0 = cur.grad.clone();
        if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                stage: 3,
                iteration: self.iterations,
                what: "L-BFGS objective",
            });
        }
        let gnorm = dot(&g0, &g0).sqrt();
        if gnorm < lit(self.config.grad_tol) {
            return Ok(LbfgsStep {
                status: LbfgsStatus::GradientTolerance,
                value: f0,
                grad_norm: gnorm,
                alpha: None,
                evaluations,
            });
        }

        let mut d = self.direction(&g0);
        let mut slope = dot(&g0, &d);
        if !(slope < T::zero()) || d.iter().any(|v| !v.is_finite()) {
            self.pairs.clear();
            d = g0.iter().map(|&v| -v).collect();
            slope = -gnorm * gnorm;
        }
        let initial_step = if self.pairs.is_empty() {
            T::one() / gnorm
        } else {
            T::one()
        };

        let base = params.to_vec();
        let mut trial = vec![T::zero(); base.len()];
        let outcome = strong_wolfe(
            |alpha: T| {
                for i in 0..base.len() {
                    trial[i] = base[i] + alpha * d[i];
                }
                let e = Self::evaluate(&trial, loss_fn)?;
                let s = dot(&e.grad, &d);
                Ok((e.value, s, e))
            },
            f0,
            slope,
            initial_step,
            &self.config.line_search,
        )?;
        evaluations += outcome.evaluations;

        if outcome.status != LineSearchStatus::Accepted {
            return Ok(LbfgsStep {
                status: LbfgsStatus::LineSearchFailure,
                value: f0,
                grad_norm: gnorm,
                alpha: None,
                evaluations,
            });
        }
        let alpha = outcome.alpha;
        debug_assert!(
            outcome.value <= f0 + lit::<T>(self.config.line_search.c1) * alpha * slope
                && outcome.slope.abs() <= lit::<T>(self.config.line_search.c2) * slope.abs(),
            "accepted step violates the strong Wolfe conditions"
        );
        let new = outcome.payload.expect("accepted step carries its evaluation");

        let s: Vec<T> = d.iter().map(|&v| alpha * v).collect();
        let y: Vec<T> = new.grad.iter().zip(&g0).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > T::zero() && sy.is_finite() {
            if self.pairs.len() == self.config.history {
                self.pairs.pop_front();
            }
            if self.config.history > 0 {
                self.pairs.push_back((s.clone(), y, T::one() / sy));
            }
        }
        for i in 0..params.len() {
            params[i] = base[i] + s[i];
        }
        self.iterations += 1;

        let value = new.value;
        let grad_norm = dot(&new.grad, &new.grad).sqrt();
        self.current = Some(new);
        let status = if grad_norm < lit(self.config.grad_tol) {
            LbfgsStatus::GradientTolerance
        } else if (value - f0).abs() < lit(self.config.loss_tol) {
            LbfgsStatus::LossChangeTolerance
        } else {
            LbfgsStatus::Continue
        };
        Ok(LbfgsStep {
            status,
            value,
            grad_norm,
            alpha: Some(alpha),
            evaluations,
        })
    }
}
