//! Weighted composite loss `L = L_pde + w_bc L_bc + w_ic L_ic`.
//!
//! `L_pde` is the mean of `r1^2 + r2^2` over interior points, with all
//! derivatives taken of the constrained outputs. `L_bc` is the mean of
//! `u^2 + phi^2` on the boundary set and `L_ic` the mean squared mismatch
//! against the exact profile at `t = 0`. An optional initial-velocity penalty
//! (`u_t^2 + phi_t^2` at `t = 0`) is folded into `L_ic`; it is off by default.
//!
//! Interior points are processed in fixed-size chunks, each on its own graph,
//! and the chunk contributions are summed in chunk order so results do not
//! depend on how many threads ran.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{batched_grad, GradientVector, Graph, Var};
use crate::error::{Error, Result};
use crate::model::{FieldPair, NetworkParameters, ParamVars};
use crate::physics::{exact_solution, exact_solution_var, residuals, MaterialParameters, SecondDerivatives};
use crate::real::{lit, Real};
use crate::sampler::Point;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub w_bc: f64,
    pub w_ic: f64,
    /// Adds the `u_t = phi_t = 0` initial-velocity penalty to the IC term.
    pub ic_velocity: bool,
    /// Interior points per autodiff graph.
    pub chunk_size: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_bc: 500.0,
            w_ic: 300.0,
            ic_velocity: false,
            chunk_size: 500,
        }
    }
}

/// Loss components for one evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown<T> {
    pub pde: T,
    pub bc: T,
    pub ic: T,
    pub total: T,
    pub w_bc: T,
    pub w_ic: T,
}

impl<T: Real> LossBreakdown<T> {
    fn assemble(pde: T, bc: T, ic: T, cfg: &LossConfig) -> Self {
        let (w_bc, w_ic) = (lit::<T>(cfg.w_bc), lit::<T>(cfg.w_ic));
        LossBreakdown {
            pde,
            bc,
            ic,
            total: pde + w_bc * bc + w_ic * ic,
            w_bc,
            w_ic,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.pde.is_finite() && self.bc.is_finite() && self.ic.is_finite()
    }
}

/// Anything that produces `(u, phi)` as graph nodes from `n x 1` input columns.
pub trait GraphField<'g, T: Real> {
    fn fields(&self, x: Var<'g, T>, t: Var<'g, T>) -> FieldPair<Var<'g, T>>;
}

impl<'g, T: Real> GraphField<'g, T> for ParamVars<'g, T> {
    fn fields(&self, x: Var<'g, T>, t: Var<'g, T>) -> FieldPair<Var<'g, T>> {
        self.forward(x, t)
    }
}

/// The closed-form solution posing as a network; its loss is zero up to rounding.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactField;

impl<'g, T: Real> GraphField<'g, T> for ExactField {
    fn fields(&self, x: Var<'g, T>, t: Var<'g, T>) -> FieldPair<Var<'g, T>> {
        exact_solution_var(x, t)
    }
}

/// Differentiable loss components recorded on one graph.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms<'g, T: Real> {
    pub pde: Var<'g, T>,
    pub bc: Var<'g, T>,
    pub ic: Var<'g, T>,
    pub total: Var<'g, T>,
}

fn columns<'g, T: Real>(graph: &'g Graph<T>, pts: &[Point]) -> (Var<'g, T>, Var<'g, T>) {
    let xs: Vec<T> = pts.iter().map(|p| lit(p.0)).collect();
    let ts: Vec<T> = pts.iter().map(|p| lit(p.1)).collect();
    (graph.column_leaf(&xs), graph.column_leaf(&ts))
}

/// `sum_i (r1_i^2 + r2_i^2)` over `pts`.
pub fn residual_square_sum<'g, T, F>(
    graph: &'g Graph<T>,
    field: &F,
    pts: &[Point],
    mat: &MaterialParameters,
) -> Result<Var<'g, T>>
where
    T: Real,
    F: GraphField<'g, T>,
{
    let (x, t) = columns(graph, pts);
    let f = field.fields(x, t);
    let du = batched_grad(f.u, &[x, t], true)?;
    let dp = batched_grad(f.phi, &[x, t], true)?;
    let d = SecondDerivatives {
        u_xx: batched_grad(du[0], &[x], true)?[0],
        u_tt: batched_grad(du[1], &[t], true)?[0],
        phi_xx: batched_grad(dp[0], &[x], true)?[0],
        phi_tt: batched_grad(dp[1], &[t], true)?[0],
    };
    let r = residuals(d, mat);
    Ok((r.r1.square() + r.r2.square()).sum())
}

fn boundary_term<'g, T: Real, F: GraphField<'g, T>>(
    graph: &'g Graph<T>,
    field: &F,
    pts: &[Point],
) -> Var<'g, T> {
    let (x, t) = columns(graph, pts);
    let f = field.fields(x, t);
    (f.u.square() + f.phi.square()).mean()
}

fn initial_term<'g, T: Real, F: GraphField<'g, T>>(
    graph: &'g Graph<T>,
    field: &F,
    pts: &[Point],
    velocity: bool,
) -> Result<Var<'g, T>> {
    let (x, t) = columns(graph, pts);
    let f = field.fields(x, t);
    let (eu, ep): (Vec<T>, Vec<T>) = pts
        .iter()
        .map(|p| {
            let e = exact_solution::<f64>(p.0, 0.0);
            (lit::<T>(e.u), lit::<T>(e.phi))
        })
        .unzip();
    let eu = graph.constant(crate::autodiff::column_array(&eu));
    let ep = graph.constant(crate::autodiff::column_array(&ep));
    let mut ic = ((f.u - eu).square() + (f.phi - ep).square()).mean();
    if velocity {
        let ut = batched_grad(f.u, &[t], true)?[0];
        let pt = batched_grad(f.phi, &[t], true)?[0];
        ic = ic + (ut.square() + pt.square()).mean();
    }
    Ok(ic)
}

/// Records the full weighted loss on `graph`.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss<'g, T, F>(
    graph: &'g Graph<T>,
    field: &F,
    batch: &[Point],
    boundary: &[Point],
    initial: &[Point],
    mat: &MaterialParameters,
    cfg: &LossConfig,
) -> Result<LossTerms<'g, T>>
where
    T: Real,
    F: GraphField<'g, T>,
{
    require_non_empty(batch, boundary, initial)?;
    let n = lit::<T>(batch.len() as f64);
    let pde = residual_square_sum(graph, field, batch, mat)?.scale(T::one() / n);
    let bc = boundary_term(graph, field, boundary);
    let ic = initial_term(graph, field, initial, cfg.ic_velocity)?;
    let total = pde + bc.scale(lit(cfg.w_bc)) + ic.scale(lit(cfg.w_ic));
    Ok(LossTerms { pde, bc, ic, total })
}

fn require_non_empty(batch: &[Point], boundary: &[Point], initial: &[Point]) -> Result<()> {
    for (name, set) in [("interior batch", batch), ("boundary set", boundary), ("initial set", initial)] {
        if set.is_empty() {
            return Err(Error::Config(format!("{name} is empty")));
        }
    }
    Ok(())
}

/// Fixed boundary/initial sets plus material and weights; the interior batch varies per call.
#[derive(Debug, Clone)]
pub struct LossProblem {
    pub boundary: Vec<Point>,
    pub initial: Vec<Point>,
    pub material: MaterialParameters,
    pub config: LossConfig,
}

impl LossProblem {
    fn chunk_size(&self) -> Result<usize> {
        if self.config.chunk_size == 0 {
            return Err(Error::Config("loss chunk_size must be positive".into()));
        }
        Ok(self.config.chunk_size)
    }

    /// Loss value without a parameter gradient.
    pub fn evaluate<T: Real>(
        &self,
        params: &NetworkParameters<T>,
        interior: &[Point],
    ) -> Result<LossBreakdown<T>> {
        require_non_empty(interior, &self.boundary, &self.initial)?;
        let n = lit::<T>(interior.len() as f64);
        let chunk_sums: Vec<Result<T>> = interior
            .par_chunks(self.chunk_size()?)
            .map(|chunk| {
                let graph = Graph::new();
                let pv = params.register(&graph, false);
                Ok(residual_square_sum(&graph, &pv, chunk, &self.material)?.item())
            })
            .collect();
        let mut pde = T::zero();
        for s in chunk_sums {
            pde += s?;
        }
        let graph = Graph::new();
        let pv = params.register(&graph, false);
        let bc = boundary_term(&graph, &pv, &self.boundary).item();
        let ic = initial_term(&graph, &pv, &self.initial, self.config.ic_velocity)?.item();
        Ok(LossBreakdown::assemble(pde / n, bc, ic, &self.config))
    }

    /// Loss value and its gradient in [`NetworkParameters::to_flat`] order.
    pub fn value_and_grad<T: Real>(
        &self,
        params: &NetworkParameters<T>,
        interior: &[Point],
    ) -> Result<(LossBreakdown<T>, GradientVector<T>)> {
        require_non_empty(interior, &self.boundary, &self.initial)?;
        let inv_n = T::one() / lit::<T>(interior.len() as f64);
        let parts: Vec<Result<(T, GradientVector<T>)>> = interior
            .par_chunks(self.chunk_size()?)
            .map(|chunk| {
                let graph = Graph::new();
                let pv = params.register(&graph, true);
                let part = residual_square_sum(&graph, &pv, chunk, &self.material)?.scale(inv_n);
                let grads = graph.grad(part, &pv.all(), false)?;
                Ok((part.item(), GradientVector::from_vars(&grads)))
            })
            .collect();

        let graph = Graph::new();
        let pv = params.register(&graph, true);
        let bc = boundary_term(&graph, &pv, &self.boundary);
        let ic = initial_term(&graph, &pv, &self.initial, self.config.ic_velocity)?;
        let weighted = bc.scale(lit(self.config.w_bc)) + ic.scale(lit(self.config.w_ic));
        let grads = graph.grad(weighted, &pv.all(), false)?;
        let mut grad = GradientVector::from_vars(&grads);

        let mut pde = T::zero();
        for part in parts {
            let (value, g) = part?;
            pde += value;
            for (acc, gi) in grad.entries.iter_mut().zip(g.entries) {
                *acc += gi;
            }
        }
        let breakdown = LossBreakdown::assemble(pde, bc.item(), ic.item(), &self.config);
        Ok((breakdown, grad))
    }
}
