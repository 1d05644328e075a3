//! Reverse-mode automatic differentiation over 2-D arrays with nested gradients.
//!
//! A [`Graph`] is an append-only arena of nodes. Every operation evaluates
//! eagerly and records its inputs, so any node can later be differentiated.
//! [`Graph::grad`] walks the recorded nodes in reverse creation order (which
//! is a valid reverse topological order). With `create_graph = true` the
//! backward rules are themselves expressed as recorded operations, so the
//! resulting gradients can be differentiated again. The PINN loss relies on
//! three levels of this: input derivatives, second input derivatives, and the
//! parameter gradient of a loss containing both.
//!
//! Gradients of a batch-summed output with respect to a batched input column
//! give per-row derivatives, because the network never mixes rows.
//!
//! A graph is single-threaded (interior mutability through `RefCell`); build
//! independent graphs on independent threads.

use std::cell::{Ref, RefCell};
use std::ops::{Add, Div, Mul, Neg, Sub};

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::real::Real;

type Shape = (usize, usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    /// Result of a non-retaining differentiation; carries no provenance.
    Detached,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    /// `a * scale + shift`
    Affine(usize, T, T),
    PowI(usize, i32),
    Tanh(usize),
    Sin(usize),
    Cos(usize),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
    },
    Sum(usize),
    Broadcast(usize),
    SumTo(usize),
    Column(usize, usize),
    PlaceColumn(usize, usize),
    /// `a + bias` with a `1 x k` bias row added to every row of `a`.
    AddRow(usize, usize),
    /// `g * (1 - y^2)`, the tanh backward rule given the tanh output `y`.
    TanhGrad(usize, usize),
}

impl<T> Op<T> {
    fn inputs(&self) -> [Option<usize>; 2] {
        match *self {
            Op::Leaf | Op::Detached => [None, None],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => [Some(a), Some(b)],
            Op::MatMul { a, b, .. } | Op::AddRow(a, b) | Op::TanhGrad(a, b) => [Some(a), Some(b)],
            Op::Neg(a)
            | Op::Affine(a, ..)
            | Op::PowI(a, _)
            | Op::Tanh(a)
            | Op::Sin(a)
            | Op::Cos(a)
            | Op::Sum(a)
            | Op::Broadcast(a)
            | Op::SumTo(a)
            | Op::Column(a, _)
            | Op::PlaceColumn(a, ..) => [Some(a), None],
        }
    }
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Expression graph owning every recorded value.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Handle to a recorded value. Cheap to copy; valid for the graph's lifetime.
#[derive(Clone, Copy)]
pub struct Var<'g, T: Real> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    /// A differentiable leaf.
    pub fn leaf(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable leaf; asking for a gradient with respect to it is an error.
    pub fn constant(&self, value: Array2<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar_leaf(&self, v: T) -> Var<'_, T> {
        self.leaf(Array2::from_elem((1, 1), v))
    }

    pub fn scalar_constant(&self, v: T) -> Var<'_, T> {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// A differentiable `n x 1` column from a slice.
    pub fn column_leaf(&self, values: &[T]) -> Var<'_, T> {
        self.leaf(column_array(values))
    }

    fn unary(&self, a: usize, op: Op<T>, f: impl FnOnce(&Array2<T>) -> Array2<T>) -> Var<'_, T> {
        let value = f(&self.nodes.borrow()[a].value);
        self.push(value, op, true)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        op: Op<T>,
        f: impl FnOnce(&Array2<T>, &Array2<T>) -> Array2<T>,
    ) -> Var<'_, T> {
        let value = {
            let nodes = self.nodes.borrow();
            f(&nodes[a].value, &nodes[b].value)
        };
        self.push(value, op, true)
    }

    fn shape_of(&self, id: usize) -> Shape {
        self.nodes.borrow()[id].value.dim()
    }

    fn var(&self, id: usize) -> Var<'_, T> {
        Var { graph: self, id }
    }

    /// Gradients of the scalar `output` with respect to each entry of `wrt`.
    ///
    /// With `create_graph` the returned gradients are recorded expressions and
    /// may be differentiated again. Without it the backward work is discarded
    /// and the results are detached values; differentiating one of those is a
    /// contract violation. Targets that `output` does not depend on receive an
    /// exact zero.
    pub fn grad<'g>(
        &'g self,
        output: Var<'g, T>,
        wrt: &[Var<'g, T>],
        create_graph: bool,
    ) -> Result<Vec<Var<'g, T>>> {
        let out = output.id;
        {
            let nodes = self.nodes.borrow();
            let node = &nodes[out];
            if node.value.dim() != (1, 1) {
                return Err(Error::Contract(format!(
                    "cannot differentiate a non-scalar output of shape {:?} without a reduction",
                    node.value.dim()
                )));
            }
            if matches!(node.op, Op::Detached) {
                return Err(Error::Contract(
                    "output was produced without retaining the graph (create_graph = false)".into(),
                ));
            }
            for w in wrt {
                if !nodes[w.id].requires_grad {
                    return Err(Error::Contract(format!(
                        "node {} is not marked differentiable",
                        w.id
                    )));
                }
            }
        }

        let mark = self.len();

        // A node is relevant when some differentiation target is among its ancestors.
        let mut relevant = vec![false; out + 1];
        for w in wrt {
            if w.id <= out {
                relevant[w.id] = true;
            }
        }
        {
            let nodes = self.nodes.borrow();
            for i in 0..=out {
                if !relevant[i] {
                    relevant[i] = nodes[i].op.inputs().iter().flatten().any(|&j| relevant[j]);
                }
            }
        }

        let mut grads: Vec<Option<usize>> = vec![None; out + 1];
        if relevant[out] {
            grads[out] = Some(self.scalar_constant(T::one()).id);
        }
        for i in (0..=out).rev() {
            let Some(g) = grads[i] else { continue };
            let op = self.nodes.borrow()[i].op.clone();
            self.backward_rule(&op, i, g, &relevant, &mut grads);
        }

        let results: Vec<usize> = wrt
            .iter()
            .map(|w| match grads.get(w.id).copied().flatten() {
                Some(g) => g,
                None => {
                    let shape = self.shape_of(w.id);
                    self.constant(Array2::zeros(shape)).id
                }
            })
            .collect();

        if create_graph {
            return Ok(results.into_iter().map(|id| self.var(id)).collect());
        }
        let values: Vec<Array2<T>> = {
            let nodes = self.nodes.borrow();
            results.iter().map(|&id| nodes[id].value.clone()).collect()
        };
        self.nodes.borrow_mut().truncate(mark);
        Ok(values
            .into_iter()
            .map(|v| self.push(v, Op::Detached, false))
            .collect())
    }

    fn accumulate(&self, grads: &mut [Option<usize>], target: usize, contribution: Var<'_, T>) {
        grads[target] = Some(match grads[target] {
            None => contribution.id,
            Some(prev) => (self.var(prev) + contribution).id,
        });
    }

    fn backward_rule(
        &self,
        op: &Op<T>,
        node: usize,
        g: usize,
        relevant: &[bool],
        grads: &mut [Option<usize>],
    ) {
        let gv = self.var(g);
        let out = self.var(node);
        let rel = |i: usize| relevant[i];
        match *op {
            Op::Leaf | Op::Detached => {}
            Op::Add(a, b) => {
                if rel(a) {
                    self.accumulate(grads, a, gv);
                }
                if rel(b) {
                    self.accumulate(grads, b, gv);
                }
            }
            Op::Sub(a, b) => {
                if rel(a) {
                    self.accumulate(grads, a, gv);
                }
                if rel(b) {
                    self.accumulate(grads, b, -gv);
                }
            }
            Op::Mul(a, b) => {
                if rel(a) {
                    self.accumulate(grads, a, gv * self.var(b));
                }
                if rel(b) {
                    self.accumulate(grads, b, gv * self.var(a));
                }
            }
            Op::Div(a, b) => {
                let bv = self.var(b);
                if rel(a) {
                    self.accumulate(grads, a, gv / bv);
                }
                if rel(b) {
                    self.accumulate(grads, b, -((gv * out) / bv));
                }
            }
            Op::Neg(a) => {
                if rel(a) {
                    self.accumulate(grads, a, -gv);
                }
            }
            Op::Affine(a, scale, _) => {
                if rel(a) {
                    self.accumulate(grads, a, gv.affine(scale, T::zero()));
                }
            }
            Op::PowI(a, n) => {
                if rel(a) && n != 0 {
                    let c = if n == 1 {
                        gv
                    } else {
                        let nf = T::from_i32(n).expect("small integer exponent");
                        gv * self.var(a).powi(n - 1).affine(nf, T::zero())
                    };
                    self.accumulate(grads, a, c);
                }
            }
            Op::Tanh(a) => {
                if rel(a) {
                    self.accumulate(grads, a, gv.tanh_grad(out));
                }
            }
            Op::TanhGrad(a, y) => {
                let yv = self.var(y);
                if rel(a) {
                    self.accumulate(grads, a, gv.tanh_grad(yv));
                }
                if rel(y) {
                    let c = (gv * self.var(a) * yv).scale(-T::one() - T::one());
                    self.accumulate(grads, y, c);
                }
            }
            Op::AddRow(a, b) => {
                if rel(a) {
                    self.accumulate(grads, a, gv);
                }
                if rel(b) {
                    let shape = self.shape_of(b);
                    self.accumulate(grads, b, gv.sum_to(shape));
                }
            }
            Op::Sin(a) => {
                if rel(a) {
                    self.accumulate(grads, a, gv * self.var(a).cos());
                }
            }
            Op::Cos(a) => {
                if rel(a) {
                    let d = self.var(a).sin().affine(-T::one(), T::zero());
                    self.accumulate(grads, a, gv * d);
                }
            }
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.var(a), self.var(b));
                if rel(a) {
                    let c = match (ta, tb) {
                        (false, false) => gv.mm(bv, false, true),
                        (false, true) => gv.mm(bv, false, false),
                        (true, false) => bv.mm(gv, false, true),
                        (true, true) => bv.mm(gv, true, true),
                    };
                    self.accumulate(grads, a, c);
                }
                if rel(b) {
                    let c = match (ta, tb) {
                        (false, false) => av.mm(gv, true, false),
                        (false, true) => gv.mm(av, true, false),
                        (true, false) => av.mm(gv, false, false),
                        (true, true) => gv.mm(av, true, true),
                    };
                    self.accumulate(grads, b, c);
                }
            }
            Op::Sum(a) => {
                if rel(a) {
                    let shape = self.shape_of(a);
                    self.accumulate(grads, a, gv.broadcast_to(shape));
                }
            }
            Op::Broadcast(a) => {
                if rel(a) {
                    let shape = self.shape_of(a);
                    self.accumulate(grads, a, gv.sum_to(shape));
                }
            }
            Op::SumTo(a) => {
                if rel(a) {
                    let shape = self.shape_of(a);
                    self.accumulate(grads, a, gv.broadcast_to(shape));
                }
            }
            Op::Column(a, j) => {
                if rel(a) {
                    let cols = self.shape_of(a).1;
                    self.accumulate(grads, a, gv.place_column(j, cols));
                }
            }
            Op::PlaceColumn(a, j) => {
                if rel(a) {
                    self.accumulate(grads, a, gv.column(j));
                }
            }
        }
    }
}

/// Converts a slice into an `n x 1` array.
pub fn column_array<T: Real>(values: &[T]) -> Array2<T> {
    Array2::from_shape_vec((values.len(), 1), values.to_vec()).expect("column shape")
}

fn broadcastable(from: Shape, to: Shape) -> bool {
    (from.0 == to.0 || from.0 == 1) && (from.1 == to.1 || from.1 == 1)
}

impl<'g, T: Real> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn shape(&self) -> Shape {
        self.graph.shape_of(self.id)
    }

    /// Borrowed view of the stored value. Drop it before recording new operations.
    pub fn value_ref(&self) -> Ref<'g, Array2<T>> {
        Ref::map(self.graph.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn value(&self) -> Array2<T> {
        self.value_ref().clone()
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self) -> T {
        let v = self.value_ref();
        assert_eq!(v.dim(), (1, 1), "item() called on a non-scalar node");
        v[[0, 0]]
    }

    pub fn is_detached(&self) -> bool {
        matches!(self.graph.nodes.borrow()[self.id].op, Op::Detached)
    }

    fn unary(self, op: Op<T>, f: impl FnOnce(&Array2<T>) -> Array2<T>) -> Self {
        self.graph.unary(self.id, op, f)
    }

    pub fn tanh(self) -> Self {
        self.unary(Op::Tanh(self.id), |a| a.mapv(T::tanh))
    }

    pub fn sin(self) -> Self {
        self.unary(Op::Sin(self.id), |a| a.mapv(T::sin))
    }

    pub fn cos(self) -> Self {
        self.unary(Op::Cos(self.id), |a| a.mapv(T::cos))
    }

    pub fn powi(self, n: i32) -> Self {
        self.unary(Op::PowI(self.id, n), |a| a.mapv(|v| v.powi(n)))
    }

    /// `self * scale + shift`, elementwise.
    pub fn affine(self, scale: T, shift: T) -> Self {
        self.unary(Op::Affine(self.id, scale, shift), |a| {
            a.mapv(|v| v * scale + shift)
        })
    }

    pub fn scale(self, c: T) -> Self {
        self.affine(c, T::zero())
    }

    pub fn shift(self, c: T) -> Self {
        self.affine(T::one(), c)
    }

    pub fn square(self) -> Self {
        self * self
    }

    /// Sum of all entries, as a `1 x 1` node.
    pub fn sum(self) -> Self {
        self.unary(Op::Sum(self.id), |a| Array2::from_elem((1, 1), a.sum()))
    }

    pub fn mean(self) -> Self {
        let (r, c) = self.shape();
        let n = T::from_usize(r * c).expect("element count");
        self.sum().scale(T::one() / n)
    }

    /// General matrix product `op(self) * op(other)` where `op` optionally transposes.
    pub fn mm(self, other: Self, transpose_self: bool, transpose_other: bool) -> Self {
        let op = Op::MatMul {
            a: self.id,
            b: other.id,
            ta: transpose_self,
            tb: transpose_other,
        };
        self.graph.binary(self.id, other.id, op, |a, b| {
            let av = if transpose_self { a.t() } else { a.view() };
            let bv = if transpose_other { b.t() } else { b.view() };
            assert_eq!(
                av.ncols(),
                bv.nrows(),
                "matmul inner dimensions differ: {:?} x {:?}",
                av.dim(),
                bv.dim()
            );
            av.dot(&bv)
        })
    }

    pub fn matmul(self, other: Self) -> Self {
        self.mm(other, false, false)
    }

    /// Affine map `self * weight^T + bias` for a row-batched input and an
    /// `out x in` weight matrix with a `1 x out` bias row.
    pub fn affine_map(self, weight: Self, bias: Self) -> Self {
        self.mm(weight, false, true).add_row(bias)
    }

    /// Adds a `1 x k` row to every row of an `n x k` node without materializing the broadcast.
    pub fn add_row(self, row: Self) -> Self {
        let (sa, sb) = (self.shape(), row.shape());
        assert!(
            sb.0 == 1 && sb.1 == sa.1,
            "cannot add a {sb:?} row to {sa:?}"
        );
        self.graph
            .binary(self.id, row.id, Op::AddRow(self.id, row.id), |a, b| a + b)
    }

    /// `self * (1 - y^2)`: the tanh backward rule, given the tanh output `y`.
    fn tanh_grad(self, y: Self) -> Self {
        self.graph
            .binary(self.id, y.id, Op::TanhGrad(self.id, y.id), |g, y| {
                Zip::from(g)
                    .and(y)
                    .map_collect(|&g, &y| g * (T::one() - y * y))
            })
    }

    pub fn broadcast_to(self, shape: Shape) -> Self {
        let from = self.shape();
        if from == shape {
            return self;
        }
        assert!(
            broadcastable(from, shape),
            "cannot broadcast {from:?} to {shape:?}"
        );
        self.unary(Op::Broadcast(self.id), |a| {
            a.broadcast(shape).expect("checked broadcast").to_owned()
        })
    }

    /// Reduces by summation to `shape`; the inverse of [`Var::broadcast_to`].
    pub fn sum_to(self, shape: Shape) -> Self {
        let from = self.shape();
        if from == shape {
            return self;
        }
        assert!(
            broadcastable(shape, from),
            "cannot sum {from:?} down to {shape:?}"
        );
        self.unary(Op::SumTo(self.id), |a| {
            let mut r = a.clone();
            if shape.0 == 1 && from.0 != 1 {
                r = r.sum_axis(Axis(0)).insert_axis(Axis(0));
            }
            if shape.1 == 1 && from.1 != 1 {
                r = r.sum_axis(Axis(1)).insert_axis(Axis(1));
            }
            r
        })
    }

    /// Column `j` as an `n x 1` node.
    pub fn column(self, j: usize) -> Self {
        self.unary(Op::Column(self.id, j), |a| {
            a.column(j).to_owned().insert_axis(Axis(1))
        })
    }

    fn place_column(self, j: usize, cols: usize) -> Self {
        self.unary(Op::PlaceColumn(self.id, j), |a| {
            let mut r = Array2::zeros((a.nrows(), cols));
            r.column_mut(j).assign(&a.column(0));
            r
        })
    }

    fn elementwise(
        self,
        other: Self,
        make: fn(usize, usize) -> Op<T>,
        f: fn(T, T) -> T,
    ) -> Self {
        let (sa, sb) = (self.shape(), other.shape());
        if sa != sb {
            let target = (sa.0.max(sb.0), sa.1.max(sb.1));
            return self
                .broadcast_to(target)
                .elementwise(other.broadcast_to(target), make, f);
        }
        self.graph
            .binary(self.id, other.id, make(self.id, other.id), |a, b| {
                Zip::from(a).and(b).map_collect(|&x, &y| f(x, y))
            })
    }
}

impl<'g, T: Real> Add for Var<'g, T> {
    type Output = Var<'g, T>;
    fn add(self, rhs: Self) -> Self {
        self.elementwise(rhs, Op::Add, |a, b| a + b)
    }
}

impl<'g, T: Real> Sub for Var<'g, T> {
    type Output = Var<'g, T>;
    fn sub(self, rhs: Self) -> Self {
        self.elementwise(rhs, Op::Sub, |a, b| a - b)
    }
}

impl<'g, T: Real> Mul for Var<'g, T> {
    type Output = Var<'g, T>;
    fn mul(self, rhs: Self) -> Self {
        self.elementwise(rhs, Op::Mul, |a, b| a * b)
    }
}

impl<'g, T: Real> Div for Var<'g, T> {
    type Output = Var<'g, T>;
    fn div(self, rhs: Self) -> Self {
        self.elementwise(rhs, Op::Div, |a, b| a / b)
    }
}

impl<'g, T: Real> Neg for Var<'g, T> {
    type Output = Var<'g, T>;
    fn neg(self) -> Self {
        self.unary(Op::Neg(self.id), |a| a.mapv(|v| -v))
    }
}

/// Flat gradient aligned with a parameter ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector<T> {
    pub entries: Vec<T>,
}

impl<T: Real> GradientVector<T> {
    pub fn new(entries: Vec<T>) -> Self {
        GradientVector { entries }
    }

    /// Flattens gradient nodes row-major, in the given order.
    pub fn from_vars(vars: &[Var<'_, T>]) -> Self {
        let mut entries = Vec::new();
        for v in vars {
            entries.extend(v.value_ref().iter().copied());
        }
        GradientVector { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn norm(&self) -> T {
        self.entries.iter().map(|&g| g * g).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|g| g.is_finite())
    }
}

/// `d²f/dx²` for a scalar `f` and a `1 x 1` input, by differentiating the
/// retained first derivative.
pub fn second_derivative<'g, T: Real>(f: Var<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let graph = f.graph();
    let first = graph.grad(f, &[x], true)?[0];
    Ok(graph.grad(first, &[x], true)?[0])
}

/// Per-row first derivatives of a batched `n x 1` output.
pub fn batched_grad<'g, T: Real>(
    y: Var<'g, T>,
    wrt: &[Var<'g, T>],
    create_graph: bool,
) -> Result<Vec<Var<'g, T>>> {
    y.graph().grad(y.sum(), wrt, create_graph)
}

/// Per-row second derivative `d²y/dx²` of a batched output with respect to a batched input column.
pub fn batched_second_derivative<'g, T: Real>(y: Var<'g, T>, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let first = batched_grad(y, &[x], true)?[0];
    Ok(batched_grad(first, &[x], true)?[0])
}

/// Derivative order for [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeOrder {
    First,
    Second,
}

/// Denominator floor of the discrepancy measure: below unit magnitude the
/// discrepancy is an absolute error.
pub const DISCREPANCY_FLOOR: f64 = 1.0;

/// Compares the autodiff derivative of a scalar function against a central
/// difference with step `h`, returning `|ad - fd| / max(|ad|, floor)`.
pub fn finite_difference_check<T, F>(f: F, x: T, h: T, order: DerivativeOrder) -> Result<T>
where
    T: Real,
    F: for<'g> Fn(Var<'g, T>) -> Var<'g, T>,
{
    let eval = |at: T| -> T {
        let g = Graph::new();
        f(g.scalar_constant(at)).item()
    };
    let graph = Graph::new();
    let xv = graph.scalar_leaf(x);
    let y = f(xv);
    let (ad, fd) = match order {
        DerivativeOrder::First => {
            let d = graph.grad(y, &[xv], false)?[0].item();
            let two = T::one() + T::one();
            (d, (eval(x + h) - eval(x - h)) / (two * h))
        }
        DerivativeOrder::Second => {
            let d = second_derivative(y, xv)?.item();
            let two = T::one() + T::one();
            (d, (eval(x + h) - two * eval(x) + eval(x - h)) / (h * h))
        }
    };
    let floor = T::cast(DISCREPANCY_FLOOR);
    Ok((ad - fd).abs() / ad.abs().max(floor))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn d1(f: impl for<'g> Fn(Var<'g, f64>) -> Var<'g, f64>, x: f64) -> f64 {
        let g = Graph::new();
        let xv = g.scalar_leaf(x);
        g.grad(f(xv), &[xv], false).unwrap()[0].item()
    }

    fn d2(f: impl for<'g> Fn(Var<'g, f64>) -> Var<'g, f64>, x: f64) -> f64 {
        let g = Graph::new();
        let xv = g.scalar_leaf(x);
        second_derivative(f(xv), xv).unwrap().item()
    }

    #[test]
    fn first_derivative_examples() {
        assert_abs_diff_eq!(d1(|x| x.tanh(), 0.0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d1(|x| x.powi(3), 2.0), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn second_derivative_examples() {
        assert_abs_diff_eq!(d2(|x| x.tanh(), 0.0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d2(|x| x.scale(PI).sin(), 0.5), -PI * PI, epsilon = 1e-12);
        assert_abs_diff_eq!(d2(|x| x.powi(3), 2.0), 12.0, epsilon = 1e-12);
    }

    #[test]
    fn mixed_parameter_derivative_of_second_input_derivative() {
        // d/dθ of d²/dx² (θ sin x) at θ = 1, x = π/2
        let g = Graph::new();
        let theta = g.scalar_leaf(1.0);
        let x = g.scalar_leaf(PI / 2.0);
        let f = theta * x.sin();
        let fxx = second_derivative(f, x).unwrap();
        let d = g.grad(fxx, &[theta], false).unwrap()[0].item();
        assert_abs_diff_eq!(d, -1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_leaf_has_zero_derivative() {
        let g = Graph::new();
        let x = g.scalar_leaf(3.0);
        let c = g.scalar_constant(5.0);
        let d = g.grad(c, &[x], false).unwrap()[0].item();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn unreachable_leaf_gets_exact_zero() {
        let g = Graph::new();
        let x = g.scalar_leaf(0.3);
        let y = g.scalar_leaf(0.7);
        let f = x.sin();
        let grads = g.grad(f, &[x, y], false).unwrap();
        assert_eq!(grads[1].item(), 0.0);
        // leaf created after the output
        let z = g.scalar_leaf(1.0);
        assert_eq!(g.grad(f, &[z], false).unwrap()[0].item(), 0.0);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let g = Graph::new();
        let x = g.column_leaf(&[1.0, 2.0]);
        let err = g.grad(x.tanh(), &[x], false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn detached_gradient_cannot_be_differentiated() {
        let g = Graph::new();
        let x = g.scalar_leaf(0.4);
        let first = g.grad(x.powi(3), &[x], false).unwrap()[0];
        assert!(first.is_detached());
        let err = g.grad(first, &[x], false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn constant_target_is_rejected() {
        let g = Graph::new();
        let c = g.scalar_constant(2.0);
        let err = g.grad(c.sin(), &[c], false).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn non_retaining_grad_discards_backward_nodes() {
        let g = Graph::new();
        let x = g.scalar_leaf(0.4);
        let y = x.tanh().sin();
        let before = g.len();
        g.grad(y, &[x], false).unwrap();
        assert_eq!(g.len(), before + 1);
    }

    #[test]
    fn finite_difference_examples() {
        let tanh = finite_difference_check(|x| x.tanh(), 0.3, 1e-5, DerivativeOrder::First).unwrap();
        assert!(tanh < 1e-8, "{tanh}");
        let sin2 = finite_difference_check(
            |x| x.scale(PI).sin(),
            0.5,
            1e-4,
            DerivativeOrder::Second,
        )
        .unwrap();
        assert!(sin2 < 1e-6, "{sin2}");
        let c = finite_difference_check(
            |x| x.graph().scalar_constant(5.0),
            0.1,
            1e-3,
            DerivativeOrder::First,
        )
        .unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn full_op_set_second_derivatives_match_finite_differences() {
        // every primitive, composed
        fn f(x: Var<'_, f64>) -> Var<'_, f64> {
            let g = x.graph();
            let a = x.sin() * x.cos() + x.powi(3).scale(0.2);
            let b = (x.tanh() - x.shift(2.0)) / x.shift(1.5);
            let w = g.constant(ndarray::arr2(&[[0.7], [-1.3]]));
            let bias = g.constant(ndarray::arr2(&[[0.1, 0.2]]));
            let aff = x.affine_map(w, bias).tanh().sum();
            (a + b - aff).mean()
        }
        for &x in &[-0.7, 0.1, 0.45, 1.2] {
            let first = finite_difference_check(f, x, 1e-5, DerivativeOrder::First).unwrap();
            let second = finite_difference_check(f, x, 1e-4, DerivativeOrder::Second).unwrap();
            assert!(first < 1e-8, "first at {x}: {first}");
            assert!(second < 1e-6, "second at {x}: {second}");
        }
    }

    #[test]
    fn batched_derivatives_are_per_row() {
        let g = Graph::new();
        let xs = [0.1, 0.5, 0.9];
        let x = g.column_leaf(&xs);
        let y = x.scale(PI).sin() * x;
        let dy = batched_grad(y, &[x], true).unwrap()[0];
        let d2y = batched_grad(dy, &[x], false).unwrap()[0];
        for (i, &xi) in xs.iter().enumerate() {
            let s = (PI * xi).sin();
            let c = (PI * xi).cos();
            assert_abs_diff_eq!(dy.value()[[i, 0]], s + PI * xi * c, epsilon = 1e-14);
            assert_abs_diff_eq!(
                d2y.value()[[i, 0]],
                2.0 * PI * c - PI * PI * xi * s,
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn matmul_transpose_variants_agree_with_finite_differences() {
        let a0 = ndarray::arr2(&[[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]]);
        let b0 = ndarray::arr2(&[[0.2, 0.7], [-0.5, 0.3], [0.9, -0.1]]);
        for &(ta, tb) in &[(false, false), (false, true), (true, false), (true, true)] {
            let a_in = if ta { a0.t().to_owned() } else { a0.clone() };
            let b_in = if tb { b0.t().to_owned() } else { b0.clone() };
            let loss = |a: &Array2<f64>, b: &Array2<f64>| {
                let g = Graph::new();
                let (av, bv) = (g.constant(a.clone()), g.constant(b.clone()));
                av.mm(bv, ta, tb).tanh().sum().item()
            };
            let g = Graph::new();
            let (av, bv) = (g.leaf(a_in.clone()), g.leaf(b_in.clone()));
            let l = av.mm(bv, ta, tb).tanh().sum();
            let grads = g.grad(l, &[av, bv], false).unwrap();
            let h = 1e-6;
            for (which, base) in [(0, &a_in), (1, &b_in)] {
                let gv = grads[which].value();
                for idx in 0..base.len() {
                    let (r, c) = (idx / base.ncols(), idx % base.ncols());
                    let mut p = base.clone();
                    let mut m = base.clone();
                    p[[r, c]] += h;
                    m[[r, c]] -= h;
                    let fd = if which == 0 {
                        (loss(&p, &b_in) - loss(&m, &b_in)) / (2.0 * h)
                    } else {
                        (loss(&a_in, &p) - loss(&a_in, &m)) / (2.0 * h)
                    };
                    assert_abs_diff_eq!(gv[[r, c]], fd, epsilon = 1e-8);
                }
            }
        }
    }

    #[test]
    fn broadcast_and_column_round_trip_gradients() {
        let g = Graph::new();
        let m = g.leaf(ndarray::arr2(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]));
        let row = g.leaf(ndarray::arr2(&[[0.5, -1.0]]));
        let y = (m + row).column(1).square().sum();
        let grads = g.grad(y, &[m, row], false).unwrap();
        // y = Σ_i (m_i1 - 1)^2
        assert_eq!(
            grads[0].value(),
            ndarray::arr2(&[[0.0, 2.0], [0.0, 6.0], [0.0, 10.0]])
        );
        assert_eq!(grads[1].value(), ndarray::arr2(&[[0.0, 18.0]]));
    }

    #[test]
    fn depth_three_single_layer_network() {
        // L(θ) = (d²/dx² Σ_k v_k tanh(w_k x + b_k))², dL/dθ vs central differences
        let w0 = ndarray::arr2(&[[0.8], [-1.1], [0.4]]);
        let b0 = ndarray::arr2(&[[0.1, -0.3, 0.25]]);
        let v0 = ndarray::arr2(&[[0.6], [0.9], [-0.7]]);
        let x0 = 0.37;
        let loss_of = |w: &Array2<f64>, b: &Array2<f64>, v: &Array2<f64>| -> f64 {
            let g = Graph::new();
            let x = g.scalar_leaf(x0);
            let y = x
                .affine_map(g.constant(w.clone()), g.constant(b.clone()))
                .tanh()
                .matmul(g.constant(v.clone()));
            second_derivative(y, x).unwrap().square().item()
        };
        let g = Graph::new();
        let (w, b, v) = (g.leaf(w0.clone()), g.leaf(b0.clone()), g.leaf(v0.clone()));
        let x = g.scalar_leaf(x0);
        let y = x.affine_map(w, b).tanh().matmul(v);
        let l = second_derivative(y, x).unwrap().square();
        let grads = g.grad(l, &[w, b, v], false).unwrap();
        let h = 1e-5;
        let params = [w0.clone(), b0.clone(), v0.clone()];
        for (k, p) in params.iter().enumerate() {
            for idx in 0..p.len() {
                let (r, c) = (idx / p.ncols(), idx % p.ncols());
                let mut plus = params.clone();
                let mut minus = params.clone();
                plus[k][[r, c]] += h;
                minus[k][[r, c]] -= h;
                let fd = (loss_of(&plus[0], &plus[1], &plus[2])
                    - loss_of(&minus[0], &minus[1], &minus[2]))
                    / (2.0 * h);
                let ad = grads[k].value()[[r, c]];
                let rel = (ad - fd).abs() / ad.abs().max(1e-8);
                assert!(rel < 1e-5, "param {k}[{r},{c}]: ad {ad} fd {fd}");
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn gradient_is_linear(a in -3.0f64..3.0, b in -3.0f64..3.0, x in -1.5f64..1.5) {
                let g = Graph::new();
                let xv = g.scalar_leaf(x);
                let f = xv.tanh() * xv.sin();
                let h = xv.powi(2).cos() / xv.shift(3.0);
                let combo = f.scale(a) + h.scale(b);
                let gc = g.grad(combo, &[xv], false).unwrap()[0].item();
                let gf = g.grad(f, &[xv], false).unwrap()[0].item();
                let gh = g.grad(h, &[xv], false).unwrap()[0].item();
                prop_assert!((gc - (a * gf + b * gh)).abs() <= 1e-12 * (1.0 + gc.abs()));
            }

            #[test]
            fn nested_grad_matches_second_derivative(x in -1.0f64..1.0) {
                let g = Graph::new();
                let xv = g.scalar_leaf(x);
                let f = (xv.tanh() + xv.cos()).powi(2);
                let direct = second_derivative(f, xv).unwrap().item();
                let first = g.grad(f, &[xv], true).unwrap()[0];
                let twice = g.grad(first, &[xv], false).unwrap()[0].item();
                prop_assert_eq!(direct, twice);
            }
        }
    }
}
