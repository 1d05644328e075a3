//! Fully connected tanh network `(x, t) -> (u_raw, phi_raw)` and the
//! hard-constraint transform that pins the Dirichlet boundary values and the
//! initial displacement/potential profile.

use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::real::{lit, Precision, Real};

pub const INPUT_WIDTH: usize = 2;
pub const OUTPUT_WIDTH: usize = 2;

/// Network shape: `hidden_layers` tanh layers of `width` neurons each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub width: usize,
    pub hidden_layers: usize,
}

impl NetworkConfig {
    /// 8 hidden layers of 180 neurons.
    pub const PAPER: NetworkConfig = NetworkConfig {
        width: 180,
        hidden_layers: 8,
    };
    /// 4 hidden layers of 64 neurons, small enough for CI.
    pub const DESK: NetworkConfig = NetworkConfig {
        width: 64,
        hidden_layers: 4,
    };

    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_layers + 2);
        w.push(INPUT_WIDTH);
        w.extend(std::iter::repeat_n(self.width, self.hidden_layers));
        w.push(OUTPUT_WIDTH);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config(format!(
                "network width and hidden_layers must be positive, got {}x{}",
                self.hidden_layers, self.width
            )));
        }
        Ok(())
    }
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::PAPER
    }
}

/// Displacement and potential, either as plain numbers or as graph nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldPair<V> {
    pub u: V,
    pub phi: V,
}

/// Weights (`out x in`) and biases of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParameters<T> {
    widths: Vec<usize>,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
}

impl<T: Real> NetworkParameters<T> {
    /// Xavier-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                lit::<T>((2.0 * rng.random::<f64>() - 1.0) * bound)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(NetworkParameters {
            widths,
            weights,
            biases,
        })
    }

    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let widths = config.widths();
        let weights = widths
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = widths.windows(2).map(|p| Array1::zeros(p[1])).collect();
        Ok(NetworkParameters {
            widths,
            weights,
            biases,
        })
    }

    /// Builds parameters from explicit layers, checking the shape chain.
    pub fn from_layers(weights: Vec<Array2<T>>, biases: Vec<Array1<T>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices but {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut widths = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *widths.last().expect("non-empty") || w.nrows() != b.len() {
                return Err(Error::Shape(format!(
                    "layer {:?} does not follow width {} with bias {}",
                    w.dim(),
                    widths.last().expect("non-empty"),
                    b.len()
                )));
            }
            widths.push(w.nrows());
        }
        if widths[0] != INPUT_WIDTH || *widths.last().expect("non-empty") != OUTPUT_WIDTH {
            return Err(Error::Shape(format!(
                "network must map {INPUT_WIDTH} inputs to {OUTPUT_WIDTH} outputs, got {widths:?}"
            )));
        }
        Ok(NetworkParameters {
            widths,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn parameter_count(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// All weights (layer order, row-major) followed by all biases.
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.parameter_count());
        for w in &self.weights {
            flat.extend(w.iter().copied());
        }
        for b in &self.biases {
            flat.extend(b.iter().copied());
        }
        flat
    }

    /// Overwrites every parameter from a vector in [`Self::to_flat`] order.
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, network has {} parameters",
                flat.len(),
                self.parameter_count()
            )));
        }
        let mut it = flat.iter().copied();
        for w in &mut self.weights {
            w.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        for b in &mut self.biases {
            b.iter_mut().for_each(|v| *v = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn with_flat(&self, flat: &[T]) -> Result<Self> {
        let mut p = self.clone();
        p.set_flat(flat)?;
        Ok(p)
    }

    /// FNV-1a over the little-endian parameter bytes.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.parameter_count() * T::BYTES);
        for v in self.to_flat() {
            v.write_le(&mut bytes);
        }
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    /// Records every parameter as a leaf of `graph`.
    pub fn register<'g>(&self, graph: &'g Graph<T>, differentiable: bool) -> ParamVars<'g, T> {
        let make = |a: Array2<T>| {
            if differentiable {
                graph.leaf(a)
            } else {
                graph.constant(a)
            }
        };
        ParamVars {
            weights: self.weights.iter().map(|w| make(w.clone())).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| make(b.clone().insert_axis(Axis(0))))
                .collect(),
        }
    }

    /// Raw network output for a batch of points, without recording a graph.
    pub fn predict_raw(&self, xs: &[T], ts: &[T]) -> (Vec<T>, Vec<T>) {
        assert_eq!(xs.len(), ts.len(), "x and t batches differ in length");
        let mut input = Array2::zeros((xs.len(), INPUT_WIDTH));
        input.column_mut(0).assign(&Array1::from(xs.to_vec()));
        input.column_mut(1).assign(&Array1::from(ts.to_vec()));
        let last = self.weights.len() - 1;
        let mut h = input;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut a = h.dot(&w.t());
            a += &b.view().insert_axis(Axis(0));
            if k < last {
                a.mapv_inplace(T::tanh);
            }
            h = a;
        }
        (h.slice(s![.., 0]).to_vec(), h.slice(s![.., 1]).to_vec())
    }

    /// Constrained fields `(u, phi)` for a batch of points, without recording a graph.
    pub fn predict(&self, xs: &[T], ts: &[T]) -> (Vec<T>, Vec<T>) {
        let (ur, pr) = self.predict_raw(xs, ts);
        let mut u = Vec::with_capacity(xs.len());
        let mut phi = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let f = constrain_values(
                FieldPair {
                    u: ur[i],
                    phi: pr[i],
                },
                xs[i],
                ts[i],
            );
            u.push(f.u);
            phi.push(f.phi);
        }
        (u, phi)
    }
}

/// Parameters recorded on a graph, in the same order as [`NetworkParameters::to_flat`].
pub struct ParamVars<'g, T: Real> {
    pub weights: Vec<Var<'g, T>>,
    /// Bias rows of shape `1 x out`.
    pub biases: Vec<Var<'g, T>>,
}

impl<'g, T: Real> ParamVars<'g, T> {
    pub fn all(&self) -> Vec<Var<'g, T>> {
        self.weights.iter().chain(&self.biases).copied().collect()
    }

    /// Affine -> tanh through every hidden layer, final layer affine only.
    /// `x` and `t` are `n x 1` columns; both outputs are `n x 1`.
    pub fn forward_raw(&self, x: Var<'g, T>, t: Var<'g, T>) -> FieldPair<Var<'g, T>> {
        let w0 = self.weights[0];
        let mut h = (x.mm(w0.column(0), false, true) + t.mm(w0.column(1), false, true))
            .add_row(self.biases[0])
            .tanh();
        let last = self.weights.len() - 1;
        for k in 1..=last {
            let a = h.affine_map(self.weights[k], self.biases[k]);
            h = if k < last { a.tanh() } else { a };
        }
        FieldPair {
            u: h.column(0),
            phi: h.column(1),
        }
    }

    /// Constrained outputs, differentiable in the inputs and the parameters.
    pub fn forward(&self, x: Var<'g, T>, t: Var<'g, T>) -> FieldPair<Var<'g, T>> {
        apply_hard_constraints(self.forward_raw(x, t), x, t)
    }
}

/// `u = x(1-x) u_raw + sin(pi x)(1-t)`, `phi = x(1-x) phi_raw + 0.5 sin(pi x)(1-t)`.
pub fn apply_hard_constraints<'g, T: Real>(
    raw: FieldPair<Var<'g, T>>,
    x: Var<'g, T>,
    t: Var<'g, T>,
) -> FieldPair<Var<'g, T>> {
    let one = T::one();
    let bubble = x * x.affine(-one, one);
    let lift = x.scale(T::PI()).sin() * t.affine(-one, one);
    FieldPair {
        u: bubble * raw.u + lift,
        phi: bubble * raw.phi + lift.scale(lit(0.5)),
    }
}

/// Plain-number form of [`apply_hard_constraints`].
pub fn constrain_values<T: Real>(raw: FieldPair<T>, x: T, t: T) -> FieldPair<T> {
    let bubble = x * (T::one() - x);
    let lift = (T::PI() * x).sin() * (T::one() - t);
    FieldPair {
        u: bubble * raw.u + lift,
        phi: bubble * raw.phi + lit::<T>(0.5) * lift,
    }
}

// Checkpoint layout (little-endian):
//   b"PPINN" | u32 version | u8 precision (32/64) | u32 layer-width count |
//   u32 widths... | weights (layer order, row-major) | biases (layer order)
pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PPINN";
pub const CHECKPOINT_VERSION: u32 = 1;

impl<T: Real> NetworkParameters<T> {
    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.parameter_count() * T::BYTES);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::PRECISION.tag());
        out.extend_from_slice(&(self.widths.len() as u32).to_le_bytes());
        for &w in &self.widths {
            out.extend_from_slice(&(w as u32).to_le_bytes());
        }
        for v in self.to_flat() {
            v.write_le(&mut out);
        }
        out
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let header = CheckpointHeader::parse(bytes)?;
        if header.precision != T::PRECISION {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {}-bit values, expected {}-bit",
                header.precision, T::PRECISION
            )));
        }
        let widths = header.widths;
        if widths.len() < 3 {
            return Err(Error::Checkpoint(format!("too few layers: {widths:?}")));
        }
        let count: usize = widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        let body = &bytes[header.body_offset..];
        if body.len() != count * T::BYTES {
            return Err(Error::Checkpoint(format!(
                "body holds {} bytes, widths {:?} need {}",
                body.len(),
                widths,
                count * T::BYTES
            )));
        }
        let flat: Vec<T> = body.chunks_exact(T::BYTES).map(T::read_le).collect();
        let weights = widths
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = widths.windows(2).map(|p| Array1::zeros(p[1])).collect();
        let mut params = NetworkParameters::from_layers(weights, biases)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        params.set_flat(&flat)?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&std::fs::read(path)?)
    }
}

/// Decoded checkpoint header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckpointHeader {
    pub version: u32,
    pub precision: Precision,
    pub widths: Vec<usize>,
    pub body_offset: usize,
}

impl CheckpointHeader {
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Checkpoint("truncated header".into());
        if bytes.len() < 14 {
            return Err(truncated());
        }
        if &bytes[..5] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not a PPINN checkpoint".into()));
        }
        let read_u32 = |at: usize| -> Result<u32> {
            bytes
                .get(at..at + 4)
                .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
                .ok_or_else(truncated)
        };
        let version = read_u32(5)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let precision = Precision::from_tag(bytes[9])
            .ok_or_else(|| Error::Checkpoint(format!("unknown precision tag {}", bytes[9])))?;
        let n = read_u32(10)? as usize;
        let mut widths = Vec::with_capacity(n.min(1024));
        for k in 0..n {
            widths.push(read_u32(14 + 4 * k)? as usize);
        }
        Ok(CheckpointHeader {
            version,
            precision,
            widths,
            body_offset: 14 + 4 * n,
        })
    }
}

/// A checkpoint of either precision.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyNetwork {
    F32(NetworkParameters<f32>),
    F64(NetworkParameters<f64>),
}

impl AnyNetwork {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        match CheckpointHeader::parse(&bytes)?.precision {
            Precision::F32 => Ok(AnyNetwork::F32(NetworkParameters::from_checkpoint_bytes(
                &bytes,
            )?)),
            Precision::F64 => Ok(AnyNetwork::F64(NetworkParameters::from_checkpoint_bytes(
                &bytes,
            )?)),
        }
    }
}
