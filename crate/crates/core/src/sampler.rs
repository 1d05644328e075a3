//! Seeded collocation sets and mini-batches.
//!
//! All randomness comes from `ChaCha8Rng` (rand_chacha) seeded through
//! `seed_from_u64`, which is portable and fully specified, so a seed maps to the
//! same points on every platform. Coordinates are drawn in `f64`.

use std::io::Write;

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A space-time point `(x, t)`.
pub type Point = (f64, f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingCounts {
    pub n_interior: usize,
    pub n_boundary: usize,
    pub n_initial: usize,
}

impl SamplingCounts {
    pub const PAPER: SamplingCounts = SamplingCounts {
        n_interior: 20_000,
        n_boundary: 5_000,
        n_initial: 5_000,
    };
    pub const DESK: SamplingCounts = SamplingCounts {
        n_interior: 2_000,
        n_boundary: 500,
        n_initial: 500,
    };
}

impl Default for SamplingCounts {
    fn default() -> Self {
        Self::PAPER
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSet {
    /// Points in the open unit square.
    pub interior: Vec<Point>,
    /// Points with `x` in `{0, 1}`.
    pub boundary: Vec<Point>,
    /// Points with `t = 0`.
    pub initial: Vec<Point>,
    pub seed: u64,
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Draws interior, boundary and initial-condition points, deterministic in `seed`.
pub fn sample(counts: SamplingCounts, seed: u64) -> CollocationSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior = (0..counts.n_interior)
        .map(|_| (rng.sample(Open01), rng.sample(Open01)))
        .collect();
    let boundary = (0..counts.n_boundary)
        .map(|_| {
            let x = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
            (x, rng.random::<f64>())
        })
        .collect();
    let initial = (0..counts.n_initial)
        .map(|_| (rng.random::<f64>(), 0.0))
        .collect();
    CollocationSet {
        interior,
        boundary,
        initial,
        seed,
    }
}

impl CollocationSet {
    /// `k` distinct interior points drawn without replacement, deterministic in
    /// `(self.seed, step_seed)`.
    pub fn minibatch(&self, k: usize, step_seed: u64) -> Result<Vec<Point>> {
        let n = self.interior.len();
        if k == 0 || k > n {
            return Err(Error::Config(format!(
                "mini-batch size {k} must be in 1..={n} (interior set size)"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed, step_seed));
        Ok(rand::seq::index::sample(&mut rng, n, k)
            .into_iter()
            .map(|i| self.interior[i])
            .collect())
    }

    /// Writes `region,x,t` rows.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "region,x,t")?;
        for (region, pts) in [
            ("interior", &self.interior),
            ("boundary", &self.boundary),
            ("initial", &self.initial),
        ] {
            for (x, t) in pts {
                writeln!(w, "{region},{x},{t}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn key(p: &Point) -> (u64, u64) {
        (p.0.to_bits(), p.1.to_bits())
    }

    #[test]
    fn default_counts_and_regions() {
        let set = sample(SamplingCounts::PAPER, 2024);
        assert_eq!(set.interior.len(), 20_000);
        assert_eq!(set.boundary.len(), 5_000);
        assert_eq!(set.initial.len(), 5_000);
        assert!(set
            .interior
            .iter()
            .all(|&(x, t)| x > 0.0 && x < 1.0 && t > 0.0 && t < 1.0));
        assert!(set
            .boundary
            .iter()
            .all(|&(x, t)| x * (1.0 - x) == 0.0 && (0.0..=1.0).contains(&t)));
        assert!(set
            .initial
            .iter()
            .all(|&(x, t)| t == 0.0 && (0.0..=1.0).contains(&x)));
        let left = set.boundary.iter().filter(|p| p.0 == 0.0).count();
        assert!((2_300..2_700).contains(&left), "{left}");
    }

    #[test]
    fn uniformity_of_interior_x() {
        let set = sample(SamplingCounts::PAPER, 2024);
        let mean = set.interior.iter().map(|p| p.0).sum::<f64>() / 20_000.0;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
    }

    #[test]
    fn empty_and_deterministic() {
        let empty = sample(
            SamplingCounts {
                n_interior: 0,
                n_boundary: 0,
                n_initial: 0,
            },
            1,
        );
        assert!(empty.interior.is_empty() && empty.boundary.is_empty() && empty.initial.is_empty());
        assert_eq!(sample(SamplingCounts::DESK, 9), sample(SamplingCounts::DESK, 9));
        assert_ne!(sample(SamplingCounts::DESK, 9), sample(SamplingCounts::DESK, 10));
    }

    #[test]
    fn minibatches_are_distinct_and_reproducible() {
        let set = sample(SamplingCounts::PAPER, 2024);
        let b = set.minibatch(3_000, 17).unwrap();
        assert_eq!(b.len(), 3_000);
        let uniq: HashSet<_> = b.iter().map(key).collect();
        assert_eq!(uniq.len(), 3_000);
        assert_eq!(b, set.minibatch(3_000, 17).unwrap());
        let other = set.minibatch(3_000, 18).unwrap();
        assert_ne!(b, other);
        let other_set: HashSet<_> = other.iter().map(key).collect();
        assert_ne!(uniq, other_set);
    }

    #[test]
    fn full_minibatch_is_a_permutation() {
        let set = sample(SamplingCounts::DESK, 5);
        let b = set.minibatch(set.interior.len(), 3).unwrap();
        let mut a: Vec<_> = set.interior.iter().map(key).collect();
        let mut c: Vec<_> = b.iter().map(key).collect();
        a.sort_unstable();
        c.sort_unstable();
        assert_eq!(a, c);
    }

    #[test]
    fn oversized_minibatch_is_rejected() {
        let set = sample(SamplingCounts::DESK, 5);
        assert!(matches!(set.minibatch(2_001, 0), Err(Error::Config(_))));
        assert!(matches!(set.minibatch(0, 0), Err(Error::Config(_))));
    }

    #[test]
    fn csv_export() {
        let set = sample(
            SamplingCounts {
                n_interior: 2,
                n_boundary: 1,
                n_initial: 1,
            },
            3,
        );
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "region,x,t");
        assert!(lines[3].starts_with("boundary,"));
        assert!(lines[4].ends_with(",0"));
    }
}
