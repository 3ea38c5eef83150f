//! The experiments behind each scenario kind, plus shared random-instance
//! generators. Every random instance draws from its own ChaCha stream so
//! results do not depend on the thread count.

pub mod brenier;
pub mod convexity;
pub mod gamma;
pub mod heat;
pub mod hopflax;
pub mod identify;
pub mod ot;
pub mod slope;

use mmslab_core::space::{geodesic_edges, FiniteMetricMeasureSpace};
use mmslab_core::transport::ProbabilityMeasure;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

/// Generator for the `stream`-th random instance under `seed`.
pub fn instance_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Connected random graph: a random spanning tree plus up to `n` chords,
/// edge lengths in `[0.2, 2)`, measure in `[0.5, 2)`. Edges longer than the
/// path metric between their ends are dropped.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Result<FiniteMetricMeasureSpace> {
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for i in 1..n {
        edges.push((rng.gen_range(0..i), i, rng.gen_range(0.2..2.0)));
    }
    for _ in 0..n {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let key = (a.min(b), a.max(b));
        if a != b && !edges.iter().any(|e| (e.0, e.1) == key) {
            edges.push((key.0, key.1, rng.gen_range(0.2..2.0)));
        }
    }
    let measure = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
    let edges = geodesic_edges(&edges, n)?;
    Ok(FiniteMetricMeasureSpace::from_edges(n, &edges, measure)?)
}

/// Random probability vector; each point is empty with probability
/// `sparsity` (at least one point keeps mass).
pub fn random_measure(rng: &mut ChaCha8Rng, n: usize, sparsity: f64) -> ProbabilityMeasure {
    let mut w: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen_bool(sparsity) {
                0.0
            } else {
                rng.gen_range(0.0..1.0)
            }
        })
        .collect();
    if w.iter().all(|x| *x == 0.0) {
        w[rng.gen_range(0..n)] = 1.0;
    }
    ProbabilityMeasure::normalized(w).expect("nonzero finite weights")
}

/// Positive density with values in `[lo, hi)`.
pub fn random_density(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Count and worst size of violations above a tolerance.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Tally {
    pub violations: usize,
    pub worst: f64,
    pub tested: usize,
}

impl Tally {
    /// Records an excess (positive means the inequality fails by that much).
    pub fn record(&mut self, excess: f64, tol: f64) {
        self.tested += 1;
        if excess.is_nan() || excess > tol {
            self.violations += 1;
        }
        if excess > self.worst || excess.is_nan() {
            self.worst = excess;
        }
    }

    pub fn merge(&mut self, other: &Tally) {
        self.violations += other.violations;
        self.tested += other.tested;
        if other.worst > self.worst || other.worst.is_nan() {
            self.worst = other.worst;
        }
    }
}

/// Max-norm of a difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
