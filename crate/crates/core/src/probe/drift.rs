//! Histogram proxy for the distance between a stage's current and final
//! input distributions.
//!
//! Activations are flattened, projected to 2-D by a fixed Gaussian matrix,
//! and binned on a grid whose bounds come from the reference activations.
//! Points outside the grid share one overflow bin, so every histogram has
//! unit mass and the L1 distance lies in `[0, 2]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const GRID_BINS: usize = 32;

/// Sum of absolute differences between two histograms of equal length,
/// clipped to 2 against rounding in the bin masses.
pub fn histogram_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "histograms of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>().min(2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftProbe {
    /// `dim x 2`, row-major.
    projection: Vec<f64>,
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    bins: usize,
}

impl DriftProbe {
    /// Freezes the projection (seeded) and the grid bounds from
    /// `reference`.
    pub fn new(reference: &Tensor, seed: u64) -> Result<Self> {
        Self::with_bins(reference, seed, GRID_BINS)
    }

    pub fn with_bins(reference: &Tensor, seed: u64, bins: usize) -> Result<Self> {
        if reference.batch() == 0 || reference.is_empty() || bins == 0 {
            return Err(Error::invalid("drift probe needs non-empty reference activations"));
        }
        let dim = reference.row_len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let projection = (0..dim * 2).map(|_| rng.sample(StandardNormal)).collect();
        let mut p = Self {
            projection,
            dim,
            lo: [0.0; 2],
            hi: [0.0; 2],
            bins,
        };
        let pts = p.project(reference)?;
        for a in 0..2 {
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for q in &pts {
                lo = lo.min(q[a]);
                hi = hi.max(q[a]);
            }
            if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                lo -= 0.5;
                hi += 0.5;
            }
            p.lo[a] = lo;
            p.hi[a] = hi;
        }
        Ok(p)
    }

    fn project(&self, acts: &Tensor) -> Result<Vec<[f64; 2]>> {
        if acts.batch() == 0 || acts.row_len() != self.dim {
            return Err(Error::Dimension {
                op: "drift projection",
                left: acts.shape().to_vec(),
                right: vec![self.dim],
            });
        }
        Ok(acts
            .data()
            .chunks(self.dim)
            .map(|row| {
                let mut q = [0.0; 2];
                for (i, v) in row.iter().enumerate() {
                    q[0] += v * self.projection[2 * i];
                    q[1] += v * self.projection[2 * i + 1];
                }
                q
            })
            .collect())
    }

    fn cell(&self, v: f64, a: usize) -> Option<usize> {
        let (lo, hi) = (self.lo[a], self.hi[a]);
        if !(v >= lo && v <= hi) {
            return None;
        }
        let c = ((v - lo) / (hi - lo) * self.bins as f64) as usize;
        Some(c.min(self.bins - 1))
    }

    /// Normalized counts: `bins^2` grid cells then the overflow bin.
    pub fn histogram(&self, acts: &Tensor) -> Result<Vec<f64>> {
        let pts = self.project(acts)?;
        let overflow = self.bins * self.bins;
        let mut counts = vec![0usize; overflow + 1];
        let n = pts.len() as f64;
        for q in pts {
            let i = match (self.cell(q[0], 0), self.cell(q[1], 1)) {
                (Some(r), Some(c)) => r * self.bins + c,
                _ => overflow,
            };
            counts[i] += 1;
        }
        Ok(counts.into_iter().map(|c| c as f64 / n).collect())
    }

    pub fn drift(&self, acts: &Tensor, reference: &Tensor) -> Result<f64> {
        histogram_distance(&self.histogram(acts)?, &self.histogram(reference)?)
    }
}

/// One-shot drift: projection and grid frozen from `reference`.
pub fn drift_estimate(acts: &Tensor, reference: &Tensor, seed: u64) -> Result<f64> {
    DriftProbe::new(reference, seed)?.drift(acts, reference)
}
