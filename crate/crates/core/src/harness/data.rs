//! Labelled datasets and small synthetic generators.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Inputs and labels with the first `n_train` rows forming the training
/// split and the rest the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Tensor,
    labels: Vec<usize>,
    classes: usize,
    n_train: usize,
}

impl Dataset {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize, n_train: usize) -> Result<Self> {
        if inputs.batch() != labels.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} labels",
                inputs.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidLabel { label: bad, classes });
        }
        if n_train > labels.len() {
            return Err(Error::invalid("training split larger than dataset"));
        }
        Ok(Self::from_parts(inputs, labels, classes, n_train))
    }

    pub(crate) fn from_parts(inputs: Tensor, labels: Vec<usize>, classes: usize, n_train: usize) -> Self {
        Self {
            inputs,
            labels,
            classes,
            n_train,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Per-sample shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn train(&self) -> (Tensor, &[usize]) {
        (self.inputs.slice_rows(0, self.n_train), &self.labels[..self.n_train])
    }

    pub fn test(&self) -> (Tensor, &[usize]) {
        (
            self.inputs.slice_rows(self.n_train, self.len()),
            &self.labels[self.n_train..],
        )
    }

    /// Re-splits with `test_inputs` appended as the test split.
    pub fn with_test(self, test: Dataset) -> Result<Self> {
        let classes = self.classes.max(test.classes);
        let n_train = self.len();
        let inputs = Tensor::concat_rows(&[self.inputs, test.inputs])?;
        let mut labels = self.labels;
        labels.extend(test.labels);
        Self::new(inputs, labels, classes, n_train)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SyntheticKind {
    Blobs,
    Spirals,
    GridImg,
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SyntheticKind::Blobs => "blobs",
            SyntheticKind::Spirals => "spirals",
            SyntheticKind::GridImg => "gridimg",
        })
    }
}

impl FromStr for SyntheticKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "blobs" => Ok(SyntheticKind::Blobs),
            "spirals" => Ok(SyntheticKind::Spirals),
            "gridimg" => Ok(SyntheticKind::GridImg),
            other => Err(Error::invalid(format!(
                "unknown synthetic dataset `{other}` (expected blobs, spirals or gridimg)"
            ))),
        }
    }
}

pub const BLOBS_DIM: usize = 16;
pub const GRID_SIDE: usize = 8;
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub classes: usize,
    pub seed: u64,
    /// Distance between blob means in units of the cluster std.
    pub separation: f64,
    /// Additive Gaussian noise std (spirals, gridimg).
    pub noise: f64,
    /// Maximum circular shift of gridimg templates, in pixels per axis.
    pub max_shift: usize,
}

impl SyntheticSpec {
    pub fn new(kind: SyntheticKind, n: usize, classes: usize, seed: u64) -> Self {
        let noise = match kind {
            SyntheticKind::Spirals => 0.1,
            _ => 0.5,
        };
        Self {
            kind,
            n,
            classes,
            seed,
            separation: 4.0,
            noise,
            max_shift: 0,
        }
    }
}

pub fn gen_synthetic(kind: SyntheticKind, n: usize, classes: usize, seed: u64) -> Result<Dataset> {
    generate(&SyntheticSpec::new(kind, n, classes, seed))
}

/// Draws `n` samples with balanced labels (`i mod classes`), shuffles them,
/// and keeps the first 80% for training.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    let SyntheticSpec { n, classes, .. } = *spec;
    if classes == 0 || n < 2 * classes {
        return Err(Error::invalid(format!(
            "need n >= 2 * classes, got n = {n}, classes = {classes}"
        )));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::config("noise", "must be finite and >= 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.shuffle(&mut rng);
    let (shape, data) = match spec.kind {
        SyntheticKind::Blobs => (vec![n, BLOBS_DIM], blobs(spec, &labels, &mut rng)?),
        SyntheticKind::Spirals => (vec![n, 2], spirals(spec, &labels, &mut rng)),
        SyntheticKind::GridImg => (
            vec![n, 1, GRID_SIDE, GRID_SIDE],
            gridimg(spec, &labels, &mut rng),
        ),
    };
    let inputs = Tensor::new(shape, data)?;
    let n_train = ((n as f64) * TRAIN_FRACTION).round() as usize;
    Dataset::new(inputs, labels, classes, n_train)
}

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("std is finite and non-negative")
}

// Means at (sep / sqrt 2) e_c are pairwise `sep` apart.
fn blobs(spec: &SyntheticSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if spec.classes > BLOBS_DIM {
        return Err(Error::invalid(format!(
            "blobs supports at most {BLOBS_DIM} classes"
        )));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(Error::config("separation", "must be finite and >= 0"));
    }
    let offset = spec.separation / 2f64.sqrt();
    let unit = normal(1.0);
    let mut out = Vec::with_capacity(labels.len() * BLOBS_DIM);
    for &c in labels {
        for d in 0..BLOBS_DIM {
            let mean = if d == c { offset } else { 0.0 };
            out.push(mean + unit.sample(rng));
        }
    }
    Ok(out)
}

// Arms r = t, angle = 3 pi t + 2 pi c / classes, t uniform in [0.1, 1].
fn spirals(spec: &SyntheticSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = normal(spec.noise);
    let mut out = Vec::with_capacity(labels.len() * 2);
    for &c in labels {
        let t: f64 = rng.random_range(0.1..1.0);
        let a = 3.0 * PI * t + 2.0 * PI * c as f64 / spec.classes as f64;
        out.push(t * a.cos() + noise.sample(rng));
        out.push(t * a.sin() + noise.sample(rng));
    }
    out
}

// One unit-variance template per class, optionally circularly shifted,
// plus pixel noise.
fn gridimg(spec: &SyntheticSpec, labels: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let px = GRID_SIDE * GRID_SIDE;
    let unit = normal(1.0);
    let templates: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..px).map(|_| unit.sample(rng)).collect())
        .collect();
    let noise = normal(spec.noise);
    let s = spec.max_shift as i64;
    let mut out = Vec::with_capacity(labels.len() * px);
    for &c in labels {
        let (dy, dx) = if s > 0 {
            (rng.random_range(-s..=s), rng.random_range(-s..=s))
        } else {
            (0, 0)
        };
        let side = GRID_SIDE as i64;
        for i in 0..side {
            for j in 0..side {
                let si = (i - dy).rem_euclid(side) as usize;
                let sj = (j - dx).rem_euclid(side) as usize;
                out.push(templates[c][si * GRID_SIDE + sj] + noise.sample(rng));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_data() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::Spirals, SyntheticKind::GridImg] {
            let a = gen_synthetic(kind, 50, 3, 9).unwrap();
            let b = gen_synthetic(kind, 50, 3, 9).unwrap();
            assert_eq!(a, b);
            assert_ne!(a, gen_synthetic(kind, 50, 3, 10).unwrap());
        }
    }

    #[test]
    fn split_is_80_20_and_covering() {
        let d = gen_synthetic(SyntheticKind::GridImg, 100, 2, 0).unwrap();
        assert_eq!(d.train().1.len(), 80);
        assert_eq!(d.test().1.len(), 20);
        assert_eq!(d.train().0.shape(), &[80, 1, 8, 8]);
        assert_eq!(d.sample_shape(), &[1, 8, 8]);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(gen_synthetic(SyntheticKind::Blobs, 5, 3, 0).is_err());
        assert!("moons".parse::<SyntheticKind>().is_err());
    }

    #[test]
    fn labels_balanced() {
        let d = gen_synthetic(SyntheticKind::Spirals, 90, 3, 1).unwrap();
        for c in 0..3 {
            assert_eq!(d.labels().iter().filter(|&&l| l == c).count(), 30);
        }
    }
}
