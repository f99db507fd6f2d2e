//! Worker selection model for the asynchronous simulation.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Selection probabilities over `J` workers, with the slowdown that
/// produced them when built by [`make_slowdown_pmf`].
#[derive(Debug, Clone, PartialEq)]
pub struct DelayModel {
    pmf: Vec<f64>,
    /// 1-based index of the slowed worker.
    slowed: Option<usize>,
    slowdown: f64,
}

const PMF_TOL: f64 = 1e-12;

impl DelayModel {
    pub fn uniform(workers: usize) -> Result<Self> {
        Self::from_pmf(vec![1.0 / workers as f64; workers])
    }

    pub fn from_pmf(pmf: Vec<f64>) -> Result<Self> {
        if pmf.is_empty() {
            return Err(Error::invalid("pmf over zero workers"));
        }
        if pmf.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::invalid(format!("pmf entries must be positive: {pmf:?}")));
        }
        let sum: f64 = pmf.iter().sum();
        if (sum - 1.0).abs() > PMF_TOL {
            return Err(Error::invalid(format!("pmf sums to {sum}, not 1")));
        }
        Ok(Self {
            pmf,
            slowed: None,
            slowdown: 1.0,
        })
    }

    pub fn workers(&self) -> usize {
        self.pmf.len()
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn slowed(&self) -> Option<usize> {
        self.slowed
    }

    pub fn slowdown(&self) -> f64 {
        self.slowdown
    }

    pub fn sampler(&self, seed: u64) -> PmfSampler {
        PmfSampler {
            dist: WeightedIndex::new(&self.pmf).expect("pmf validated at construction"),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

/// Weights 1 everywhere except `1 / s` at worker `slowed` (1-based),
/// normalized.
pub fn make_slowdown_pmf(workers: usize, slowed: usize, s: f64) -> Result<DelayModel> {
    if !(s >= 1.0 && s.is_finite()) {
        return Err(Error::config("slowdown", format!("must be >= 1, got {s}")));
    }
    if slowed == 0 || slowed > workers {
        return Err(Error::config(
            "slowed_stage",
            format!("must lie in 1..={workers}, got {slowed}"),
        ));
    }
    let total = (workers - 1) as f64 + 1.0 / s;
    let pmf = (1..=workers)
        .map(|j| if j == slowed { 1.0 / s / total } else { 1.0 / total })
        .collect();
    let mut m = DelayModel::from_pmf(pmf)?;
    m.slowed = Some(slowed);
    m.slowdown = s;
    Ok(m)
}

/// Source of 0-based worker indices for each simulation tick.
pub trait WorkerSampler {
    fn next_worker(&mut self) -> usize;
}

#[derive(Debug, Clone)]
pub struct PmfSampler {
    dist: WeightedIndex<f64>,
    rng: ChaCha8Rng,
}

impl WorkerSampler for PmfSampler {
    fn next_worker(&mut self) -> usize {
        self.dist.sample(&mut self.rng)
    }
}

/// Replays a fixed list of 0-based worker indices, cycling at the end.
#[derive(Debug, Clone)]
pub struct ScriptedSampler {
    script: Vec<usize>,
    pos: usize,
}

impl ScriptedSampler {
    pub fn new(script: Vec<usize>) -> Self {
        assert!(!script.is_empty(), "empty worker script");
        Self { script, pos: 0 }
    }
}

impl WorkerSampler for ScriptedSampler {
    fn next_worker(&mut self) -> usize {
        let w = self.script[self.pos % self.script.len()];
        self.pos += 1;
        w
    }
}
