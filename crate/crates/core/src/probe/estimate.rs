//! Gradient-norm and smoothness/variance constant estimates.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::GreedyStage;
use crate::nn::Mode;
use crate::tensor::{norm_sq_all, Tensor};

/// Squared norm of the full-batch gradient of the stage's local loss on
/// `(x, y)`, computed in eval mode so normalization statistics are left
/// untouched.
pub fn grad_norm_estimate(stage: &GreedyStage, x: &Tensor, y: &[usize]) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::invalid("gradient norm on an empty evaluation set"));
    }
    let mut s = stage.clone();
    Ok(norm_sq_all(&s.local_grad(x, y, Mode::Eval)?.grads))
}

/// A parametric loss over a fixed sample set, seen through flat vectors.
pub trait ProbeModel {
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]) -> Result<()>;
    fn sample_count(&self) -> usize;
    /// Gradient of the loss on sample `i` alone.
    fn sample_grad(&mut self, i: usize) -> Result<Vec<f64>>;
    /// Gradient of the mean loss over all samples.
    fn full_grad(&mut self) -> Result<Vec<f64>>;
}

/// A stage's local loss on a fixed set of inputs.
#[derive(Debug, Clone)]
pub struct StageProbe {
    stage: GreedyStage,
    x: Tensor,
    y: Vec<usize>,
}

impl StageProbe {
    pub fn new(stage: GreedyStage, x: Tensor, y: Vec<usize>) -> Result<Self> {
        if y.is_empty() || x.batch() != y.len() {
            return Err(Error::invalid("stage probe needs a non-empty, matching sample set"));
        }
        Ok(Self { stage, x, y })
    }

    fn grad(&mut self, x: &Tensor, y: &[usize]) -> Result<Vec<f64>> {
        let g = self.stage.local_grad(x, y, Mode::Eval)?;
        Ok(g.grads.iter().flat_map(|t| t.data().iter().copied()).collect())
    }
}

impl ProbeModel for StageProbe {
    fn params(&self) -> Vec<f64> {
        self.stage.flat_params()
    }

    fn set_params(&mut self, p: &[f64]) -> Result<()> {
        self.stage.set_flat_params(p)
    }

    fn sample_count(&self) -> usize {
        self.y.len()
    }

    fn sample_grad(&mut self, i: usize) -> Result<Vec<f64>> {
        let x = self.x.slice_rows(i, i + 1);
        let y = [self.y[i]];
        self.grad(&x, &y)
    }

    fn full_grad(&mut self) -> Result<Vec<f64>> {
        let (x, y) = (self.x.clone(), self.y.clone());
        self.grad(&x, &y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantEstimates {
    /// Max squared per-sample gradient norm seen.
    pub g: f64,
    /// Max gradient-difference ratio seen.
    pub l_lip: f64,
    pub protocol: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingPlan {
    /// Parameter points drawn.
    pub budget: usize,
    /// Radius of the ball around the first iterate.
    pub radius: f64,
    /// Samples `z` examined per parameter point.
    pub samples_per_point: usize,
    pub seed: u64,
}

impl SamplingPlan {
    pub fn new(budget: usize, seed: u64) -> Self {
        Self {
            budget,
            radius: 1.0,
            samples_per_point: 16,
            seed,
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn ball_point(center: &[f64], radius: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dir: Vec<f64> = (0..center.len()).map(|_| rng.sample(StandardNormal)).collect();
    let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let r = radius * rng.random::<f64>().powf(1.0 / center.len().max(1) as f64);
    center.iter().zip(&dir).map(|(c, d)| c + r * d / norm).collect()
}

/// Lower-bound estimates of the variance bound `G` and smoothness `L`.
///
/// Parameter points alternate between the ball of radius `plan.radius`
/// around `iterates[0]` and evenly spaced visited iterates. `G` is the max
/// of `|grad l(z; theta)|^2` over the points and a random subset of
/// samples; `L` is the max of `|grad L(a) - grad L(b)| / |a - b|` over all
/// pairs of points. The model's parameters are restored afterwards.
pub fn estimate_constants(
    model: &mut dyn ProbeModel,
    iterates: &[Vec<f64>],
    plan: &SamplingPlan,
) -> Result<ConstantEstimates> {
    if plan.budget < 2 {
        return Err(Error::invalid(format!(
            "constant estimation needs a budget of at least 2, got {}",
            plan.budget
        )));
    }
    let saved = model.params();
    let center = iterates.first().cloned().unwrap_or_else(|| saved.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let from_ball = if iterates.is_empty() { plan.budget } else { plan.budget.div_ceil(2) };
    let from_path = plan.budget - from_ball;
    let mut points: Vec<Vec<f64>> = (0..from_ball)
        .map(|_| ball_point(&center, plan.radius, &mut rng))
        .collect();
    for k in 0..from_path {
        let i = if from_path == 1 {
            iterates.len() - 1
        } else {
            k * (iterates.len() - 1) / (from_path - 1)
        };
        points.push(iterates[i].clone());
    }

    let n = model.sample_count();
    let per = plan.samples_per_point.clamp(1, n);
    let mut g: f64 = 0.0;
    let mut grads = Vec::with_capacity(points.len());
    for p in &points {
        model.set_params(p)?;
        for i in sample(&mut rng, n, per) {
            let s = model.sample_grad(i)?;
            g = g.max(s.iter().map(|v| v * v).sum());
        }
        grads.push(model.full_grad()?);
    }
    let mut l: f64 = 0.0;
    for a in 0..points.len() {
        for b in a + 1..points.len() {
            let d = dist(&points[a], &points[b]);
            if d > 0.0 {
                l = l.max(dist(&grads[a], &grads[b]) / d);
            }
        }
    }
    model.set_params(&saved)?;
    Ok(ConstantEstimates {
        g,
        l_lip: l,
        protocol: format!(
            "{from_ball} points in radius-{} ball + {from_path} visited iterates, {per} samples per point, seed {}",
            plan.radius, plan.seed
        ),
    })
}
