//! Two-stage linear-softmax experiment that records every quantity the
//! bound check needs.
//!
//! Stage 1 is a linear map `R^16 -> R^16` with a linear local classifier;
//! stage 2 is a linear classifier on stage 1's output. Both train
//! synchronously with Robbins-Monro steps. Every pre-update parameter
//! vector is kept; afterwards stage 2's gradient norm and loss are measured
//! on the converged stage-1 representation of the held-out set, and the
//! drift between each step's stage-1 output and the final one is estimated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bound::{bound_check, BoundReport, TheoryTrace, TracePoint};
use super::drift::DriftProbe;
use super::estimate::{estimate_constants, ConstantEstimates, SamplingPlan, StageProbe};
use crate::error::{Error, Result};
use crate::harness::data::{generate, SyntheticKind, SyntheticSpec, BLOBS_DIM};
use crate::net::{AuxKind, ClassifierKind, GreedyStage, HeadSpec, StageSpec};
use crate::nn::{LayerSpec, Mode};
use crate::sched::{BatchStream, MetricRecord, OptimizerConfig};
use crate::tensor::{norm_sq_all, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryConfig {
    pub n: usize,
    pub classes: usize,
    pub separation: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub eta0: f64,
    pub alpha: f64,
    pub seeds: Vec<u64>,
    /// Parameter points for the constant estimates.
    pub budget: usize,
    pub radius: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            n: 1000,
            classes: 4,
            separation: 4.0,
            batch_size: 16,
            steps: 5000,
            eta0: 0.5,
            alpha: 0.7,
            seeds: vec![0, 1, 2],
            budget: 32,
            radius: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryOutcome {
    /// Stage-2 trace of each seed.
    pub traces: Vec<TheoryTrace>,
    pub averaged: TheoryTrace,
    pub constants: ConstantEstimates,
    pub initial_loss: f64,
    pub bound: BoundReport,
}

impl TheoryOutcome {
    /// Final best-so-far gradient norm over the initial one.
    pub fn grad_norm_ratio(&self) -> f64 {
        let best = self.averaged.best_so_far();
        best[best.len() - 1] / best[0]
    }

    /// Drift at the last checkpoint over the largest drift seen.
    pub fn drift_ratio(&self) -> f64 {
        let pts = &self.averaged.points;
        let max = pts.iter().map(|p| p.drift).fold(0.0, f64::max);
        if max == 0.0 {
            0.0
        } else {
            pts[pts.len() - 1].drift / max
        }
    }
}

pub fn toy_specs(classes: usize) -> Vec<StageSpec> {
    vec![
        StageSpec {
            input_shape: vec![BLOBS_DIM],
            layers: vec![LayerSpec::Dense { out: BLOBS_DIM }],
            head: HeadSpec::Aux(AuxKind::Linear),
            classes,
        },
        StageSpec {
            input_shape: vec![BLOBS_DIM],
            layers: vec![],
            head: HeadSpec::Classifier(ClassifierKind::Linear),
            classes,
        },
    ]
}

struct SeedRun {
    trace: TheoryTrace,
    constants: ConstantEstimates,
}

fn with_params(stage: &GreedyStage, p: &[f64]) -> Result<GreedyStage> {
    let mut s = stage.clone();
    s.set_flat_params(p)?;
    Ok(s)
}

fn run_seed(cfg: &TheoryConfig, seed: u64) -> Result<SeedRun> {
    let mut spec = SyntheticSpec::new(SyntheticKind::Blobs, cfg.n, cfg.classes, seed);
    spec.separation = cfg.separation;
    let data = generate(&spec)?;
    let (x, y) = data.train();
    let (ex, ey) = data.test();
    let mut stream = BatchStream::new(x, y.to_vec(), cfg.batch_size, seed)?;
    let opt = OptimizerConfig::robbins_monro(cfg.eta0, cfg.alpha)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = GreedyStage::build_all(&toy_specs(cfg.classes), &mut rng)?;

    let steps = cfg.steps as usize;
    let mut path1 = Vec::with_capacity(steps);
    let mut path2 = Vec::with_capacity(steps);
    let mut lrs = Vec::with_capacity(steps);
    for t in 0..cfg.steps {
        path1.push(stages[0].flat_params());
        path2.push(stages[1].flat_params());
        let sgd = opt.sgd_at(t, 0);
        lrs.push(sgd.lr);
        let b = stream.next_batch();
        let (x1, _) = stages[0].step(&b.x, &b.y, &sgd)?;
        stages[1].step(&x1, &b.y, &sgd)?;
    }

    let reference = stages[0].forward(&ex)?;
    let probe = DriftProbe::new(&reference, seed)?;
    let ref_hist = probe.histogram(&reference)?;
    let mut points = Vec::with_capacity(steps);
    let mut snapshots = Vec::new();
    let quarter = (steps / 4).max(1);
    for t in 0..steps {
        let acts = with_params(&stages[0], &path1[t])?.forward(&ex)?;
        let drift = super::drift::histogram_distance(&probe.histogram(&acts)?, &ref_hist)?;
        if t % quarter == 0 {
            snapshots.push(acts);
        }
        let mut s2 = with_params(&stages[1], &path2[t])?;
        let g = s2.local_grad(&reference, ey, Mode::Eval)?;
        points.push(TracePoint {
            t: t as u64,
            lr: lrs[t],
            grad_norm_sq: norm_sq_all(&g.grads),
            drift,
            loss: g.loss,
        });
    }

    // z drawn from the converged representation and from earlier ones
    snapshots.push(reference);
    let zs = Tensor::concat_rows(&snapshots)?;
    let zy: Vec<usize> = (0..snapshots.len()).flat_map(|_| ey.iter().copied()).collect();
    let mut model = StageProbe::new(stages[1].clone(), zs, zy)?;
    let plan = SamplingPlan {
        radius: cfg.radius,
        ..SamplingPlan::new(cfg.budget, seed)
    };
    let constants = estimate_constants(&mut model, &path2, &plan)?;
    Ok(SeedRun {
        trace: TheoryTrace {
            stage: 2,
            replicates: 1,
            points,
        },
        constants,
    })
}

pub fn run_theory(cfg: &TheoryConfig) -> Result<TheoryOutcome> {
    if cfg.seeds.is_empty() || cfg.steps == 0 {
        return Err(Error::invalid("theory run needs at least one seed and one step"));
    }
    let runs = cfg
        .seeds
        .iter()
        .map(|&s| run_seed(cfg, s))
        .collect::<Result<Vec<_>>>()?;
    let traces: Vec<TheoryTrace> = runs.iter().map(|r| r.trace.clone()).collect();
    let averaged = TheoryTrace::average(&traces)?;
    let constants = ConstantEstimates {
        g: runs.iter().map(|r| r.constants.g).fold(0.0, f64::max),
        l_lip: runs.iter().map(|r| r.constants.l_lip).fold(0.0, f64::max),
        protocol: format!(
            "max over {} seeds of: {}",
            runs.len(),
            runs[0].constants.protocol
        ),
    };
    let initial_loss = averaged.points[0].loss;
    let bound = bound_check(&averaged, &constants, initial_loss)?;
    Ok(TheoryOutcome {
        traces,
        averaged,
        constants,
        initial_loss,
        bound,
    })
}

/// Metric tag prefix for probe rows.
pub const THEORY_TAG: &str = "probe=theory";

/// Per-step rows of the averaged trace followed by summary rows, all on
/// the traced stage.
pub fn theory_records(out: &TheoryOutcome) -> Vec<MetricRecord> {
    let stage = out.averaged.stage;
    let row = |step: u64, name: &str, value: f64| MetricRecord {
        step,
        epoch: 0,
        stage,
        metric: format!("{THEORY_TAG}:{name}"),
        value,
    };
    let best = out.averaged.best_so_far();
    let mut rows = Vec::with_capacity(out.averaged.points.len() * 5 + 10);
    for (p, b) in out.averaged.points.iter().zip(&best) {
        rows.push(row(p.t, "lr", p.lr));
        rows.push(row(p.t, "grad_norm_sq", p.grad_norm_sq));
        rows.push(row(p.t, "best_grad_norm_sq", *b));
        rows.push(row(p.t, "drift", p.drift));
        rows.push(row(p.t, "loss", p.loss));
    }
    let end = out.averaged.points.len() as u64;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    rows.extend([
        row(end, "G", out.constants.g),
        row(end, "L", out.constants.l_lip),
        row(end, "lhs", out.bound.lhs),
        row(end, "rhs", out.bound.rhs),
        row(end, "satisfied", flag(out.bound.satisfied)),
        row(end, "within_slack", flag(out.bound.within_slack)),
        row(end, "rate_proxy", out.bound.rate_proxy),
        row(end, "replicates", out.averaged.replicates as f64),
        row(end, "grad_norm_ratio", out.grad_norm_ratio()),
        row(end, "drift_ratio", out.drift_ratio()),
    ]);
    rows
}
