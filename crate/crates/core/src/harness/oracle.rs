//! Finite-difference check of every layer type and a few compositions over
//! many seeded random shapes.
//!
//! Inputs that put a relu argument or a max-pool runner-up within
//! [`KINK_MARGIN`] of a non-differentiable point are redrawn, since central
//! differences straddling a kink measure the wrong thing. Draws with a
//! non-zero analytic entry below [`RESOLUTION`] are redrawn too: the
//! differences carry about `1e-11` of absolute rounding noise at this
//! epsilon, so such entries compare noise with noise.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::gradcheck::{grad_check_with, Objective};
use crate::nn::{infer_shape, Layer, LayerSpec, Mode, Sequential};
use crate::tensor::Tensor;

pub const ORACLE_EPS: f64 = 1e-5;
pub const ORACLE_TOL: f64 = 1e-4;
pub const ORACLE_CASES: usize = 100;
pub const KINK_MARGIN: f64 = 1e-3;
pub const RESOLUTION: f64 = 1e-6;

const MAX_REDRAWS: usize = 1000;

struct Case {
    net: Sequential,
    x: Tensor,
    obj: Objective,
    mode: Mode,
}

type Builder = fn(&mut ChaCha8Rng) -> Result<Case>;

fn dims(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Instantiates `specs` for per-sample `input` and jitters every parameter
/// so biases and normalization shifts are non-trivial.
fn build(specs: &[LayerSpec], input: &[usize], rng: &mut ChaCha8Rng) -> Result<Sequential> {
    let mut shape = input.to_vec();
    let mut layers = Vec::with_capacity(specs.len());
    for s in specs {
        layers.push(s.instantiate(&shape, rng)?);
        shape = s.output_shape(&shape)?;
    }
    let mut net = Sequential::new(layers);
    for p in net.params_mut() {
        let noise = Tensor::randn(p.shape(), 0.3, rng);
        p.add_assign(&noise)?;
    }
    Ok(net)
}

fn projection(net: &Sequential, x: &Tensor, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Objective> {
    let y = net.clone().forward(x, mode, None)?;
    Ok(Objective::Projection(Tensor::randn(y.shape(), 1.0, rng)))
}

fn labels(batch: usize, classes: usize, rng: &mut ChaCha8Rng) -> Objective {
    Objective::Xent((0..batch).map(|_| rng.random_range(0..classes)).collect())
}

fn input(batch: usize, sample: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut shape = vec![batch];
    shape.extend_from_slice(sample);
    Tensor::randn(&shape, 1.0, rng)
}

fn projected(specs: &[LayerSpec], batch: usize, sample: &[usize], mode: Mode, rng: &mut ChaCha8Rng) -> Result<Case> {
    let net = build(specs, sample, rng)?;
    let x = input(batch, sample, rng);
    let obj = projection(&net, &x, mode, rng)?;
    Ok(Case { net, x, obj, mode })
}

fn dense(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, i, o) = (dims(rng, 1, 4), dims(rng, 1, 6), dims(rng, 1, 6));
    projected(&[LayerSpec::Dense { out: o }], b, &[i], Mode::Train, rng)
}

fn conv(kernel: usize) -> impl Fn(&mut ChaCha8Rng) -> Result<Case> {
    move |rng| {
        let (b, ci, co) = (dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3));
        let (h, w) = (dims(rng, 1, 5), dims(rng, 1, 5));
        projected(&[LayerSpec::Conv { out: co, kernel }], b, &[ci, h, w], Mode::Train, rng)
    }
}

fn conv3(rng: &mut ChaCha8Rng) -> Result<Case> {
    conv(3)(rng)
}

fn conv1(rng: &mut ChaCha8Rng) -> Result<Case> {
    conv(1)(rng)
}

fn bn_sample(rng: &mut ChaCha8Rng) -> Vec<usize> {
    if rng.random_bool(0.5) {
        vec![dims(rng, 1, 4)]
    } else {
        vec![dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)]
    }
}

// With two values per channel the normalized output is +-1 whatever the
// input, so every gradient is zero and only rounding noise is compared.
fn bn_train(rng: &mut ChaCha8Rng) -> Result<Case> {
    let b = dims(rng, 3, 5);
    let sample = bn_sample(rng);
    projected(&[LayerSpec::BatchNorm], b, &sample, Mode::Train, rng)
}

fn bn_eval(rng: &mut ChaCha8Rng) -> Result<Case> {
    let b = dims(rng, 1, 4);
    let sample = bn_sample(rng);
    let mut net = build(&[LayerSpec::BatchNorm], &sample, rng)?;
    for l in net.layers_mut() {
        if let Some(stats) = l.params_mut().and_then(|p| p.stats.as_mut()) {
            stats.mean = Tensor::randn(stats.mean.shape(), 1.0, rng);
            let var = (0..stats.var.len()).map(|_| rng.random_range(0.2..2.0)).collect();
            stats.var = Tensor::new(stats.var.shape().to_vec(), var)?;
        }
    }
    let x = input(b, &sample, rng);
    let obj = projection(&net, &x, Mode::Eval, rng)?;
    Ok(Case {
        net,
        x,
        obj,
        mode: Mode::Eval,
    })
}

fn relu(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, d) = (dims(rng, 1, 4), dims(rng, 1, 8));
    let net = Sequential::new(vec![Layer::Relu]);
    let x = input(b, &[d], rng).map(|v| if v >= 0.0 { v + 0.1 } else { v - 0.1 });
    let obj = projection(&net, &x, Mode::Train, rng)?;
    Ok(Case {
        net,
        x,
        obj,
        mode: Mode::Train,
    })
}

fn maxpool(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, c) = (dims(rng, 1, 3), dims(rng, 1, 3));
    let (h, w) = (2 * dims(rng, 1, 3), 2 * dims(rng, 1, 3));
    projected(&[LayerSpec::MaxPool2], b, &[c, h, w], Mode::Train, rng)
}

fn avgpool_divisible(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, c) = (dims(rng, 1, 3), dims(rng, 1, 3));
    let (th, tw) = (dims(rng, 1, 3), dims(rng, 1, 3));
    let (h, w) = (th * dims(rng, 1, 3), tw * dims(rng, 1, 3));
    projected(&[LayerSpec::AvgPoolTo { h: th, w: tw }], b, &[c, h, w], Mode::Train, rng)
}

fn avgpool_adaptive(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, c) = (dims(rng, 1, 3), dims(rng, 1, 3));
    let (th, tw) = (dims(rng, 2, 3), dims(rng, 2, 3));
    // one past a multiple, so the windows cannot be equal
    let (h, w) = (th * dims(rng, 1, 2) + 1, tw * dims(rng, 1, 2) + 1);
    projected(&[LayerSpec::AvgPoolTo { h: th, w: tw }], b, &[c, h, w], Mode::Train, rng)
}

fn flatten_dense(rng: &mut ChaCha8Rng) -> Result<Case> {
    let b = dims(rng, 1, 3);
    let sample = [dims(rng, 1, 3), dims(rng, 1, 3), dims(rng, 1, 3)];
    let o = dims(rng, 1, 4);
    projected(&[LayerSpec::Flatten, LayerSpec::Dense { out: o }], b, &sample, Mode::Train, rng)
}

fn xent(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, c) = (dims(rng, 1, 5), dims(rng, 2, 6));
    let net = Sequential::new(vec![Layer::Flatten]);
    let x = input(b, &[c], rng);
    Ok(Case {
        net,
        x,
        obj: labels(b, c, rng),
        mode: Mode::Train,
    })
}

fn composed(specs: &[LayerSpec], batch: usize, sample: &[usize], rng: &mut ChaCha8Rng) -> Result<Case> {
    let net = build(specs, sample, rng)?;
    let x = input(batch, sample, rng);
    let classes = infer_shape(specs, sample)?[0];
    Ok(Case {
        net,
        x,
        obj: labels(batch, classes, rng),
        mode: Mode::Train,
    })
}

/// conv, relu, max pooling, dense.
fn conv_relu_pool_dense(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, c) = (dims(rng, 3, 5), dims(rng, 1, 2));
    let (h, w) = (2 * dims(rng, 1, 2), 2 * dims(rng, 1, 2));
    let specs = [
        LayerSpec::Conv {
            out: dims(rng, 1, 3),
            kernel: 3,
        },
        LayerSpec::Relu,
        LayerSpec::MaxPool2,
        LayerSpec::Flatten,
        LayerSpec::Dense { out: dims(rng, 2, 4) },
    ];
    composed(&specs, b, &[c, h, w], rng)
}

/// A convolutional stage with a pooled MLP head on top. Normalization
/// follows the relu: directly after an affine layer it would make that
/// layer's bias gradient exactly zero, leaving nothing but rounding to check.
fn conv_bn_stage_with_head(rng: &mut ChaCha8Rng) -> Result<Case> {
    let (b, c) = (dims(rng, 4, 6), dims(rng, 1, 2));
    let (h, w) = (dims(rng, 2, 5), dims(rng, 2, 5));
    let width = dims(rng, 1, 3);
    let specs = [
        LayerSpec::Conv { out: width, kernel: 3 },
        LayerSpec::Relu,
        LayerSpec::BatchNorm,
        LayerSpec::AvgPoolTo { h: 2, w: 2 },
        LayerSpec::Flatten,
        LayerSpec::Dense { out: 4 * width },
        LayerSpec::Relu,
        LayerSpec::Dense { out: dims(rng, 2, 4) },
    ];
    composed(&specs, b, &[c, h, w], rng)
}

fn dense_relu_bn_dense(rng: &mut ChaCha8Rng) -> Result<Case> {
    let b = dims(rng, 6, 8);
    let specs = [
        LayerSpec::Dense { out: dims(rng, 2, 6) },
        LayerSpec::Relu,
        LayerSpec::BatchNorm,
        LayerSpec::Dense { out: dims(rng, 2, 4) },
    ];
    let d = dims(rng, 1, 6);
    composed(&specs, b, &[d], rng)
}

const SUITE: [(&str, Builder); 14] = [
    ("dense", dense),
    ("conv3x3", conv3),
    ("conv1x1", conv1),
    ("batchnorm_train", bn_train),
    ("batchnorm_eval", bn_eval),
    ("relu", relu),
    ("maxpool2x2", maxpool),
    ("avgpool_divisible", avgpool_divisible),
    ("avgpool_adaptive", avgpool_adaptive),
    ("flatten_dense", flatten_dense),
    ("softmax_xent", xent),
    ("conv_relu_pool_dense", conv_relu_pool_dense),
    ("conv_bn_stage_with_head", conv_bn_stage_with_head),
    ("dense_relu_bn_dense", dense_relu_bn_dense),
];

pub fn suite_names() -> Vec<&'static str> {
    SUITE.iter().map(|(n, _)| *n).collect()
}

/// A relu feeding batch-statistics normalization makes the upstream bias a
/// pure shift of the channel (every unit active) or a pure scale (one unit
/// active), and normalization cancels both exactly.
fn degenerate_normalization(pre_relu: &Tensor) -> bool {
    let s = pre_relu.shape();
    let (n, c) = (s[0], s[1]);
    let sp: usize = s[2..].iter().product();
    (0..c).any(|ch| {
        let active: usize = (0..n)
            .map(|b| {
                let start = (b * c + ch) * sp;
                pre_relu.data()[start..start + sp].iter().filter(|&&v| v > 0.0).count()
            })
            .sum();
        active < 2 || active == n * sp
    })
}

/// Smallest distance of any relu input from zero and of any max-pool
/// winner from its runner-up; zero for degenerate normalization inputs.
fn kink_distance(case: &Case) -> Result<f64> {
    let mut x = case.x.clone();
    let mut margin = f64::INFINITY;
    let layers = case.net.layers();
    for (i, layer) in layers.iter().enumerate() {
        match layer {
            Layer::Relu => {
                if case.mode == Mode::Train
                    && matches!(layers.get(i + 1), Some(Layer::BatchNorm(_)))
                    && degenerate_normalization(&x)
                {
                    return Ok(0.0);
                }
                margin = x.data().iter().fold(margin, |m, v| m.min(v.abs()));
            }
            Layer::MaxPool2 => {
                let s = x.shape();
                let (h, w) = (s[2], s[3]);
                for plane in x.data().chunks(h * w) {
                    for i in (0..h).step_by(2) {
                        for j in (0..w).step_by(2) {
                            let mut v = [
                                plane[i * w + j],
                                plane[i * w + j + 1],
                                plane[(i + 1) * w + j],
                                plane[(i + 1) * w + j + 1],
                            ];
                            v.sort_by(|a, b| b.total_cmp(a));
                            margin = margin.min(v[0] - v[1]);
                        }
                    }
                }
            }
            _ => {}
        }
        x = Sequential::new(vec![layer.clone()]).forward(&x, case.mode, None)?;
    }
    Ok(margin)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub name: &'static str,
    pub cases: usize,
    pub entries: usize,
    pub max_rel_err: f64,
    /// Seed index and entry of the worst case.
    pub worst: String,
    pub redraws: usize,
}

impl OracleResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= ORACLE_TOL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSummary {
    pub results: Vec<OracleResult>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.results.iter().all(OracleResult::passed)
    }
}

impl fmt::Display for OracleSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.results {
            writeln!(
                f,
                "{:<26} {} cases {:>7} entries  max rel err {:.3e}  {}{}",
                r.name,
                r.cases,
                r.entries,
                r.max_rel_err,
                if r.passed() { "ok" } else { "FAIL at " },
                if r.passed() { String::new() } else { r.worst.clone() }
            )?;
        }
        write!(
            f,
            "gradcheck: {} (eps {ORACLE_EPS:e}, tolerance {ORACLE_TOL:e})",
            if self.passed() { "all passed" } else { "FAILED" }
        )
    }
}

/// Runs `cases` seeded draws of every suite entry.
pub fn run_oracle_suite(cases: usize, seed: u64) -> Result<OracleSummary> {
    let mut results = Vec::with_capacity(SUITE.len());
    for (k, (name, make)) in SUITE.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let mut r = OracleResult {
            name,
            cases,
            entries: 0,
            max_rel_err: 0.0,
            worst: String::new(),
            redraws: 0,
        };
        for i in 0..cases {
            let mut attempts = 0;
            let (case, rep) = loop {
                let c = make(&mut rng)?;
                if kink_distance(&c)? >= KINK_MARGIN {
                    let rep = grad_check_with(&c.net, &c.x, ORACLE_EPS, &c.obj, c.mode)?;
                    if rep.smallest_analytic >= RESOLUTION {
                        break (c, rep);
                    }
                }
                attempts += 1;
                if attempts == MAX_REDRAWS {
                    return Err(Error::invalid(format!(
                        "{name}: no well-conditioned draw in {MAX_REDRAWS} tries"
                    )));
                }
            };
            r.redraws += attempts;
            r.entries += rep.checked;
            if rep.max_rel_err > r.max_rel_err || r.worst.is_empty() {
                r.max_rel_err = rep.max_rel_err;
                r.worst = format!(
                    "case {i}, {} (input {:?}): analytic {:e}, numeric {:e}",
                    rep.worst,
                    case.x.shape(),
                    rep.worst_values.0,
                    rep.worst_values.1
                );
            }
        }
        results.push(r);
    }
    Ok(OracleSummary { results })
}
