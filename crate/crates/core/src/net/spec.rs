use std::fmt;
use std::str::FromStr;

use log::info;

use crate::error::{Error, Result};
use crate::nn::{flop_count_layers, infer_shape, FlopReport, LayerSpec};

/// Local classifier attached to a non-final stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AuxKind {
    /// Two 3x3 convolutions, 2x2 averaging, linear projection.
    Cnn,
    /// 2x2 averaging, three dense layers of constant width, projection.
    Mlp,
    /// 4x spatial reduction, three 1x1 convolutions, then as `Mlp`.
    MlpSr,
    /// Projection only.
    Linear,
}

/// Classifier carried by the final stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClassifierKind {
    /// Pooling to 2x2 then two hidden dense layers.
    Fc2Hidden,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HeadSpec {
    Aux(AuxKind),
    Classifier(ClassifierKind),
}

impl HeadSpec {
    pub fn is_classifier(&self) -> bool {
        matches!(self, HeadSpec::Classifier(_))
    }
}

impl fmt::Display for AuxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuxKind::Cnn => "cnn_aux",
            AuxKind::Mlp => "mlp_aux",
            AuxKind::MlpSr => "mlp_sr_aux",
            AuxKind::Linear => "linear",
        })
    }
}

impl FromStr for AuxKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "cnn_aux" => Ok(AuxKind::Cnn),
            "mlp_aux" => Ok(AuxKind::Mlp),
            "mlp_sr_aux" => Ok(AuxKind::MlpSr),
            "linear" => Ok(AuxKind::Linear),
            other => Err(Error::invalid(format!("unknown auxiliary kind `{other}`"))),
        }
    }
}

impl fmt::Display for HeadSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HeadSpec::Aux(a) => a.fmt(f),
            HeadSpec::Classifier(ClassifierKind::Fc2Hidden) => f.write_str("none"),
            HeadSpec::Classifier(ClassifierKind::Linear) => f.write_str("none:linear"),
        }
    }
}

impl FromStr for HeadSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(HeadSpec::Classifier(ClassifierKind::Fc2Hidden)),
            "none:linear" => Ok(HeadSpec::Classifier(ClassifierKind::Linear)),
            other => other.parse().map(HeadSpec::Aux),
        }
    }
}

/// One greedy module: its primary layers, what sits on top of them, and the
/// per-sample shape it consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub head: HeadSpec,
    pub classes: usize,
}

impl StageSpec {
    pub fn output_shape(&self) -> Result<Vec<usize>> {
        infer_shape(&self.layers, &self.input_shape)
    }

    pub fn head_layers(&self) -> Result<Vec<LayerSpec>> {
        build_head(self.head, &self.output_shape()?, self.classes)
    }

    /// Primary MACs per sample.
    pub fn macs(&self) -> Result<u64> {
        Ok(self.flop_count()?.primary_total)
    }

    pub fn flop_count(&self) -> Result<FlopReport> {
        flop_count_layers(&self.layers, &self.head_layers()?, &self.input_shape)
    }
}

/// Checks the chain invariants: shapes connect and only the last stage
/// carries the final classifier.
pub fn validate_chain(specs: &[StageSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::invalid("network has no stages"));
    }
    for (j, s) in specs.iter().enumerate() {
        let last = j + 1 == specs.len();
        if s.head.is_classifier() != last {
            return Err(Error::invalid(format!(
                "stage {}: only the final stage carries the classifier (head {})",
                j + 1,
                s.head
            )));
        }
        let out = s.output_shape()?;
        if let Some(next) = specs.get(j + 1) {
            if next.input_shape != out {
                return Err(Error::Dimension {
                    op: "stage chain",
                    left: out,
                    right: next.input_shape.clone(),
                });
            }
            if next.classes != s.classes {
                return Err(Error::invalid("stages disagree on class count"));
            }
        }
        s.head_layers()?;
    }
    Ok(())
}

/// Six single-conv stages: 3x3 conv, batchnorm, relu; 2x2 max pooling closes
/// the second and fourth stage and the following conv doubles the width.
/// The last stage carries a pooled two-hidden-layer classifier.
pub fn build_cifar6(width: usize, classes: usize, input: [usize; 3], aux: AuxKind) -> Result<Vec<StageSpec>> {
    if width == 0 || classes == 0 {
        return Err(Error::invalid("cifar6 width and classes must be positive"));
    }
    let mut shape = input.to_vec();
    let mut channels = width;
    let mut specs = Vec::with_capacity(6);
    for layer in 0..6 {
        let mut layers = vec![
            LayerSpec::Conv {
                out: channels,
                kernel: 3,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
        ];
        let pools = layer == 1 || layer == 3;
        if pools {
            layers.push(LayerSpec::MaxPool2);
        }
        let head = if layer == 5 {
            HeadSpec::Classifier(ClassifierKind::Fc2Hidden)
        } else {
            HeadSpec::Aux(aux)
        };
        let spec = StageSpec {
            input_shape: shape.clone(),
            layers,
            head,
            classes,
        };
        shape = spec.output_shape()?;
        specs.push(spec);
        if pools {
            channels *= 2;
        }
    }
    Ok(specs)
}

/// Dense stages for vector inputs: `depth` blocks of `dense(width), relu`.
pub fn build_mlp(input_dim: usize, width: usize, depth: usize, classes: usize, aux: AuxKind) -> Result<Vec<StageSpec>> {
    if depth == 0 || width == 0 || classes == 0 {
        return Err(Error::invalid("mlp depth, width and classes must be positive"));
    }
    let mut specs = Vec::with_capacity(depth);
    let mut dim = input_dim;
    for j in 0..depth {
        let head = if j + 1 == depth {
            HeadSpec::Classifier(ClassifierKind::Linear)
        } else {
            HeadSpec::Aux(aux)
        };
        specs.push(StageSpec {
            input_shape: vec![dim],
            layers: vec![LayerSpec::Dense { out: width }, LayerSpec::Relu],
            head,
            classes,
        });
        dim = width;
    }
    Ok(specs)
}

fn pool_target(h: usize, w: usize, th: usize, tw: usize, what: &str) -> (usize, usize) {
    let t = (th.min(h).max(1), tw.min(w).max(1));
    if t != (th, tw) {
        info!("{what}: input {h}x{w} too small for {th}x{tw} averaging, using {}x{}", t.0, t.1);
    }
    t
}

fn mlp_tail(flat: usize, classes: usize, hidden: usize) -> Vec<LayerSpec> {
    let mut v = Vec::with_capacity(2 * hidden + 1);
    for _ in 0..hidden {
        v.push(LayerSpec::Dense { out: flat });
        v.push(LayerSpec::Relu);
    }
    v.push(LayerSpec::Dense { out: classes });
    v
}

/// Auxiliary head layers for an activation of per-sample `shape`. MLP
/// widths equal the flattened pooled input (`4 * C` at 2x2).
pub fn build_aux(kind: AuxKind, shape: &[usize], classes: usize) -> Result<Vec<LayerSpec>> {
    match (kind, shape) {
        (AuxKind::Linear, &[_]) => Ok(vec![LayerSpec::Dense { out: classes }]),
        (AuxKind::Linear, _) => Ok(vec![LayerSpec::Flatten, LayerSpec::Dense { out: classes }]),
        (AuxKind::Mlp | AuxKind::MlpSr, &[d]) => Ok(mlp_tail(d, classes, 3)),
        (AuxKind::Cnn, &[c, h, w]) => {
            let (th, tw) = pool_target(h, w, 2, 2, "cnn_aux");
            Ok(vec![
                LayerSpec::Conv { out: c, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::Conv { out: c, kernel: 3 },
                LayerSpec::Relu,
                LayerSpec::AvgPoolTo { h: th, w: tw },
                LayerSpec::Flatten,
                LayerSpec::Dense { out: classes },
            ])
        }
        (AuxKind::Mlp, &[c, h, w]) => {
            let (th, tw) = pool_target(h, w, 2, 2, "mlp_aux");
            let mut v = vec![LayerSpec::AvgPoolTo { h: th, w: tw }, LayerSpec::Flatten];
            v.extend(mlp_tail(c * th * tw, classes, 3));
            Ok(v)
        }
        (AuxKind::MlpSr, &[c, h, w]) => {
            let (rh, rw) = pool_target(h, w, h / 4, w / 4, "mlp_sr_aux reduction");
            let mut v = vec![LayerSpec::AvgPoolTo { h: rh, w: rw }];
            for _ in 0..3 {
                v.push(LayerSpec::Conv { out: c, kernel: 1 });
                v.push(LayerSpec::Relu);
            }
            let (th, tw) = pool_target(rh, rw, 2, 2, "mlp_sr_aux");
            v.push(LayerSpec::AvgPoolTo { h: th, w: tw });
            v.push(LayerSpec::Flatten);
            v.extend(mlp_tail(c * th * tw, classes, 3));
            Ok(v)
        }
        (kind, s) => Err(Error::Shape {
            op: "build_aux",
            msg: format!("{kind} cannot attach to activation {s:?}"),
        }),
    }
}

pub fn build_classifier(kind: ClassifierKind, shape: &[usize], classes: usize) -> Result<Vec<LayerSpec>> {
    match (kind, shape) {
        (ClassifierKind::Linear, _) => build_aux(AuxKind::Linear, shape, classes),
        (ClassifierKind::Fc2Hidden, &[d]) => Ok(mlp_tail(d, classes, 2)),
        (ClassifierKind::Fc2Hidden, &[c, h, w]) => {
            let (th, tw) = pool_target(h, w, 2, 2, "classifier");
            let mut v = vec![LayerSpec::AvgPoolTo { h: th, w: tw }, LayerSpec::Flatten];
            v.extend(mlp_tail(c * th * tw, classes, 2));
            Ok(v)
        }
        (_, s) => Err(Error::Shape {
            op: "build_classifier",
            msg: format!("cannot attach to activation {s:?}"),
        }),
    }
}

pub fn build_head(head: HeadSpec, shape: &[usize], classes: usize) -> Result<Vec<LayerSpec>> {
    match head {
        HeadSpec::Aux(k) => build_aux(k, shape, classes),
        HeadSpec::Classifier(k) => build_classifier(k, shape, classes),
    }
}

/// Cut positions (number of leading specs in each prefix) for `k` groups,
/// chosen so the cumulative MAC count at the i-th cut is as close as
/// possible to `i / k` of the total (sum of absolute deviations).
pub fn balanced_cuts(macs: &[u64], k: usize) -> Result<Vec<usize>> {
    let j = macs.len();
    if k == 0 || k > j {
        return Err(Error::invalid(format!("cannot split {j} layers into {k} stages")));
    }
    let mut cum = vec![0u64; j + 1];
    for (i, m) in macs.iter().enumerate() {
        cum[i + 1] = cum[i] + m;
    }
    let total = cum[j] as f64;
    let dev = |cut: usize, i: usize| (cum[cut] as f64 - total * i as f64 / k as f64).abs();
    // best[i][c]: minimal deviation with i cuts placed, the i-th at position c
    let inf = f64::INFINITY;
    let mut best = vec![vec![inf; j + 1]; k];
    let mut from = vec![vec![0usize; j + 1]; k];
    best[0][0] = 0.0;
    for i in 1..k {
        for c in i..j {
            for p in (i - 1)..c {
                let v = best[i - 1][p] + dev(c, i);
                if v < best[i][c] {
                    best[i][c] = v;
                    from[i][c] = p;
                }
            }
        }
    }
    let mut cuts = vec![j];
    if k > 1 {
        let mut c = (k - 1..j)
            .min_by(|&a, &b| best[k - 1][a].total_cmp(&best[k - 1][b]))
            .unwrap_or(k - 1);
        for i in (1..k).rev() {
            cuts.push(c);
            c = from[i][c];
        }
    }
    cuts.reverse();
    Ok(cuts)
}

/// Merges consecutive specs into `k` multi-layer stages balanced by MACs.
/// Each group keeps the head of its last member.
pub fn split(specs: &[StageSpec], k: usize) -> Result<Vec<StageSpec>> {
    validate_chain(specs)?;
    let macs = specs.iter().map(StageSpec::macs).collect::<Result<Vec<_>>>()?;
    let cuts = balanced_cuts(&macs, k)?;
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for end in cuts {
        let group = &specs[start..end];
        out.push(StageSpec {
            input_shape: group[0].input_shape.clone(),
            layers: group.iter().flat_map(|s| s.layers.iter().copied()).collect(),
            head: group[group.len() - 1].head,
            classes: group[0].classes,
        });
        start = end;
    }
    Ok(out)
}

/// Auxiliary cost relative to the most expensive primary module.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxRatios {
    pub kind: AuxKind,
    pub largest_module_macs: u64,
    /// Aux MACs over largest primary module, for each non-final stage.
    pub per_stage: Vec<f64>,
}

impl AuxRatios {
    /// The first stage's head sees the highest spatial resolution; this is
    /// the figure compared across auxiliary designs.
    pub fn first_stage(&self) -> f64 {
        self.per_stage[0]
    }
}

pub fn aux_ratios(specs: &[StageSpec]) -> Result<AuxRatios> {
    let reports = specs.iter().map(StageSpec::flop_count).collect::<Result<Vec<_>>>()?;
    let largest = reports.iter().map(|r| r.primary_total).max().unwrap_or(0);
    let kind = match specs.first().map(|s| s.head) {
        Some(HeadSpec::Aux(k)) => k,
        _ => return Err(Error::invalid("aux_ratios needs at least one auxiliary stage")),
    };
    let per_stage = specs
        .iter()
        .zip(&reports)
        .filter(|(s, _)| !s.head.is_classifier())
        .map(|(_, r)| r.auxiliary_total as f64 / largest as f64)
        .collect();
    Ok(AuxRatios {
        kind,
        largest_module_macs: largest,
        per_stage,
    })
}
