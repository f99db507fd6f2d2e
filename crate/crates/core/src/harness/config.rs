//! Experiment configuration: `key = value` lines, `#` comments, and
//! `[section]` headers.
//!
//! ```text
//! seed = 3
//!
//! [data]
//! kind = gridimg
//! n = 4000
//! classes = 2
//!
//! [model]
//! arch = cifar6
//! width = 8
//! aux = mlp_aux
//!
//! [train]
//! trainer = sync
//! epochs = 30
//! batch_size = 32
//!
//! [optim]
//! lr = 0.05
//! schedule = step_decay
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::data::{SyntheticKind, SyntheticSpec};
use crate::net::{AuxKind, HeadSpec, StageSpec};
use crate::nn::LayerSpec;
use crate::sched::{ExecMode, OptimizerConfig, Schedule};

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic(SyntheticSpec),
    Idx {
        images: PathBuf,
        labels: PathBuf,
        test_images: Option<PathBuf>,
        test_labels: Option<PathBuf>,
    },
}

/// One explicitly listed stage: layers and what sits on top.
#[derive(Debug, Clone, PartialEq)]
pub struct StageLine {
    pub layers: Vec<LayerSpec>,
    pub head: HeadSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    Cifar6 { width: usize, aux: AuxKind },
    Mlp { width: usize, depth: usize, aux: AuxKind },
    Stages(Vec<StageLine>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrainerSpec {
    Sync { epochs: u64, mode: ExecMode },
    Sequential { epochs: u64 },
    E2e { epochs: u64 },
    Async(AsyncSpec),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncSpec {
    pub update_cap: u64,
    pub buffer_size: usize,
    pub slowdown: f64,
    /// 1-based; irrelevant when `slowdown == 1`.
    pub slowed_stage: usize,
    pub threaded: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepKind {
    Slowdown,
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub kind: SweepKind,
    pub slowdowns: Vec<f64>,
    /// 1-based slowed stages; empty means every stage.
    pub positions: Vec<usize>,
    pub buffer_sizes: Vec<usize>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub data: DataSource,
    pub arch: Architecture,
    /// Declared per-sample input shape; lets FLOP counts skip loading data.
    pub input_shape: Option<Vec<usize>>,
    /// Modules after merging; `None` keeps one module per listed stage.
    pub modules: Option<usize>,
    pub trainer: TrainerSpec,
    pub batch_size: usize,
    pub opt: OptimizerConfig,
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn epochs(&self) -> Option<u64> {
        match self.trainer {
            TrainerSpec::Sync { epochs, .. } | TrainerSpec::Sequential { epochs } | TrainerSpec::E2e { epochs } => {
                Some(epochs)
            }
            TrainerSpec::Async(_) => None,
        }
    }
}

#[derive(Debug, Default)]
struct Section {
    entries: BTreeMap<String, Vec<(String, usize)>>,
}

impl Section {
    fn take(&mut self, key: &str, prefix: &str) -> Result<Option<(String, usize)>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some(mut v) if v.len() == 1 => Ok(v.pop()),
            Some(v) => Err(Error::config(
                field(prefix, key),
                format!("given {} times (line {})", v.len(), v[1].1),
            )),
        }
    }

    fn take_all(&mut self, key: &str) -> Vec<(String, usize)> {
        self.entries.remove(key).unwrap_or_default()
    }
}

fn field(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

struct Parsed {
    sections: BTreeMap<String, Section>,
}

const SECTIONS: [&str; 7] = ["", "data", "model", "train", "optim", "async", "sweep"];

fn parse_raw(text: &str) -> Result<Parsed> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    sections.insert(String::new(), Section::default());
    let mut current = String::new();
    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::config(format!("line {n}"), format!("malformed section header `{line}`")))?
                .trim();
            if !SECTIONS.contains(&name) || name.is_empty() {
                return Err(Error::config(format!("[{name}]"), format!("unknown section on line {n}")));
            }
            if sections.contains_key(name) {
                return Err(Error::config(format!("[{name}]"), format!("section repeated on line {n}")));
            }
            current = name.to_string();
            sections.insert(current.clone(), Section::default());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {n}"), format!("expected `key = value`, got `{line}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::config(format!("line {n}"), "empty key"));
        }
        sections
            .get_mut(&current)
            .expect("current section exists")
            .entries
            .entry(k.to_string())
            .or_default()
            .push((v.to_string(), n));
    }
    Ok(Parsed { sections })
}

struct Reader<'a> {
    prefix: &'static str,
    sec: &'a mut Section,
}

impl Reader<'_> {
    fn raw(&mut self, key: &str) -> Result<Option<String>> {
        Ok(self.sec.take(key, self.prefix)?.map(|(v, _)| v))
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.raw(key)? {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::config(field(self.prefix, key), format!("cannot parse `{v}`"))),
        }
    }

    fn require<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        self.get(key)?
            .ok_or_else(|| Error::config(field(self.prefix, key), "missing"))
    }

    fn list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.raw(key)? {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse()
                        .map_err(|_| Error::config(field(self.prefix, key), format!("cannot parse `{}`", s.trim())))
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        match self.sec.entries.keys().next() {
            None => Ok(()),
            Some(k) => Err(Error::config(field(self.prefix, k), "unknown key")),
        }
    }
}

fn positive<T: PartialOrd + Default + Copy>(v: T, f: &str) -> Result<T> {
    if v > T::default() {
        Ok(v)
    } else {
        Err(Error::config(f, "must be positive"))
    }
}

fn parse_stage_line(v: &str, line: usize) -> Result<StageLine> {
    let bad = |m: String| Error::config("model.stage", format!("line {line}: {m}"));
    let (layers, head) = v.split_once('|').ok_or_else(|| bad("expected `layers | head`".into()))?;
    let layers = layers
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<LayerSpec>().map_err(|e| bad(e.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let head = head.trim().parse::<HeadSpec>().map_err(|e| bad(e.to_string()))?;
    Ok(StageLine { layers, head })
}

impl std::str::FromStr for ExperimentConfig {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let mut p = parse_raw(text)?;
        let mut take = |name: &str| p.sections.remove(name);

        let mut top_sec = take("").unwrap_or_default();
        let mut top = Reader { prefix: "", sec: &mut top_sec };
        let seed = top.get("seed")?.unwrap_or(0);
        let out = top.get::<PathBuf>("out")?;
        top.finish()?;

        let mut data_sec = take("data").ok_or_else(|| Error::config("[data]", "missing section"))?;
        let data = parse_data(Reader { prefix: "data", sec: &mut data_sec })?;

        let mut model_sec = take("model").ok_or_else(|| Error::config("[model]", "missing section"))?;
        let (arch, modules, input_shape) = parse_model(Reader { prefix: "model", sec: &mut model_sec })?;

        let mut train_sec = take("train").ok_or_else(|| Error::config("[train]", "missing section"))?;
        let mut tr = Reader { prefix: "train", sec: &mut train_sec };
        let trainer_name: String = tr.require("trainer")?;
        let batch_size = positive(tr.get("batch_size")?.unwrap_or(32usize), "train.batch_size")?;
        let epochs: Option<u64> = tr.get("epochs")?;
        let mode: Option<String> = tr.raw("mode")?;
        tr.finish()?;

        let mut async_sec = take("async");
        let trainer = match trainer_name.as_str() {
            "async" => {
                if epochs.is_some() {
                    return Err(Error::config("train.epochs", "not used by the async trainer (set async.update_cap)"));
                }
                let sec = async_sec
                    .as_mut()
                    .ok_or_else(|| Error::config("[async]", "required when trainer = async"))?;
                TrainerSpec::Async(parse_async(Reader { prefix: "async", sec })?)
            }
            other => {
                if async_sec.is_some() {
                    return Err(Error::config("[async]", format!("only valid with trainer = async, not {other}")));
                }
                let epochs = positive(
                    epochs.ok_or_else(|| Error::config("train.epochs", "missing"))?,
                    "train.epochs",
                )?;
                match other {
                    "sync" => TrainerSpec::Sync {
                        epochs,
                        mode: match mode.as_deref() {
                            None | Some("loop") => ExecMode::Loop,
                            Some("pipelined") => ExecMode::Pipelined,
                            Some(m) => return Err(Error::config("train.mode", format!("unknown mode `{m}`"))),
                        },
                    },
                    "sequential" => TrainerSpec::Sequential { epochs },
                    "e2e" => TrainerSpec::E2e { epochs },
                    t => {
                        return Err(Error::config(
                            "train.trainer",
                            format!("unknown trainer `{t}` (expected sync, async, sequential or e2e)"),
                        ))
                    }
                }
            }
        };
        if mode.is_some() && !matches!(trainer, TrainerSpec::Sync { .. }) {
            return Err(Error::config("train.mode", "only valid with trainer = sync"));
        }

        let mut optim_sec = take("optim").unwrap_or_default();
        let opt = parse_optim(Reader { prefix: "optim", sec: &mut optim_sec })?;

        let sweep = match take("sweep") {
            None => None,
            Some(mut sec) => {
                let TrainerSpec::Async(a) = trainer else {
                    return Err(Error::config("[sweep]", "sweeps need trainer = async"));
                };
                Some(parse_sweep(Reader { prefix: "sweep", sec: &mut sec }, &a)?)
            }
        };

        Ok(ExperimentConfig {
            seed,
            out,
            data,
            arch,
            input_shape,
            modules,
            trainer,
            batch_size,
            opt,
            sweep,
        })
    }
}

fn parse_data(mut r: Reader<'_>) -> Result<DataSource> {
    let kind: String = r.require("kind")?;
    let src = if kind == "idx" {
        let test_images = r.get("test_images")?;
        let test_labels = r.get("test_labels")?;
        if test_images.is_some() != test_labels.is_some() {
            return Err(Error::config("data.test_images", "test_images and test_labels go together"));
        }
        DataSource::Idx {
            images: r.require("images")?,
            labels: r.require("labels")?,
            test_images,
            test_labels,
        }
    } else {
        for k in ["images", "labels", "test_images", "test_labels"] {
            if r.raw(k)?.is_some() {
                return Err(Error::config(
                    field("data", k),
                    "a synthetic dataset cannot also name IDX files",
                ));
            }
        }
        let kind: SyntheticKind = kind
            .parse()
            .map_err(|e: Error| Error::config("data.kind", e.to_string()))?;
        let n = r.require("n")?;
        let classes = positive(r.require("classes")?, "data.classes")?;
        let mut spec = SyntheticSpec::new(kind, n, classes, 0);
        spec.seed = r.get("seed")?.unwrap_or(0);
        if let Some(s) = r.get("separation")? {
            spec.separation = s;
        }
        if let Some(s) = r.get("noise")? {
            spec.noise = s;
        }
        if let Some(s) = r.get("max_shift")? {
            spec.max_shift = s;
        }
        if n < 2 * classes {
            return Err(Error::config("data.n", format!("must be at least 2 * classes = {}", 2 * classes)));
        }
        if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
            return Err(Error::config("data.noise", "must be finite and >= 0"));
        }
        DataSource::Synthetic(spec)
    };
    r.finish()?;
    Ok(src)
}

fn parse_model(mut r: Reader<'_>) -> Result<(Architecture, Option<usize>, Option<Vec<usize>>)> {
    let arch_name: String = r.require("arch")?;
    let aux = |r: &mut Reader<'_>| -> Result<AuxKind> {
        match r.raw("aux")? {
            None => Ok(AuxKind::Mlp),
            Some(v) => v.parse().map_err(|e: Error| Error::config("model.aux", e.to_string())),
        }
    };
    let arch = match arch_name.as_str() {
        "cifar6" => Architecture::Cifar6 {
            width: positive(r.require("width")?, "model.width")?,
            aux: aux(&mut r)?,
        },
        "mlp" => Architecture::Mlp {
            width: positive(r.require("width")?, "model.width")?,
            depth: positive(r.require("depth")?, "model.depth")?,
            aux: aux(&mut r)?,
        },
        "stages" => {
            let lines = r.sec.take_all("stage");
            if lines.is_empty() {
                return Err(Error::config("model.stage", "arch = stages needs at least one `stage = ...` line"));
            }
            let st = lines
                .iter()
                .map(|(v, n)| parse_stage_line(v, *n))
                .collect::<Result<Vec<_>>>()?;
            Architecture::Stages(st)
        }
        other => {
            return Err(Error::config(
                "model.arch",
                format!("unknown architecture `{other}` (expected cifar6, mlp or stages)"),
            ))
        }
    };
    let modules = r.get::<usize>("modules")?.map(|k| positive(k, "model.modules")).transpose()?;
    let input = r.list::<usize>("input_shape")?;
    if input.as_ref().is_some_and(|s| s.is_empty() || s.contains(&0)) {
        return Err(Error::config("model.input_shape", "dimensions must be positive"));
    }
    r.finish()?;
    Ok((arch, modules, input))
}

fn parse_async(mut r: Reader<'_>) -> Result<AsyncSpec> {
    let a = AsyncSpec {
        update_cap: positive(r.require("update_cap")?, "async.update_cap")?,
        buffer_size: positive(r.get("buffer_size")?.unwrap_or(50), "async.buffer_size")?,
        slowdown: r.get("slowdown")?.unwrap_or(1.0),
        slowed_stage: r.get("slowed_stage")?.unwrap_or(1),
        threaded: r.get("threaded")?.unwrap_or(false),
    };
    if !(a.slowdown >= 1.0 && a.slowdown.is_finite()) {
        return Err(Error::config("async.slowdown", "must be >= 1"));
    }
    if a.slowed_stage == 0 {
        return Err(Error::config("async.slowed_stage", "stages are numbered from 1"));
    }
    r.finish()?;
    Ok(a)
}

fn parse_optim(mut r: Reader<'_>) -> Result<OptimizerConfig> {
    let lr = r.get("lr")?.unwrap_or(0.1);
    let momentum = r.get("momentum")?.unwrap_or(0.9);
    let weight_decay = r.get("weight_decay")?.unwrap_or(5e-4);
    let schedule = match r.raw("schedule")?.as_deref() {
        None | Some("step_decay") => Schedule::StepDecay {
            factor: r.get("decay_factor")?.unwrap_or(0.2),
            period: r.get("decay_period")?.unwrap_or(15),
        },
        Some("robbins_monro") => Schedule::RobbinsMonro {
            eta0: lr,
            alpha: r.require("alpha")?,
        },
        Some("constant") => Schedule::Constant,
        Some(s) => return Err(Error::config("optim.schedule", format!("unknown schedule `{s}`"))),
    };
    r.finish()?;
    let cfg = OptimizerConfig {
        lr,
        momentum,
        weight_decay,
        schedule,
    };
    cfg.validate().map_err(|e| match e {
        Error::Config { field, msg } => Error::config(format!("optim.{field}"), msg),
        other => other,
    })?;
    Ok(cfg)
}

fn parse_sweep(mut r: Reader<'_>, base: &AsyncSpec) -> Result<SweepSpec> {
    let kind = match r.require::<String>("kind")?.as_str() {
        "slowdown" => SweepKind::Slowdown,
        "buffer" => SweepKind::Buffer,
        k => return Err(Error::config("sweep.kind", format!("unknown sweep `{k}` (expected slowdown or buffer)"))),
    };
    let positions = match r.raw("positions")?.as_deref() {
        None | Some("all") => Vec::new(),
        Some(v) => v
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|&p| p > 0)
                    .ok_or_else(|| Error::config("sweep.positions", format!("bad stage `{}`", s.trim())))
            })
            .collect::<Result<_>>()?,
    };
    let s = SweepSpec {
        kind,
        slowdowns: r.list("slowdowns")?.unwrap_or_else(|| vec![base.slowdown]),
        positions,
        buffer_sizes: r.list("buffer_sizes")?.unwrap_or_else(|| vec![base.buffer_size]),
        seeds: r.list("seeds")?.unwrap_or_else(|| vec![0, 1, 2]),
    };
    if s.slowdowns.iter().any(|&v| !(v >= 1.0 && v.is_finite())) {
        return Err(Error::config("sweep.slowdowns", "every slowdown must be >= 1"));
    }
    if s.buffer_sizes.contains(&0) {
        return Err(Error::config("sweep.buffer_sizes", "sizes must be positive"));
    }
    if s.seeds.is_empty() || s.slowdowns.is_empty() || s.buffer_sizes.is_empty() {
        return Err(Error::config("sweep.seeds", "sweep lists must be non-empty"));
    }
    r.finish()?;
    Ok(s)
}

/// Resolves the architecture into stage specs for per-sample `input` shape.
pub fn resolve_stages(arch: &Architecture, input: &[usize], classes: usize) -> Result<Vec<StageSpec>> {
    match arch {
        Architecture::Cifar6 { width, aux } => match input {
            &[c, h, w] => crate::net::build_cifar6(*width, classes, [c, h, w], *aux),
            _ => Err(Error::config("model.arch", format!("cifar6 needs image inputs, data has shape {input:?}"))),
        },
        Architecture::Mlp { width, depth, aux } => {
            let dim = input.iter().product();
            crate::net::build_mlp(dim, *width, *depth, classes, *aux)
        }
        Architecture::Stages(lines) => {
            let mut shape = input.to_vec();
            let mut specs = Vec::with_capacity(lines.len());
            for l in lines {
                let s = StageSpec {
                    input_shape: shape.clone(),
                    layers: l.layers.clone(),
                    head: l.head,
                    classes,
                };
                shape = s.output_shape()?;
                specs.push(s);
            }
            crate::net::validate_chain(&specs)?;
            Ok(specs)
        }
    }
}
