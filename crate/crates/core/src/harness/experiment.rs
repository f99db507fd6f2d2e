//! Runs described by an [`ExperimentConfig`]: single trainings, async
//! sweeps, and FLOP tables.

use std::fmt::Write as _;

use log::info;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{AsyncSpec, DataSource, ExperimentConfig, SweepKind, TrainerSpec};
use super::data::{generate, Dataset, TRAIN_FRACTION};
use super::idx::load_idx;
use super::metrics::fmt_g9;
use crate::error::{Error, Result};
use crate::net::{aux_ratios, split, GreedyStage, HeadSpec, Network, StageSpec};
use crate::sched::{
    make_slowdown_pmf, train_async, train_async_threaded, train_e2e, train_sequential, train_sync_with,
    AsyncConfig, BatchStream, EvalSet, TrainConfig, TrainReport,
};

/// Independent streams derived from one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub init: u64,
    pub stream: u64,
    pub sampler: u64,
}

impl RunSeeds {
    pub fn derive(seed: u64) -> Self {
        let pick = |tag: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(tag);
            rng.next_u64()
        };
        Self {
            init: pick(1),
            stream: pick(2),
            sampler: pick(3),
        }
    }
}

pub fn load_dataset(src: &DataSource) -> Result<Dataset> {
    match src {
        DataSource::Synthetic(spec) => generate(spec),
        DataSource::Idx {
            images,
            labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(images, labels)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => train.with_test(load_idx(ti, tl)?),
                _ => {
                    let n_train = (train.len() as f64 * TRAIN_FRACTION).round() as usize;
                    let (x, y, c) = (train.inputs().clone(), train.labels().to_vec(), train.classes());
                    Dataset::new(x, y, c, n_train)
                }
            }
        }
    }
}

fn layout(cfg: &ExperimentConfig, input: &[usize], classes: usize) -> Result<(Vec<StageSpec>, Vec<StageSpec>)> {
    let layers = super::config::resolve_stages(&cfg.arch, input, classes)?;
    let specs = match cfg.modules {
        Some(k) if k > layers.len() => {
            return Err(Error::config(
                "model.modules",
                format!("cannot merge {} layers into {k} modules", layers.len()),
            ))
        }
        Some(k) => split(&layers, k)?,
        None => layers.clone(),
    };
    Ok((layers, specs))
}

/// Stage specs of a config. With `model.input_shape` and a synthetic
/// dataset nothing is generated or loaded.
pub fn config_stages(cfg: &ExperimentConfig) -> Result<Vec<StageSpec>> {
    match (&cfg.input_shape, &cfg.data) {
        (Some(shape), DataSource::Synthetic(d)) => Ok(layout(cfg, shape, d.classes)?.1),
        _ => Ok(Experiment::new(cfg.clone())?.specs),
    }
}

/// A loaded dataset with the stage layout it will be trained with.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub cfg: ExperimentConfig,
    pub data: Dataset,
    /// Per-layer specs before merging.
    pub layers: Vec<StageSpec>,
    /// Stages after merging into `cfg.modules` groups.
    pub specs: Vec<StageSpec>,
}

impl Experiment {
    pub fn new(cfg: ExperimentConfig) -> Result<Self> {
        let data = load_dataset(&cfg.data)?;
        if data.n_train() < cfg.batch_size {
            return Err(Error::config(
                "train.batch_size",
                format!("larger than the {} training samples", data.n_train()),
            ));
        }
        if let Some(shape) = &cfg.input_shape {
            if shape.as_slice() != data.sample_shape() {
                return Err(Error::config(
                    "model.input_shape",
                    format!("declared {shape:?} but the data has {:?}", data.sample_shape()),
                ));
            }
        }
        let (layers, specs) = layout(&cfg, data.sample_shape(), data.classes())?;
        Ok(Self {
            cfg,
            data,
            layers,
            specs,
        })
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        Self::new(ExperimentConfig::from_file(path)?)
    }

    pub fn stream(&self, seed: u64) -> Result<BatchStream> {
        let (x, y) = self.data.train();
        BatchStream::new(x, y.to_vec(), self.cfg.batch_size, RunSeeds::derive(seed).stream)
    }

    /// The test split, if the dataset has one.
    pub fn eval_set(&self) -> Result<Option<EvalSet>> {
        let (x, y) = self.data.test();
        if y.is_empty() {
            return Ok(None);
        }
        EvalSet::new(x, y.to_vec()).map(Some)
    }

    pub fn init_stages(&self, seed: u64) -> Result<Vec<GreedyStage>> {
        let mut rng = ChaCha8Rng::seed_from_u64(RunSeeds::derive(seed).init);
        GreedyStage::build_all(&self.specs, &mut rng)
    }

    /// Batches per epoch of the training stream.
    pub fn batches_per_epoch(&self) -> u64 {
        (self.data.n_train() / self.cfg.batch_size) as u64
    }

    /// Runs the configured trainer with `seed`.
    pub fn run(&self, seed: u64) -> Result<TrainReport> {
        match self.cfg.trainer {
            TrainerSpec::Async(a) => self.run_async(seed, &a),
            t => self.run_epochs(seed, t),
        }
    }

    fn run_epochs(&self, seed: u64, trainer: TrainerSpec) -> Result<TrainReport> {
        let mut stream = self.stream(seed)?;
        let eval = self.eval_set()?;
        let tc = |epochs| TrainConfig {
            opt: self.cfg.opt,
            epochs,
        };
        match trainer {
            TrainerSpec::Sync { epochs, mode } => {
                let mut st = self.init_stages(seed)?;
                train_sync_with(&mut st, &mut stream, &tc(epochs), eval.as_ref(), mode)
            }
            TrainerSpec::Sequential { epochs } => {
                let mut st = self.init_stages(seed)?;
                train_sequential(&mut st, &mut stream, &tc(epochs), eval.as_ref())
            }
            TrainerSpec::E2e { epochs } => {
                let mut rng = ChaCha8Rng::seed_from_u64(RunSeeds::derive(seed).init);
                let mut net = Network::new(&self.specs, &mut rng)?;
                train_e2e(&mut net, &mut stream, &tc(epochs), eval.as_ref())
            }
            TrainerSpec::Async(a) => self.run_async(seed, &a),
        }
    }

    pub fn run_async(&self, seed: u64, a: &AsyncSpec) -> Result<TrainReport> {
        let mut stream = self.stream(seed)?;
        let eval = self.eval_set()?;
        let mut st = self.init_stages(seed)?;
        let cfg = AsyncConfig {
            opt: self.cfg.opt,
            capacity: a.buffer_size,
            update_cap: a.update_cap,
            max_ticks: None,
        };
        if a.threaded {
            return train_async_threaded(&mut st, &mut stream, &cfg, eval.as_ref());
        }
        let k = st.len();
        if a.slowed_stage > k {
            return Err(Error::config(
                "async.slowed_stage",
                format!("network has only {k} stages"),
            ));
        }
        let delay = make_slowdown_pmf(k, a.slowed_stage, a.slowdown)?;
        train_async(&mut st, &mut stream, &delay, &cfg, RunSeeds::derive(seed).sampler, eval.as_ref())
    }

    /// Every (slowdown, position, buffer size, seed) combination of the
    /// sweep section. Uniform-pmf runs do not depend on the position and
    /// are computed once per buffer size and seed.
    pub fn sweep(&self) -> Result<Vec<SweepRow>> {
        let (TrainerSpec::Async(base), Some(sw)) = (self.cfg.trainer, &self.cfg.sweep) else {
            return Err(Error::config("[sweep]", "config has no async sweep"));
        };
        let k = self.specs.len();
        let positions: Vec<usize> = if sw.positions.is_empty() {
            (1..=k).collect()
        } else {
            sw.positions.clone()
        };
        if let Some(&p) = positions.iter().find(|&&p| p > k) {
            return Err(Error::config("sweep.positions", format!("stage {p} does not exist ({k} stages)")));
        }
        match sw.kind {
            SweepKind::Slowdown if sw.buffer_sizes.len() > 1 => {
                return Err(Error::config("sweep.buffer_sizes", "a slowdown sweep uses one buffer size"))
            }
            SweepKind::Buffer if sw.slowdowns.len() > 1 => {
                return Err(Error::config("sweep.slowdowns", "a buffer sweep uses one slowdown"))
            }
            _ => {}
        }
        let mut rows = Vec::new();
        let mut uniform: Vec<((usize, u64), SweepRow)> = Vec::new();
        for &m in &sw.buffer_sizes {
            for &s in &sw.slowdowns {
                for &pos in &positions {
                    for &seed in &sw.seeds {
                        let cached = (s == 1.0)
                            .then(|| uniform.iter().find(|(key, _)| *key == (m, seed)))
                            .flatten();
                        let row = match cached {
                            Some((_, r)) => SweepRow {
                                slowed_stage: pos,
                                ..r.clone()
                            },
                            None => {
                                let a = AsyncSpec {
                                    slowdown: s,
                                    slowed_stage: pos,
                                    buffer_size: m,
                                    ..base
                                };
                                let report = self.run_async(seed, &a)?;
                                let row = SweepRow::from_report(&report, s, pos, m, seed)?;
                                info!(
                                    "sweep S={s} j*={pos} M={m} seed={seed}: acc {:.4}",
                                    row.final_acc
                                );
                                if s == 1.0 {
                                    uniform.push(((m, seed), row.clone()));
                                }
                                row
                            }
                        };
                        rows.push(row);
                    }
                }
            }
        }
        Ok(rows)
    }

    /// `#` metadata lines for sweep output.
    pub fn sweep_metadata(&self) -> String {
        let mut s = String::new();
        let c = &self.cfg;
        let data = match &c.data {
            DataSource::Synthetic(d) => format!(
                "{} n={} classes={} noise={} separation={} max_shift={} seed={}",
                d.kind, d.n, d.classes, d.noise, d.separation, d.max_shift, d.seed
            ),
            DataSource::Idx { images, .. } => format!("idx {}", images.display()),
        };
        let _ = writeln!(s, "# data: {data}");
        let _ = writeln!(
            s,
            "# model: {} stages, input {:?}, {} training samples, batch {}",
            self.specs.len(),
            self.data.sample_shape(),
            self.data.n_train(),
            c.batch_size
        );
        if let TrainerSpec::Async(a) = c.trainer {
            let _ = writeln!(
                s,
                "# update_cap: {} ({} epochs of {} batches)",
                a.update_cap,
                fmt_g9(a.update_cap as f64 / self.batches_per_epoch().max(1) as f64),
                self.batches_per_epoch()
            );
        }
        let _ = writeln!(s, "# optim: {:?}", c.opt);
        let _ = writeln!(s, "# scale: desk-size synthetic stand-in; accuracies are not comparable to full image benchmarks");
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub slowdown: f64,
    pub slowed_stage: usize,
    pub buffer_size: usize,
    pub seed: u64,
    /// Test accuracy of the final classifier.
    pub final_acc: f64,
    pub ticks: u64,
    pub stalls: u64,
}

impl SweepRow {
    fn from_report(r: &TrainReport, slowdown: f64, slowed_stage: usize, buffer_size: usize, seed: u64) -> Result<Self> {
        let final_acc = r
            .final_test_acc()
            .last()
            .copied()
            .flatten()
            .ok_or_else(|| Error::invalid("sweep run has no test split to score"))?;
        Ok(Self {
            slowdown,
            slowed_stage,
            buffer_size,
            seed,
            final_acc,
            ticks: r.ticks,
            stalls: r.stalls,
        })
    }
}

pub const SWEEP_HEADER: &str = "slowdown,slowed_stage,buffer_size,seed,final_acc,ticks,stalls";

pub fn format_sweep(metadata: &str, rows: &[SweepRow]) -> String {
    let mut s = String::from(metadata);
    s.push_str(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_g9(r.slowdown),
            r.slowed_stage,
            r.buffer_size,
            r.seed,
            fmt_g9(r.final_acc),
            r.ticks,
            r.stalls
        );
    }
    s
}

/// Per-stage MAC counts and the auxiliary-to-largest-module ratios.
pub fn flops_table(specs: &[StageSpec]) -> Result<String> {
    let mut s = String::from("stage,primary_macs,aux_macs,aux_ratio,head\n");
    let reports = specs.iter().map(StageSpec::flop_count).collect::<Result<Vec<_>>>()?;
    let largest = reports.iter().map(|r| r.primary_total).max().unwrap_or(0).max(1);
    for (j, (sp, r)) in specs.iter().zip(&reports).enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            j + 1,
            r.primary_total,
            r.auxiliary_total,
            fmt_g9(r.auxiliary_total as f64 / largest as f64),
            sp.head
        );
    }
    if matches!(specs.first().map(|s| s.head), Some(HeadSpec::Aux(_))) {
        let ratios = aux_ratios(specs)?;
        let _ = writeln!(
            s,
            "# {} first-stage ratio {} of the largest module ({} MACs)",
            ratios.kind,
            fmt_g9(ratios.first_stage()),
            ratios.largest_module_macs
        );
    }
    Ok(s)
}
