//! Synchronous, sequential and end-to-end trainers.

use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::thread;

use super::optim::OptimizerConfig;
use super::report::{metric, MetricRecord, TrainReport};
use super::stream::BatchStream;
use crate::error::{Error, Result};
use crate::net::{GreedyStage, Network};
use crate::nn::accuracy;
use crate::tensor::Tensor;

/// Rows per forward call during evaluation.
pub const EVAL_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub opt: OptimizerConfig,
    /// Passes over the training stream (per stage for the sequential trainer).
    pub epochs: u64,
}

/// Held-out inputs and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    pub x: Tensor,
    pub y: Vec<usize>,
}

impl EvalSet {
    pub fn new(x: Tensor, y: Vec<usize>) -> Result<Self> {
        if x.batch() != y.len() || y.is_empty() {
            return Err(Error::invalid(format!(
                "evaluation set has {} inputs and {} labels",
                x.batch(),
                y.len()
            )));
        }
        Ok(Self { x, y })
    }
}

/// Execution strategy for [`train_sync`]. Both produce the same report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    /// All stages run in turn on the calling thread.
    #[default]
    Loop,
    /// One thread per stage, handing activations downstream through
    /// single-slot channels.
    Pipelined,
}

pub(crate) fn record(log: &mut Vec<MetricRecord>, step: u64, epoch: u64, stage: usize, name: &str, value: f64) {
    log.push(MetricRecord {
        step,
        epoch,
        stage,
        metric: name.to_string(),
        value,
    });
}

/// Running mean of local losses within the current pass.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct EpochMeter {
    sum: f64,
    count: u64,
}

/// Applies one local update at the stage's own step index, logging loss,
/// step size and, at pass boundaries, the pass-mean loss.
pub(crate) fn update_and_log(
    stage: &mut GreedyStage,
    x: &Tensor,
    y: &[usize],
    opt: &OptimizerConfig,
    per_epoch: u64,
    meter: &mut EpochMeter,
    log: &mut Vec<MetricRecord>,
) -> Result<Tensor> {
    let t = stage.updates();
    let epoch = t / per_epoch;
    let sgd = opt.sgd_at(t, epoch);
    let (next, loss) = stage.step(x, y, &sgd)?;
    let s = stage.index() + 1;
    record(log, t, epoch, s, metric::LOSS, loss);
    record(log, t, epoch, s, metric::LR, sgd.lr);
    meter.sum += loss;
    meter.count += 1;
    if (t + 1) % per_epoch == 0 {
        record(log, t, epoch, s, metric::EPOCH_LOSS, meter.sum / meter.count as f64);
        *meter = EpochMeter::default();
    }
    Ok(next)
}

/// Eval-mode body output and head accuracy of one stage on `x`.
pub fn stage_eval(stage: &GreedyStage, x: &Tensor, y: &[usize]) -> Result<(Tensor, f64)> {
    let mut outs = Vec::new();
    let mut correct = 0.0;
    let n = x.batch();
    for start in (0..n).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(n);
        let (out, logits) = stage.forward_with_logits(&x.slice_rows(start, end))?;
        correct += accuracy(&logits, &y[start..end]) * (end - start) as f64;
        outs.push(out);
    }
    Ok((Tensor::concat_rows(&outs)?, correct / n as f64))
}

/// Eval-mode forward of one stage body, chunked.
pub fn stage_forward(stage: &GreedyStage, x: &Tensor) -> Result<Tensor> {
    let n = x.batch();
    let outs = (0..n)
        .step_by(EVAL_CHUNK)
        .map(|s| stage.forward(&x.slice_rows(s, (s + EVAL_CHUNK).min(n))))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_rows(&outs)
}

/// Head accuracy of every stage, feeding the frozen pipeline forward.
pub fn evaluate(stages: &[GreedyStage], eval: &EvalSet) -> Result<Vec<f64>> {
    let mut x = eval.x.clone();
    let mut accs = Vec::with_capacity(stages.len());
    for st in stages {
        let (out, acc) = stage_eval(st, &x, &eval.y)?;
        accs.push(acc);
        x = out;
    }
    Ok(accs)
}

fn check_stages(stages: &[GreedyStage]) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::invalid("no stages to train"));
    }
    Ok(())
}

fn per_epoch(stream: &BatchStream) -> u64 {
    stream.batches_per_epoch().max(1) as u64
}

/// Greedy training with one local update per stage per mini-batch. Stage
/// `j` consumes stage `j - 1`'s output computed before that stage's update.
pub fn train_sync(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<TrainReport> {
    train_sync_with(stages, stream, cfg, eval, ExecMode::Loop)
}

pub fn train_sync_with(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
    mode: ExecMode,
) -> Result<TrainReport> {
    check_stages(stages)?;
    let records = match mode {
        ExecMode::Loop => sync_loop(stages, stream, cfg, eval)?,
        ExecMode::Pipelined => sync_pipelined(stages, stream, cfg, eval)?,
    };
    Ok(TrainReport {
        records,
        updates: stages.iter().map(GreedyStage::updates).collect(),
        ..Default::default()
    })
}

fn sync_loop(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<Vec<MetricRecord>> {
    let pe = per_epoch(stream);
    let mut meters = vec![EpochMeter::default(); stages.len()];
    let mut log = Vec::new();
    for epoch in 0..cfg.epochs {
        for _ in 0..pe {
            let b = stream.next_batch();
            let mut x = b.x;
            for (st, m) in stages.iter_mut().zip(&mut meters) {
                x = update_and_log(st, &x, &b.y, &cfg.opt, pe, m, &mut log)?;
            }
        }
        if let Some(ev) = eval {
            let mut x = ev.x.clone();
            for st in stages.iter() {
                let (out, acc) = stage_eval(st, &x, &ev.y)?;
                record(&mut log, st.updates(), epoch, st.index() + 1, metric::TEST_ACC, acc);
                x = out;
            }
        }
    }
    Ok(log)
}

enum Msg {
    Batch(Tensor, Vec<usize>),
    Eval(Tensor, u64),
}

// Each worker returns one record chunk per message it handled; every
// worker sees the same message sequence, so interleaving chunks
// message-major, stage-minor reproduces the loop order.
fn sync_pipelined(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<Vec<MetricRecord>> {
    let pe = per_epoch(stream);
    let opt = cfg.opt;
    let eval_y = eval.map(|e| e.y.clone());
    let results: Vec<Result<Vec<Vec<MetricRecord>>>> = thread::scope(|s| {
        let (head_tx, mut rx): (SyncSender<Msg>, Receiver<Msg>) = sync_channel(1);
        let last = stages.len() - 1;
        let mut handles = Vec::new();
        for (j, st) in stages.iter_mut().enumerate() {
            let (tx, next_rx) = sync_channel::<Msg>(1);
            let tx = (j < last).then_some(tx);
            let my_rx = std::mem::replace(&mut rx, next_rx);
            let ey = eval_y.clone();
            handles.push(s.spawn(move || -> Result<Vec<Vec<MetricRecord>>> {
                let mut chunks = Vec::new();
                let mut meter = EpochMeter::default();
                for msg in my_rx {
                    let mut log = Vec::new();
                    let fwd = match msg {
                        Msg::Batch(x, y) => {
                            let next = update_and_log(st, &x, &y, &opt, pe, &mut meter, &mut log)?;
                            Msg::Batch(next, y)
                        }
                        Msg::Eval(x, epoch) => {
                            let y = ey.as_deref().expect("eval labels present");
                            let (out, acc) = stage_eval(st, &x, y)?;
                            record(&mut log, st.updates(), epoch, j + 1, metric::TEST_ACC, acc);
                            Msg::Eval(out, epoch)
                        }
                    };
                    chunks.push(log);
                    if let Some(tx) = &tx {
                        if tx.send(fwd).is_err() {
                            break;
                        }
                    }
                }
                Ok(chunks)
            }));
        }
        'feed: for epoch in 0..cfg.epochs {
            for _ in 0..pe {
                let b = stream.next_batch();
                if head_tx.send(Msg::Batch(b.x, b.y)).is_err() {
                    break 'feed;
                }
            }
            if let Some(ev) = eval {
                if head_tx.send(Msg::Eval(ev.x.clone(), epoch)).is_err() {
                    break 'feed;
                }
            }
        }
        drop(head_tx);
        handles
            .into_iter()
            .map(|h| h.join().expect("stage worker panicked"))
            .collect()
    });
    let mut per_stage = Vec::with_capacity(results.len());
    for r in results {
        per_stage.push(r?);
    }
    let events = per_stage[0].len();
    let mut log = Vec::new();
    for e in 0..events {
        for chunks in &mut per_stage {
            log.append(&mut chunks[e]);
        }
    }
    Ok(log)
}

/// Classic greedy training: stage 1 for `epochs` passes, then stage 2 on
/// the frozen (eval-mode) outputs of stage 1, and so on. The stream is
/// rewound for every stage.
pub fn train_sequential(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<TrainReport> {
    check_stages(stages)?;
    let pe = per_epoch(stream);
    let mut feats = stream.x().clone();
    let labels = stream.y().to_vec();
    let mut eval_feats = eval.map(|e| e.x.clone());
    let mut log = Vec::new();
    for st in stages.iter_mut() {
        stream.restart();
        let mut meter = EpochMeter::default();
        for epoch in 0..cfg.epochs {
            for _ in 0..pe {
                let (idx, _) = stream.next_indices();
                let x = feats.select_rows(&idx);
                let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
                update_and_log(st, &x, &y, &cfg.opt, pe, &mut meter, &mut log)?;
            }
            if let (Some(ev), Some(ef)) = (eval, &eval_feats) {
                let (_, acc) = stage_eval(st, ef, &ev.y)?;
                record(&mut log, st.updates(), epoch, st.index() + 1, metric::TEST_ACC, acc);
            }
        }
        feats = stage_forward(st, &feats)?;
        if let Some(ef) = &mut eval_feats {
            *ef = stage_forward(st, ef)?;
        }
    }
    Ok(TrainReport {
        records: log,
        updates: stages.iter().map(GreedyStage::updates).collect(),
        ..Default::default()
    })
}

/// Joint backpropagation through the whole network with the final loss
/// only. Records use stage 1.
pub fn train_e2e(
    net: &mut Network,
    stream: &mut BatchStream,
    cfg: &TrainConfig,
    eval: Option<&EvalSet>,
) -> Result<TrainReport> {
    let pe = per_epoch(stream);
    let mut log = Vec::new();
    let mut meter = EpochMeter::default();
    for epoch in 0..cfg.epochs {
        for _ in 0..pe {
            let b = stream.next_batch();
            let t = net.updates();
            let ep = t / pe;
            let sgd = cfg.opt.sgd_at(t, ep);
            let loss = net.step(&b.x, &b.y, &sgd)?;
            record(&mut log, t, ep, 1, metric::LOSS, loss);
            record(&mut log, t, ep, 1, metric::LR, sgd.lr);
            meter.sum += loss;
            meter.count += 1;
            if (t + 1) % pe == 0 {
                record(&mut log, t, ep, 1, metric::EPOCH_LOSS, meter.sum / meter.count as f64);
                meter = EpochMeter::default();
            }
        }
        if let Some(ev) = eval {
            let n = ev.y.len();
            let mut correct = 0.0;
            for s in (0..n).step_by(EVAL_CHUNK) {
                let e = (s + EVAL_CHUNK).min(n);
                correct += net.accuracy(&ev.x.slice_rows(s, e), &ev.y[s..e])? * (e - s) as f64;
            }
            record(&mut log, net.updates(), epoch, 1, metric::TEST_ACC, correct / n as f64);
        }
    }
    Ok(TrainReport {
        records: log,
        updates: vec![net.updates()],
        ..Default::default()
    })
}
