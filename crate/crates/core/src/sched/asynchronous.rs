//! Asynchronous greedy training through replay buffers.
//!
//! The simulation draws one worker per tick from a [`DelayModel`]. Worker 1
//! pulls the next stream batch, worker `j > 1` reads buffer `j - 1`; the
//! worker then updates (or, once at its cap, only forwards) and writes its
//! output to buffer `j`. A draw that finds an empty upstream buffer is a
//! stall. The run ends once every stage has made `update_cap` updates.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::thread;

use log::debug;

use super::delay::{DelayModel, WorkerSampler};
use super::optim::OptimizerConfig;
use super::report::{metric, MetricRecord, TrainReport};
use super::stream::BatchStream;
use super::train::{evaluate, record, update_and_log, EpochMeter, EvalSet};
use crate::error::{Error, Result};
use crate::net::GreedyStage;
use crate::replay::ReplayBuffer;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AsyncConfig {
    pub opt: OptimizerConfig,
    /// Capacity of each inter-stage buffer.
    pub capacity: usize,
    /// Updates each stage performs before freezing.
    pub update_cap: u64,
    /// Abort after this many ticks; defaults to a generous multiple of the
    /// total work.
    pub max_ticks: Option<u64>,
}

/// One simulation tick. Workers are 1-based; `read` and `wrote` are the
/// insertion sequence numbers of the buffer records touched.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AsyncEvent {
    Stall {
        tick: u64,
        worker: usize,
    },
    Work {
        tick: u64,
        worker: usize,
        read: Option<u64>,
        updated: bool,
        wrote: Option<u64>,
    },
}

fn validate(stages: &[GreedyStage], cfg: &AsyncConfig) -> Result<()> {
    if stages.is_empty() {
        return Err(Error::invalid("no stages to train"));
    }
    if cfg.update_cap == 0 {
        return Err(Error::config("update_cap", "must be positive"));
    }
    if cfg.capacity == 0 {
        return Err(Error::config("buffer_size", "must be positive"));
    }
    Ok(())
}

/// Runs the simulation with worker draws from `delay`, seeded by `seed`.
pub fn train_async(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    delay: &DelayModel,
    cfg: &AsyncConfig,
    seed: u64,
    eval: Option<&EvalSet>,
) -> Result<TrainReport> {
    if delay.workers() != stages.len() {
        return Err(Error::invalid(format!(
            "delay model covers {} workers but there are {} stages",
            delay.workers(),
            stages.len()
        )));
    }
    let mut sampler = delay.sampler(seed);
    train_async_with(stages, stream, &mut sampler, cfg, eval).map(|(r, _)| r)
}

/// Runs the simulation with an arbitrary worker source and also returns
/// the per-tick event log.
pub fn train_async_with(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    sampler: &mut dyn WorkerSampler,
    cfg: &AsyncConfig,
    eval: Option<&EvalSet>,
) -> Result<(TrainReport, Vec<AsyncEvent>)> {
    validate(stages, cfg)?;
    let j_count = stages.len();
    let pe = stream.batches_per_epoch().max(1) as u64;
    let cap = cfg.update_cap;
    let max_ticks = cfg
        .max_ticks
        .unwrap_or_else(|| cap.saturating_mul(j_count as u64).saturating_mul(1000).max(10_000));
    let mut buffers = (1..j_count)
        .map(|_| ReplayBuffer::new(cfg.capacity))
        .collect::<Result<Vec<_>>>()?;
    let mut meters = vec![EpochMeter::default(); j_count];
    let mut stalls = vec![0u64; j_count];
    let mut log = Vec::new();
    let mut events = Vec::new();
    let mut evaluated = 0u64;
    let mut tick = 0u64;
    let min_updates = |st: &[GreedyStage]| st.iter().map(GreedyStage::updates).min().unwrap_or(0);

    while min_updates(stages) < cap {
        if tick >= max_ticks {
            return Err(Error::invalid(format!(
                "asynchronous run did not finish within {max_ticks} ticks"
            )));
        }
        tick += 1;
        let w = sampler.next_worker();
        if w >= j_count {
            return Err(Error::invalid(format!("sampler chose worker {w} of {j_count}")));
        }
        let (x, y, read) = if w == 0 {
            let b = stream.next_batch();
            (b.x, b.y, None)
        } else {
            match buffers[w - 1].read() {
                Ok((x, y, seq)) => (x, y, Some(seq)),
                Err(Error::EmptyBuffer) => {
                    stalls[w] += 1;
                    events.push(AsyncEvent::Stall { tick, worker: w + 1 });
                    continue;
                }
                Err(e) => return Err(e),
            }
        };
        let st = &mut stages[w];
        let updated = st.updates() < cap;
        let out = if updated {
            update_and_log(st, &x, &y, &cfg.opt, pe, &mut meters[w], &mut log)?
        } else {
            st.forward(&x)?
        };
        let wrote = if w + 1 < j_count {
            let b = &mut buffers[w];
            let seq = b.next_seq();
            b.write(out, y)?;
            Some(seq)
        } else {
            None
        };
        events.push(AsyncEvent::Work {
            tick,
            worker: w + 1,
            read,
            updated,
            wrote,
        });
        if let Some(ev) = eval {
            let done = min_updates(stages) / pe;
            if done > evaluated {
                evaluated = done;
                push_eval(stages, ev, done - 1, &mut log)?;
            }
        }
    }
    if let Some(ev) = eval {
        if cap % pe != 0 {
            push_eval(stages, ev, cap / pe, &mut log)?;
        }
    }
    let total_stalls = stalls.iter().sum();
    debug!("asynchronous run: {tick} ticks, {total_stalls} stalls");
    for (j, s) in stalls.iter().enumerate() {
        record(&mut log, stages[j].updates(), 0, j + 1, metric::STALLS, *s as f64);
    }
    record(&mut log, tick, 0, 0, metric::TICKS, tick as f64);
    record(&mut log, tick, 0, 0, metric::STALLS, total_stalls as f64);
    Ok((
        TrainReport {
            records: log,
            ticks: tick,
            stalls: total_stalls,
            updates: stages.iter().map(GreedyStage::updates).collect(),
        },
        events,
    ))
}

fn push_eval(stages: &[GreedyStage], ev: &EvalSet, epoch: u64, log: &mut Vec<MetricRecord>) -> Result<()> {
    for (j, acc) in evaluate(stages, ev)?.into_iter().enumerate() {
        record(log, stages[j].updates(), epoch, j + 1, metric::TEST_ACC, acc);
    }
    Ok(())
}

/// One OS thread per stage, sharing buffers behind locks and without a
/// worker schedule: real thread interleaving replaces the pmf. Not
/// reproducible tick by tick; every stage still ends at exactly
/// `update_cap` updates.
pub fn train_async_threaded(
    stages: &mut [GreedyStage],
    stream: &mut BatchStream,
    cfg: &AsyncConfig,
    eval: Option<&EvalSet>,
) -> Result<TrainReport> {
    validate(stages, cfg)?;
    let j_count = stages.len();
    let pe = stream.batches_per_epoch().max(1) as u64;
    let cap = cfg.update_cap;
    let opt = cfg.opt;
    let buffers = (1..j_count)
        .map(|_| ReplayBuffer::new(cfg.capacity).map(Mutex::new))
        .collect::<Result<Vec<_>>>()?;
    let capped: Vec<AtomicBool> = (0..j_count).map(|_| AtomicBool::new(false)).collect();
    let failed = AtomicBool::new(false);
    let stream = Mutex::new(stream);

    let results: Vec<Result<(Vec<MetricRecord>, u64)>> = thread::scope(|s| {
        let handles: Vec<_> = stages
            .iter_mut()
            .enumerate()
            .map(|(j, st)| {
                let (buffers, capped, failed, stream) = (&buffers, &capped, &failed, &stream);
                s.spawn(move || -> Result<(Vec<MetricRecord>, u64)> {
                    let r = worker(j, st, buffers, capped, failed, stream, &opt, pe, cap);
                    if r.is_err() {
                        failed.store(true, Ordering::SeqCst);
                    }
                    r
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("stage worker panicked"))
            .collect()
    });
    let mut log = Vec::new();
    let mut stalls = 0;
    for (j, r) in results.into_iter().enumerate() {
        let (mut l, s) = r?;
        log.append(&mut l);
        record(&mut log, stages[j].updates(), 0, j + 1, metric::STALLS, s as f64);
        stalls += s;
    }
    if let Some(ev) = eval {
        push_eval(stages, ev, cap / pe, &mut log)?;
    }
    Ok(TrainReport {
        records: log,
        ticks: 0,
        stalls,
        updates: stages.iter().map(GreedyStage::updates).collect(),
    })
}

fn lock(m: &Mutex<ReplayBuffer>) -> std::sync::MutexGuard<'_, ReplayBuffer> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

#[allow(clippy::too_many_arguments)]
fn worker(
    j: usize,
    st: &mut GreedyStage,
    buffers: &[Mutex<ReplayBuffer>],
    capped: &[AtomicBool],
    failed: &AtomicBool,
    stream: &Mutex<&mut BatchStream>,
    opt: &OptimizerConfig,
    pe: u64,
    cap: u64,
) -> Result<(Vec<MetricRecord>, u64)> {
    let mut log = Vec::new();
    let mut meter = EpochMeter::default();
    let mut stalls = 0;
    // keep feeding until this stage and everything downstream is done
    while !capped[j..].iter().all(|c| c.load(Ordering::SeqCst)) {
        if failed.load(Ordering::SeqCst) {
            return Ok((log, stalls));
        }
        let (x, y) = if j == 0 {
            let b = stream.lock().unwrap_or_else(|p| p.into_inner()).next_batch();
            (b.x, b.y)
        } else {
            let r = lock(&buffers[j - 1]).read();
            match r {
                Ok((x, y, _)) => (x, y),
                Err(Error::EmptyBuffer) => {
                    stalls += 1;
                    thread::yield_now();
                    continue;
                }
                Err(e) => return Err(e),
            }
        };
        let out = if st.updates() < cap {
            let out = update_and_log(st, &x, &y, opt, pe, &mut meter, &mut log)?;
            if st.updates() == cap {
                capped[j].store(true, Ordering::SeqCst);
            }
            out
        } else {
            st.forward(&x)?
        };
        if j + 1 < capped.len() {
            lock(&buffers[j]).write(out, y)?;
        }
    }
    Ok((log, stalls))
}
