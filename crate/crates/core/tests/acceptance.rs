//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits non-zero if any criterion fails.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use dgl_core::harness::{
    format_records, gen_synthetic, run_oracle_suite, Experiment, ExperimentConfig, SweepKind, SweepRow, SyntheticKind,
    TrainerSpec,
};
use dgl_core::net::{build_cifar6, split, AuxKind, GreedyStage, Network};
use dgl_core::probe::{run_theory, TheoryConfig};
use dgl_core::sched::{
    metric, train_e2e, train_sync, BatchStream, ExecMode, OptimizerConfig, Schedule, TrainConfig,
    TrainReport,
};
use dgl_core::{ReplayBuffer, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn experiment(name: &str) -> Experiment {
    Experiment::from_file(&config_path(name)).unwrap()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

const SEEDS: [u64; 3] = [0, 1, 2];

// --- 1 ---------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let summary = run_oracle_suite(100, 0).map_err(|e| e.to_string())?;
    let secs = t.elapsed().as_secs_f64();
    let worst = summary
        .results
        .iter()
        .map(|r| r.max_rel_err)
        .fold(0.0, f64::max);
    check(
        summary.passed() && secs < 60.0,
        format!(
            "{} suites x 100 cases, worst rel err {worst:.2e} (tol 1e-4), {secs:.1}s (limit 60s)",
            summary.results.len()
        ),
    )
}

// --- 2 ---------------------------------------------------------------------

fn k1_equivalence() -> Outcome {
    let steps = 200;
    let d = gen_synthetic(SyntheticKind::GridImg, 500, 2, 4).unwrap();
    let (x, y) = d.train();
    let specs = build_cifar6(4, 2, [1, 8, 8], AuxKind::Mlp).unwrap();
    let merged = split(&specs, 1).unwrap();
    let opt = OptimizerConfig::new(0.05, 0.9, 5e-4, Schedule::StepDecay { factor: 0.2, period: 3 }).unwrap();
    let mut stage = GreedyStage::build_all(&merged, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut net = Network::new(&specs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut stream = BatchStream::new(x.clone(), y.to_vec(), 16, 5).unwrap();
    let pe = stream.batches_per_epoch() as u64;
    // Step by step: every intermediate parameter vector must agree exactly.
    let mut diverged = None;
    for t in 0..steps {
        let b = stream.next_batch();
        let sgd = opt.sgd_at(t, t / pe);
        let (_, la) = stage[0].step(&b.x, &b.y, &sgd).unwrap();
        let lb = net.step(&b.x, &b.y, &sgd).unwrap();
        if la.to_bits() != lb.to_bits() || stage[0].flat_params() != net.flat_params() {
            diverged = Some(t);
            break;
        }
    }
    if let Some(t) = diverged {
        return Err(format!("parameters diverge at step {t}"));
    }
    // The trainers themselves over the same 200 steps.
    let epochs = steps / pe;
    let cfg = TrainConfig { opt, epochs };
    let mut st = GreedyStage::build_all(&merged, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut net = Network::new(&specs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let mut s1 = BatchStream::new(x.clone(), y.to_vec(), 16, 5).unwrap();
    let mut s2 = s1.clone();
    let a = train_sync(&mut st, &mut s1, &cfg, None).unwrap();
    let b = train_e2e(&mut net, &mut s2, &cfg, None).unwrap();
    let bitwise = |r: &TrainReport| r.values(1, metric::LOSS).iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    check(
        epochs * pe == steps && a == b && bitwise(&a) == bitwise(&b) && st[0].flat_params() == net.flat_params(),
        format!(
            "{steps} steps, {} parameters identical at every step; trainer reports identical",
            stage[0].num_params()
        ),
    )
}

// --- 3 ---------------------------------------------------------------------

// Brute force: insertion-ordered list, evict the front; a read scans from
// the newest end and keeps the first entry with the smallest reuse count.
struct Oracle {
    cap: usize,
    items: VecDeque<(u64, u64)>,
}

impl Oracle {
    fn write(&mut self, id: u64) {
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back((id, 0));
    }

    fn read(&mut self) -> Option<u64> {
        let min = self.items.iter().map(|e| e.1).min()?;
        let e = self.items.iter_mut().rev().find(|e| e.1 == min)?;
        e.1 += 1;
        Some(e.0)
    }

    fn snapshot(&self) -> Vec<(u64, u64)> {
        let mut v: Vec<_> = self.items.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

fn buffer_protocol() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ops = 0usize;
    for case in 0..10_000 {
        let cap = [1, 2, 8, 50][case % 4];
        let len = rng.random_range(1..=4 * cap + 20);
        let mut buf = ReplayBuffer::new(cap).unwrap();
        let mut oracle = Oracle {
            cap,
            items: VecDeque::new(),
        };
        let mut next_id = 0u64;
        for _ in 0..len {
            ops += 1;
            if rng.random_bool(0.5) {
                buf.write(Tensor::full(&[1, 1], next_id as f64), vec![next_id as usize]).unwrap();
                oracle.write(next_id);
                next_id += 1;
            } else {
                let got = buf.read().ok().map(|(_, y, _)| y[0] as u64);
                let want = oracle.read();
                if got != want {
                    return Err(format!("case {case} (M={cap}): read {got:?}, oracle {want:?}"));
                }
            }
            let mut state: Vec<(u64, u64)> = buf
                .records()
                .iter()
                .map(|r| (r.labels[0] as u64, r.reuse_count))
                .collect();
            state.sort_unstable();
            if state != oracle.snapshot() {
                return Err(format!("case {case} (M={cap}): contents differ from oracle"));
            }
        }
    }
    Ok(format!("10000 sequences, {ops} operations, M in {{1,2,8,50}}: all reads and contents match"))
}

// --- 4, 5 ------------------------------------------------------------------

struct GreedyRuns {
    sync: Vec<TrainReport>,
    sequential: Vec<TrainReport>,
    secs: f64,
}

fn greedy_runs() -> &'static GreedyRuns {
    static RUNS: OnceLock<GreedyRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let t = Instant::now();
        let sync = experiment("gridimg_sync.conf");
        let seq = experiment("gridimg_sequential.conf");
        assert!(matches!(sync.cfg.trainer, TrainerSpec::Sync { epochs: 30, .. }));
        assert!(matches!(seq.cfg.trainer, TrainerSpec::Sequential { epochs: 30 }));
        assert_eq!(sync.specs.len(), 6);
        assert_eq!(sync.data.len(), 4000);
        GreedyRuns {
            sync: SEEDS.iter().map(|&s| sync.run(s).unwrap()).collect(),
            sequential: SEEDS.iter().map(|&s| seq.run(s).unwrap()).collect(),
            secs: t.elapsed().as_secs_f64(),
        }
    })
}

fn sequential_vs_parallel() -> Outcome {
    let r = greedy_runs();
    let acc = |reps: &[TrainReport]| mean(&reps.iter().map(|x| x.last(4, metric::TEST_ACC).unwrap()).collect::<Vec<_>>());
    let (a, b) = (acc(&r.sync), acc(&r.sequential));
    let gap = 100.0 * (a - b).abs();
    check(
        gap <= 2.0 && r.secs < 600.0,
        format!(
            "stage-4 test acc sync {:.2}% vs sequential {:.2}%, gap {gap:.2} pts (tol 2.0); {:.0}s (limit 600s)",
            100.0 * a,
            100.0 * b,
            r.secs
        ),
    )
}

fn progressive_depth() -> Outcome {
    let r = greedy_runs();
    let k = r.sync[0].stages();
    let losses: Vec<f64> = (1..=k)
        .map(|j| mean(&r.sync.iter().map(|x| x.last(j, metric::EPOCH_LOSS).unwrap()).collect::<Vec<_>>()))
        .collect();
    let worst = (2..k).map(|j| losses[j] / losses[j - 1]).fold(0.0, f64::max);
    let shown: Vec<String> = losses.iter().map(|l| format!("{l:.4}")).collect();
    check(
        worst <= 1.05,
        format!(
            "final train loss by stage [{}], worst L(j+1)/L(j) for j>=2 is {worst:.3} (limit 1.05)",
            shown.join(", ")
        ),
    )
}

// --- 6, 7, 8 ---------------------------------------------------------------

fn slowdown_rows() -> &'static Vec<SweepRow> {
    static ROWS: OnceLock<Vec<SweepRow>> = OnceLock::new();
    ROWS.get_or_init(|| {
        let exp = experiment("gridimg_async.conf");
        let sw = exp.cfg.sweep.as_ref().unwrap();
        assert_eq!(sw.kind, SweepKind::Slowdown);
        assert_eq!(sw.slowdowns, [1.0, 1.1, 1.2, 2.0]);
        assert_eq!(sw.buffer_sizes, [50]);
        assert!(sw.positions.is_empty());
        assert_eq!(sw.seeds, SEEDS);
        exp.sweep().unwrap()
    })
}

fn mean_acc(rows: &[SweepRow], keep: impl Fn(&SweepRow) -> bool) -> (f64, usize) {
    let v: Vec<f64> = rows.iter().filter(|r| keep(r)).map(|r| r.final_acc).collect();
    (mean(&v), v.len())
}

fn async_parity() -> Outcome {
    let mut exp = experiment("gridimg_async.conf");
    let TrainerSpec::Async(a) = exp.cfg.trainer else {
        return Err("async config does not use the async trainer".into());
    };
    let bpe = exp.batches_per_epoch();
    if a.update_cap % bpe != 0 {
        return Err(format!("update cap {} is not a whole number of epochs of {bpe}", a.update_cap));
    }
    exp.cfg.trainer = TrainerSpec::Sync {
        epochs: a.update_cap / bpe,
        mode: ExecMode::Loop,
    };
    let mut sync_acc = Vec::new();
    for &s in &SEEDS {
        let r = exp.run(s).unwrap();
        if r.updates.iter().any(|&u| u != a.update_cap) {
            return Err(format!("sync updates {:?} differ from cap {}", r.updates, a.update_cap));
        }
        sync_acc.push(r.final_test_acc().last().copied().flatten().unwrap());
    }
    let (async_acc, n) = mean_acc(slowdown_rows(), |r| r.slowdown == 1.0 && r.slowed_stage == 1 && r.buffer_size == 50);
    let sync_acc = mean(&sync_acc);
    let gap = 100.0 * (async_acc - sync_acc).abs();
    check(
        n == 3 && gap <= 1.0,
        format!(
            "final acc async(S=1, M=50, cap {}) {:.2}% vs sync {:.2}% over {n} seeds, gap {gap:.2} pts (tol 1.0)",
            a.update_cap,
            100.0 * async_acc,
            100.0 * sync_acc
        ),
    )
}

fn slowdown_robustness() -> Outcome {
    let rows = slowdown_rows();
    let (base, n1) = mean_acc(rows, |r| r.slowdown == 1.0);
    let (a11, _) = mean_acc(rows, |r| r.slowdown == 1.1);
    let (a12, n12) = mean_acc(rows, |r| r.slowdown == 1.2);
    let (a20, n20) = mean_acc(rows, |r| r.slowdown == 2.0);
    let gap = 100.0 * (base - a12);
    check(
        n1 == 18 && n12 == 18 && n20 == 18 && gap <= 1.5,
        format!(
            "mean acc S=1.0 {:.2}%, 1.1 {:.2}%, 1.2 {:.2}% (drop {gap:.2} pts, tol 1.5); S=2.0 {:.2}% (drop {:.2} pts, reported only)",
            100.0 * base,
            100.0 * a11,
            100.0 * a12,
            100.0 * a20,
            100.0 * (base - a20)
        ),
    )
}

fn buffer_robustness() -> Outcome {
    let exp = experiment("gridimg_buffer.conf");
    let TrainerSpec::Async(a) = exp.cfg.trainer else {
        return Err("buffer config does not use the async trainer".into());
    };
    let sw = exp.cfg.sweep.as_ref().unwrap();
    if a.slowdown != 1.2 || sw.kind != SweepKind::Buffer || sw.buffer_sizes != [1, 5, 50] {
        return Err("buffer config is not the M in {1,5,50} sweep at S=1.2".into());
    }
    let rows = exp.sweep().unwrap();
    let accs: Vec<(f64, usize)> = [1, 5, 50].iter().map(|&m| mean_acc(&rows, |r| r.buffer_size == m)).collect();
    let gap = 100.0 * (accs[2].0 - accs[0].0);
    check(
        accs.iter().all(|&(_, n)| n == 18) && gap <= 3.0,
        format!(
            "mean acc at S=1.2: M=1 {:.2}%, M=5 {:.2}%, M=50 {:.2}%; M=1 trails M=50 by {gap:.2} pts (tol 3.0)",
            100.0 * accs[0].0,
            100.0 * accs[1].0,
            100.0 * accs[2].0
        ),
    )
}

// --- 9 ---------------------------------------------------------------------

fn flop_ratios() -> Outcome {
    let t = Instant::now();
    // Hand counts for width 128 at 32x32, 10 classes. Primary modules are
    // conv3x3 MACs h*w*cin*cout*9; the three pooled-width stages tie.
    let conv = |hw: u64, cin: u64, cout: u64, k: u64| hw * cin * cout * k * k;
    let largest = [
        conv(1024, 3, 128, 3),
        conv(1024, 128, 128, 3),
        conv(256, 128, 256, 3),
        conv(256, 256, 256, 3),
        conv(64, 256, 512, 3),
        conv(64, 512, 512, 3),
    ]
    .into_iter()
    .max()
    .unwrap();
    // First-stage heads see 128 x 32 x 32.
    let tail = 3 * 512 * 512 + 512 * 10;
    let want = [
        (AuxKind::Mlp, tail),
        (AuxKind::MlpSr, 3 * conv(64, 128, 128, 1) + tail),
        (AuxKind::Cnn, 2 * conv(1024, 128, 128, 3) + 512 * 10),
    ];
    let mut got = Vec::new();
    for (kind, macs) in want {
        let specs = build_cifar6(128, 10, [3, 32, 32], kind).unwrap();
        let r = dgl_core::net::aux_ratios(&specs).unwrap();
        let expected = macs as f64 / largest as f64;
        if r.largest_module_macs != largest || (r.first_stage() - expected).abs() > 1e-12 {
            return Err(format!(
                "{kind}: ratio {} vs hand count {expected} (largest {} vs {largest})",
                r.first_stage(),
                r.largest_module_macs
            ));
        }
        got.push(r.first_stage());
    }
    let secs = t.elapsed().as_secs_f64();
    check(
        got[0] <= 0.02 && got[1] <= 0.08 && got[2] >= 1.0 && secs < 1.0,
        format!(
            "mlp_aux {:.2}% (<= 2%), mlp_sr_aux {:.2}% (<= 8%), cnn_aux {:.0}% (>= 100%), {secs:.3}s",
            100.0 * got[0],
            100.0 * got[1],
            100.0 * got[2]
        ),
    )
}

// --- 10 --------------------------------------------------------------------

fn theory_probe() -> Outcome {
    let cfg = TheoryConfig::default();
    if cfg.steps != 5000 || cfg.eta0 != 0.5 || cfg.alpha != 0.7 || cfg.seeds.len() != 3 {
        return Err("theory defaults are not robbins_monro(0.5, 0.7) over 5000 steps and 3 seeds".into());
    }
    let out = run_theory(&cfg).unwrap();
    let b = &out.bound;
    let (g, c) = (out.grad_norm_ratio(), out.drift_ratio());
    check(
        b.lhs <= b.rhs && g < 0.1 && c < 0.2,
        format!(
            "(a) lhs {:.4} <= rhs {:.4} [{}]; (b) best grad norm ratio {g:.4} < 0.1; (c) final drift ratio {c:.4} < 0.2",
            b.lhs, b.rhs, b.mode
        ),
    )
}

// --- 11 --------------------------------------------------------------------

fn determinism() -> Outcome {
    let base = "seed = 11\n[data]\nkind = gridimg\nn = 300\nclasses = 2\nnoise = 1.0\nmax_shift = 1\n\
                [model]\narch = cifar6\nwidth = 4\n[train]\nbatch_size = 16\n";
    let trainers = [
        "trainer = sync\nepochs = 2\n",
        "trainer = sync\nepochs = 2\nmode = pipelined\n",
        "trainer = sequential\nepochs = 1\n",
        "trainer = e2e\nepochs = 2\n",
        "trainer = async\n[async]\nupdate_cap = 20\nbuffer_size = 4\nslowdown = 1.5\nslowed_stage = 3\n",
    ];
    for t in trainers {
        let text = format!("{base}{t}");
        let cfg: ExperimentConfig = text.parse().map_err(|e| format!("{e}"))?;
        let a = format_records(&Experiment::new(cfg.clone()).unwrap().run(cfg.seed).unwrap().records);
        let b = format_records(&Experiment::new(cfg.clone()).unwrap().run(cfg.seed).unwrap().records);
        if a != b {
            return Err(format!("CSV differs between repeated runs for `{}`", t.lines().next().unwrap()));
        }
    }
    Ok(format!("{} trainer configurations produce byte-identical CSV on repeat", trainers.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("gradient oracle suite", gradient_oracle),
        ("K=1 equivalence", k1_equivalence),
        ("buffer protocol oracle", buffer_protocol),
        ("sequential vs parallel greedy", sequential_vs_parallel),
        ("progressive depth", progressive_depth),
        ("async S=1.0 parity", async_parity),
        ("slowdown robustness", slowdown_robustness),
        ("buffer-size robustness", buffer_robustness),
        ("FLOP ratios", flop_ratios),
        ("theory probe", theory_probe),
        ("determinism", determinism),
    ];
    // `cargo test --test acceptance -- 3 9` runs only the listed criteria.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {:>2} {name}: PASS ({d}) [{secs:.1}s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({d}) [{secs:.1}s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
