use dgl_core::harness::{gen_synthetic, SyntheticKind};
use dgl_core::net::{ClassifierKind, GreedyStage, HeadSpec, StageSpec};
use dgl_core::probe::{
    drift_estimate, estimate_constants, grad_norm_estimate, histogram_distance, toy_specs, DriftProbe, SamplingPlan,
    StageProbe,
};
use dgl_core::sched::{OptimizerConfig, Schedule};
use dgl_core::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn linear_stage(d: usize, classes: usize) -> GreedyStage {
    let spec = StageSpec {
        input_shape: vec![d],
        layers: vec![],
        head: HeadSpec::Classifier(ClassifierKind::Linear),
        classes,
    };
    GreedyStage::new(0, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
}

#[test]
fn four_point_softmax_regression_gradient() {
    let x = [[1.0, 0.5], [-0.5, 2.0], [0.0, -1.0], [1.5, 1.0]];
    let y = [0, 1, 2, 1];
    let w = [[0.2, -0.1, 0.3], [0.0, 0.4, -0.2]];
    let b = [0.1, -0.3, 0.05];
    let mut stage = linear_stage(2, 3);
    let flat: Vec<f64> = w.iter().flatten().copied().chain(b).collect();
    stage.set_flat_params(&flat).unwrap();

    // dL/dW = X^T (P - Y) / n, dL/db = mean(P - Y).
    let mut gw = [[0.0; 3]; 2];
    let mut gb = [0.0; 3];
    for (xi, &yi) in x.iter().zip(&y) {
        let z: Vec<f64> = (0..3).map(|c| xi[0] * w[0][c] + xi[1] * w[1][c] + b[c]).collect();
        let m = z.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for c in 0..3 {
            let d = e[c] / s - if c == yi { 1.0 } else { 0.0 };
            gb[c] += d / 4.0;
            gw[0][c] += xi[0] * d / 4.0;
            gw[1][c] += xi[1] * d / 4.0;
        }
    }
    let want: f64 = gw.iter().flatten().chain(&gb).map(|v| v * v).sum();
    let xt = Tensor::new(vec![4, 2], x.iter().flatten().copied().collect()).unwrap();
    let got = grad_norm_estimate(&stage, &xt, &y).unwrap();
    assert!((got - want).abs() < 1e-14, "{got} vs {want}");
}

#[test]
fn zero_at_a_symmetric_critical_point() {
    let mut stage = linear_stage(2, 2);
    stage.set_flat_params(&[0.0; 6]).unwrap();
    let x = Tensor::new(vec![4, 2], vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]).unwrap();
    assert_eq!(grad_norm_estimate(&stage, &x, &[0, 0, 1, 1]).unwrap(), 0.0);
}

#[test]
fn gradient_norm_ignores_sample_order() {
    let d = gen_synthetic(SyntheticKind::Blobs, 60, 3, 1).unwrap();
    let (x, y) = d.train();
    let stage = GreedyStage::new(0, &toy_specs(3)[1], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let a = grad_norm_estimate(&stage, &x, y).unwrap();
    let perm: Vec<usize> = (0..y.len()).rev().collect();
    let xs = x.select_rows(&perm);
    let ys: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
    let b = grad_norm_estimate(&stage, &xs, &ys).unwrap();
    assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} {b}");
}

#[test]
fn variance_constant_is_stable_across_budgets() {
    let d = gen_synthetic(SyntheticKind::Blobs, 200, 4, 2).unwrap();
    let (x, y) = d.train();
    let mut stage = GreedyStage::new(1, &toy_specs(4)[1], &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let opt = OptimizerConfig::new(0.1, 0.0, 0.0, Schedule::Constant).unwrap();
    let mut iterates = vec![stage.flat_params()];
    for t in 0..40 {
        let s = (t * 16) % 144;
        stage
            .step(&x.slice_rows(s, s + 16), &y[s..s + 16], &opt.sgd_at(t as u64, 0))
            .unwrap();
        iterates.push(stage.flat_params());
    }
    let mut probe = StageProbe::new(stage, x, y.to_vec()).unwrap();
    let mut g = |budget| {
        estimate_constants(&mut probe, &iterates, &SamplingPlan::new(budget, 3))
            .unwrap()
            .g
    };
    let (g1, g2) = (g(8), g(16));
    assert!(g1.is_finite() && g2.is_finite() && g1 > 0.0);
    let ratio = g2 / g1;
    assert!((0.5..=2.0).contains(&ratio), "{g1} {g2}");
}

#[test]
fn unchanged_first_stage_input_has_zero_drift() {
    // Stage 1 always sees the raw data: its input density never moves.
    let d = gen_synthetic(SyntheticKind::Blobs, 100, 4, 0).unwrap();
    let (x, _) = d.train();
    assert_eq!(drift_estimate(&x, &x, 9).unwrap(), 0.0);
}

fn histogram(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0u32..20, n).prop_filter_map("non-empty mass", |c| {
        let total: u32 = c.iter().sum();
        (total > 0).then(|| c.iter().map(|&v| v as f64 / total as f64).collect())
    })
}

proptest! {
    #[test]
    fn histogram_distance_is_a_bounded_metric(
        (a, b, c) in (2usize..12).prop_flat_map(|n| (histogram(n), histogram(n), histogram(n)))
    ) {
        let ab = histogram_distance(&a, &b).unwrap();
        let ba = histogram_distance(&b, &a).unwrap();
        let ac = histogram_distance(&a, &c).unwrap();
        let cb = histogram_distance(&c, &b).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=2.0).contains(&ab));
        prop_assert!(ab <= ac + cb + 1e-12);
        prop_assert_eq!(histogram_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn probe_drift_obeys_triangle_inequality(seed in any::<u64>(), shift in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let reference = Tensor::randn(&[80, 6], 1.0, &mut rng);
        let p = Tensor::randn(&[80, 6], 1.0, &mut rng).map(|v| v + shift);
        let q = Tensor::randn(&[80, 6], 1.5, &mut rng);
        let probe = DriftProbe::new(&reference, seed).unwrap();
        let (hr, hp, hq) = (
            probe.histogram(&reference).unwrap(),
            probe.histogram(&p).unwrap(),
            probe.histogram(&q).unwrap(),
        );
        let pr = probe.drift(&p, &reference).unwrap();
        prop_assert!((pr - histogram_distance(&hp, &hr).unwrap()).abs() < 1e-12);
        prop_assert!(pr <= histogram_distance(&hp, &hq).unwrap() + histogram_distance(&hq, &hr).unwrap() + 1e-12);
        prop_assert_eq!(probe.drift(&reference, &reference).unwrap(), 0.0);
    }
}
