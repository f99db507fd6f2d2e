use dgl_core::net::{aux_ratios, build_cifar6, split, AuxKind, GreedyStage, HeadSpec};
use dgl_core::nn::Mode;
use dgl_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

// Central differences of the local loss against the analytic gradient of
// every body and head parameter. Denominators are floored at 1e-6: entries
// smaller than that sit at the rounding noise of the differences.
fn fd_check(stage: &GreedyStage, x: &Tensor, y: &[usize]) -> f64 {
    let eps = 1e-5;
    let mut s = stage.clone();
    let analytic: Vec<f64> = s
        .local_grad(x, y, Mode::Eval)
        .unwrap()
        .grads
        .iter()
        .flat_map(|g| g.data().to_vec())
        .collect();
    let base = stage.flat_params();
    assert_eq!(base.len(), analytic.len());
    let loss_at = |p: &[f64]| {
        let mut t = stage.clone();
        t.set_flat_params(p).unwrap();
        t.local_grad(x, y, Mode::Eval).unwrap().loss
    };
    let mut worst = 0.0f64;
    let mut p = base.clone();
    for i in 0..base.len() {
        p[i] = base[i] + eps;
        let up = loss_at(&p);
        p[i] = base[i] - eps;
        let down = loss_at(&p);
        p[i] = base[i];
        let num = (up - down) / (2.0 * eps);
        let err = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn local_gradient_through_aux_head_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let specs = build_cifar6(2, 3, [1, 4, 4], AuxKind::Mlp).unwrap();
    let stages = GreedyStage::build_all(&specs, &mut rng).unwrap();
    let x = Tensor::randn(&[5, 1, 4, 4], 1.0, &mut rng);
    let y = [0, 1, 2, 1, 0];
    // Stage 1 (conv, bn, relu) and stage 2 (adds max pooling) with MLP heads.
    let err1 = fd_check(&stages[0], &x, &y);
    let h = stages[0].forward(&x).unwrap();
    let err2 = fd_check(&stages[1], &h, &y);
    assert!(err1 < 1e-4 && err2 < 1e-4, "{err1} {err2}");
}

#[test]
fn cnn_head_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let specs = build_cifar6(2, 2, [1, 4, 4], AuxKind::Cnn).unwrap();
    let stage = GreedyStage::new(0, &specs[0], &mut rng).unwrap();
    let x = Tensor::randn(&[4, 1, 4, 4], 1.0, &mut rng);
    let err = fd_check(&stage, &x, &[0, 1, 1, 0]);
    assert!(err < 1e-4, "{err}");
}

#[test]
fn mlp_head_cost_at_width_128() {
    let mlp = aux_ratios(&build_cifar6(128, 10, [3, 32, 32], AuxKind::Mlp).unwrap()).unwrap();
    let sr = aux_ratios(&build_cifar6(128, 10, [3, 32, 32], AuxKind::MlpSr).unwrap()).unwrap();
    assert!(mlp.first_stage() <= 0.05 && sr.first_stage() <= 0.05);
    // Hand counts: pooled 2x2 features of C channels feed three 4C-wide
    // layers and a 10-way output; C doubles after stages 2 and 4. The
    // 4C rule puts stage 5 (C = 512) above the 5% budget.
    let largest = 64.0 * 512.0 * 512.0 * 9.0;
    let tail = |c: f64| 3.0 * (4.0 * c) * (4.0 * c) + 4.0 * c * 10.0;
    let want: Vec<f64> = [128.0, 128.0, 256.0, 256.0, 512.0].iter().map(|&c| tail(c) / largest).collect();
    for (got, want) in mlp.per_stage.iter().zip(&want) {
        assert!((got - want).abs() < 1e-15, "{got} {want}");
    }
    assert!(mlp.per_stage[..4].iter().all(|&v| v <= 0.05));
    assert!(mlp.per_stage[4] > 0.08);
}

#[test]
fn split_two_is_the_best_single_cut() {
    let specs = build_cifar6(128, 10, [3, 32, 32], AuxKind::Mlp).unwrap();
    let macs: Vec<u64> = specs.iter().map(|s| s.flop_count().unwrap().primary_total).collect();
    let best = (1..6)
        .map(|c| {
            let left: u64 = macs[..c].iter().sum();
            let right: u64 = macs[c..].iter().sum();
            left.abs_diff(right)
        })
        .min()
        .unwrap();
    let halves = split(&specs, 2).unwrap();
    assert_eq!(halves.len(), 2);
    let left = halves[0].flop_count().unwrap().primary_total;
    let right = halves[1].flop_count().unwrap().primary_total;
    assert_eq!(left.abs_diff(right), best);
    assert!(matches!(halves[0].head, HeadSpec::Aux(AuxKind::Mlp)));
    assert!(halves[1].head.is_classifier());
}
