//! Fixtures shared by the benchmarks.

use dgl_core::harness::{gen_synthetic, SyntheticKind};
use dgl_core::net::{build_cifar6, AuxKind, GreedyStage, StageSpec};
use dgl_core::nn::LayerParams;
use dgl_core::sched::BatchStream;
use dgl_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random input and 3x3 conv parameters for an `n x cin x side x side` batch.
pub fn conv_case(n: usize, cin: usize, cout: usize, side: usize) -> (Tensor, LayerParams) {
    let mut r = rng(1);
    let x = Tensor::randn(&[n, cin, side, side], 1.0, &mut r);
    (x, LayerParams::conv_init(cin, cout, 3, &mut r))
}

/// Width-`width` six-stage net on 8x8 single-channel templates, with a
/// stream of 32-sample batches.
pub fn gridimg_stages(width: usize) -> (Vec<StageSpec>, Vec<GreedyStage>, BatchStream) {
    let d = gen_synthetic(SyntheticKind::GridImg, 512, 2, 0).expect("gridimg");
    let (x, y) = d.train();
    let specs = build_cifar6(width, 2, [1, 8, 8], AuxKind::Mlp).expect("cifar6 specs");
    let stages = GreedyStage::build_all(&specs, &mut rng(2)).expect("stages");
    let stream = BatchStream::new(x, y.to_vec(), 32, 3).expect("stream");
    (specs, stages, stream)
}
