//! Fixed layer vocabulary with hand-written backward passes.
//!
//! Layers are composed into a [`Sequential`]. A forward pass in the presence
//! of a [`GradTape`] caches whatever each layer needs to produce exact
//! reverse-mode gradients; [`Sequential::backward`] then walks the tape in
//! reverse and consumes it.

mod conv;
mod dense;
pub mod flops;
pub mod gradcheck;
mod loss;
mod norm;
mod pool;
mod spec;

pub use conv::{conv2d, conv2d_3x3};
pub use dense::dense;
pub use flops::{flop_count_layers, FlopReport};
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{accuracy, argmax_rows, softmax_xent};
pub use norm::{batchnorm, BN_EPS, BN_MOMENTUM};
pub use pool::{avgpool_to, maxpool2x2};
pub use spec::{infer_shape, LayerSpec};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Running statistics carried by normalization layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Tensor,
    pub bias: Tensor,
    pub stats: Option<RunningStats>,
}

impl LayerParams {
    pub fn new(weights: Tensor, bias: Tensor) -> Self {
        Self {
            weights,
            bias,
            stats: None,
        }
    }

    /// Dense weights `[fan_in, fan_out]`, He-normal, zero bias.
    pub fn dense_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / fan_in as f64).sqrt();
        Self::new(
            Tensor::randn(&[fan_in, fan_out], std, rng),
            Tensor::zeros(&[fan_out]),
        )
    }

    /// Conv weights `[out, in, k, k]`, He-normal over `in * k * k`, zero bias.
    pub fn conv_init<R: Rng + ?Sized>(cin: usize, cout: usize, k: usize, rng: &mut R) -> Self {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        Self::new(
            Tensor::randn(&[cout, cin, k, k], std, rng),
            Tensor::zeros(&[cout]),
        )
    }

    /// Unit scale, zero shift, running mean 0 and variance 1.
    pub fn batchnorm_init(channels: usize) -> Self {
        Self {
            weights: Tensor::full(&[channels], 1.0),
            bias: Tensor::zeros(&[channels]),
            stats: Some(RunningStats {
                mean: Tensor::zeros(&[channels]),
                var: Tensor::full(&[channels], 1.0),
                momentum: BN_MOMENTUM,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; normalization running stats are updated.
    Train,
    /// Running statistics; nothing is mutated.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Weights `[in, out]`.
    Dense(LayerParams),
    /// Weights `[out, in, k, k]`, stride 1, shape-preserving padding.
    Conv { params: LayerParams, kernel: usize },
    /// Scale in `weights`, shift in `bias`, per channel (axis 1).
    BatchNorm(LayerParams),
    Relu,
    MaxPool2,
    AvgPoolTo { h: usize, w: usize },
    Flatten,
}

impl Layer {
    pub fn params(&self) -> Option<&LayerParams> {
        match self {
            Layer::Dense(p) | Layer::BatchNorm(p) | Layer::Conv { params: p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<&mut LayerParams> {
        match self {
            Layer::Dense(p) | Layer::BatchNorm(p) | Layer::Conv { params: p, .. } => Some(p),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv { .. } => "conv",
            Layer::BatchNorm(_) => "batchnorm",
            Layer::Relu => "relu",
            Layer::MaxPool2 => "maxpool2",
            Layer::AvgPoolTo { .. } => "avgpool",
            Layer::Flatten => "flatten",
        }
    }

    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        Ok(match self {
            Layer::Dense(p) => (dense::dense(x, p)?, Cache::Input(x.clone())),
            Layer::Conv { params, kernel } => (
                conv::conv2d(x, params, *kernel)?,
                Cache::Input(x.clone()),
            ),
            Layer::BatchNorm(p) => {
                let (y, c) = norm::forward(x, p, mode)?;
                (y, Cache::Norm(c))
            }
            Layer::Relu => (relu(x), Cache::Input(x.clone())),
            Layer::MaxPool2 => {
                let (y, argmax) = pool::maxpool_forward(x)?;
                (
                    y,
                    Cache::Argmax {
                        argmax,
                        in_shape: x.shape().to_vec(),
                    },
                )
            }
            Layer::AvgPoolTo { h, w } => (
                pool::avgpool_to(x, *h, *w, false)?,
                Cache::Shape(x.shape().to_vec()),
            ),
            Layer::Flatten => {
                let n = x.batch();
                (
                    x.clone().reshape(&[n, x.row_len()])?,
                    Cache::Shape(x.shape().to_vec()),
                )
            }
        })
    }

    /// Returns the input gradient and, for parametric layers, `(dW, db)`.
    fn backward(&self, cache: &Cache, g: &Tensor) -> Result<(Tensor, Option<(Tensor, Tensor)>)> {
        match (self, cache) {
            (Layer::Dense(p), Cache::Input(x)) => {
                let (gx, gw, gb) = dense::backward(x, p, g)?;
                Ok((gx, Some((gw, gb))))
            }
            (Layer::Conv { params, kernel }, Cache::Input(x)) => {
                let (gx, gw, gb) = conv::backward(x, params, *kernel, g)?;
                Ok((gx, Some((gw, gb))))
            }
            (Layer::BatchNorm(p), Cache::Norm(c)) => {
                let (gx, gg, gb) = norm::backward(c, p, g)?;
                Ok((gx, Some((gg, gb))))
            }
            (Layer::Relu, Cache::Input(x)) => Ok((relu_backward(x, g)?, None)),
            (Layer::MaxPool2, Cache::Argmax { argmax, in_shape }) => {
                Ok((pool::maxpool_backward(argmax, in_shape, g)?, None))
            }
            (Layer::AvgPoolTo { h, w }, Cache::Shape(s)) => {
                Ok((pool::avgpool_backward(s, *h, *w, g)?, None))
            }
            (Layer::Flatten, Cache::Shape(s)) => Ok((g.clone().reshape(s)?, None)),
            _ => Err(Error::invalid(format!(
                "tape entry does not belong to a {} layer",
                self.name()
            ))),
        }
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

fn relu_backward(x: &Tensor, g: &Tensor) -> Result<Tensor> {
    if x.shape() != g.shape() {
        return Err(Error::Dimension {
            op: "relu backward",
            left: x.shape().to_vec(),
            right: g.shape().to_vec(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(g.data())
        .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

#[derive(Debug, Clone)]
enum Cache {
    Input(Tensor),
    Norm(norm::Cache),
    Argmax { argmax: Vec<usize>, in_shape: Vec<usize> },
    Shape(Vec<usize>),
}

/// Record of one forward pass through a [`Sequential`].
#[derive(Debug, Clone, Default)]
pub struct GradTape {
    entries: Vec<(usize, Cache)>,
}

impl GradTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Layer indices in the order they were recorded.
    pub fn layer_order(&self) -> Vec<usize> {
        self.entries.iter().map(|(i, _)| *i).collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Gradients produced by [`Sequential::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same order as [`Sequential::params`].
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sequential {
    layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn extend(&mut self, other: Sequential) {
        self.layers.extend(other.layers);
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Runs the layers in order. When a tape is supplied it is reset and then
    /// records this pass.
    pub fn forward(
        &mut self,
        x: &Tensor,
        mode: Mode,
        mut tape: Option<&mut GradTape>,
    ) -> Result<Tensor> {
        if let Some(t) = tape.as_deref_mut() {
            t.clear();
        }
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let (y, cache) = layer.forward(&cur, mode)?;
            if let Some(t) = tape.as_deref_mut() {
                t.entries.push((i, cache));
            }
            cur = y;
        }
        Ok(cur)
    }

    /// Eval-mode forward without side effects.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for layer in &self.layers {
            let mut l = layer.clone();
            cur = l.forward(&cur, Mode::Eval)?.0;
        }
        Ok(cur)
    }

    /// Reverse-mode pass over `tape`, seeded with `grad_out` (the gradient of
    /// the objective with respect to this network's output). The tape is
    /// consumed; calling again without a new forward is an error.
    pub fn backward(&self, tape: &mut GradTape, grad_out: &Tensor) -> Result<Gradients> {
        if tape.is_empty() && !self.layers.is_empty() {
            return Err(Error::EmptyTape);
        }
        let slots = self.param_slots();
        let mut grads: Vec<Tensor> = self
            .params()
            .into_iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        let mut g = grad_out.clone();
        while let Some((i, cache)) = tape.entries.pop() {
            let layer = self
                .layers
                .get(i)
                .ok_or_else(|| Error::invalid(format!("tape refers to missing layer {i}")))?;
            let (gx, pg) = layer.backward(&cache, &g)?;
            if let (Some((gw, gb)), Some(slot)) = (pg, slots[i]) {
                grads[slot].add_assign(&gw)?;
                grads[slot + 1].add_assign(&gb)?;
            }
            g = gx;
        }
        Ok(Gradients {
            params: grads,
            input: g,
        })
    }

    /// Trainable tensors: `(weights, bias)` for each parametric layer in order.
    pub fn params(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .filter_map(Layer::params)
            .flat_map(|p| [&p.weights, &p.bias])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .filter_map(Layer::params_mut)
            .flat_map(|p| [&mut p.weights, &mut p.bias])
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    /// Index into the flat parameter list for each layer, if it has params.
    fn param_slots(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|l| {
                l.params().map(|_| {
                    let s = next;
                    next += 2;
                    s
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(rng: &mut ChaCha8Rng) -> Sequential {
        Sequential::new(vec![
            Layer::Dense(LayerParams::dense_init(3, 4, rng)),
            Layer::Relu,
            Layer::Dense(LayerParams::dense_init(4, 2, rng)),
        ])
    }

    #[test]
    fn backward_visits_reverse_forward_order_and_clears() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = small_net(&mut rng);
        let x = Tensor::randn(&[2, 3], 1.0, &mut rng);
        let mut tape = GradTape::new();
        let y = net.forward(&x, Mode::Train, Some(&mut tape)).unwrap();
        assert_eq!(tape.layer_order(), vec![0, 1, 2]);
        net.backward(&mut tape, &Tensor::full(y.shape(), 1.0)).unwrap();
        assert!(tape.is_empty());
        let err = net.backward(&mut tape, &Tensor::full(y.shape(), 1.0));
        assert!(matches!(err, Err(Error::EmptyTape)));
    }

    #[test]
    fn single_dense_gradient_is_xt_delta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Sequential::new(vec![Layer::Dense(LayerParams::dense_init(3, 2, &mut rng))]);
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let delta = Tensor::randn(&[4, 2], 1.0, &mut rng);
        let mut tape = GradTape::new();
        net.forward(&x, Mode::Train, Some(&mut tape)).unwrap();
        let g = net.backward(&mut tape, &delta).unwrap();
        for i in 0..3 {
            for o in 0..2 {
                let expect: f64 = (0..4).map(|b| x.get(&[b, i]) * delta.get(&[b, o])).sum();
                assert!((g.params[0].get(&[i, o]) - expect).abs() < 1e-12);
            }
        }
        for o in 0..2 {
            let expect: f64 = (0..4).map(|b| delta.get(&[b, o])).sum();
            assert!((g.params[1].data()[o] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = small_net(&mut rng);
        let x = Tensor::randn(&[5, 3], 1.0, &mut rng);
        let a = net.infer(&x).unwrap();
        let b = net.infer(&x).unwrap();
        assert_eq!(
            a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn empty_sequential_is_identity() {
        let mut net = Sequential::default();
        let x = Tensor::full(&[2, 3], 1.5);
        let mut tape = GradTape::new();
        assert_eq!(net.forward(&x, Mode::Train, Some(&mut tape)).unwrap(), x);
        let g = net.backward(&mut tape, &x).unwrap();
        assert_eq!(g.input, x);
        assert!(g.params.is_empty());
    }
}
