use rand::Rng;

use super::spec::{validate_chain, StageSpec};
use super::stage::instantiate;
use crate::error::{Error, Result};
use crate::nn::{accuracy, softmax_xent, GradTape, Mode, Sequential};
use crate::sched::optim::{sgd_step, SgdConfig};
use crate::tensor::Tensor;

/// The whole stage chain as one network with only the final classifier,
/// trained by ordinary backpropagation.
#[derive(Debug, Clone)]
pub struct Network {
    net: Sequential,
    velocity: Vec<Tensor>,
    updates: u64,
}

impl Network {
    /// Instantiates every primary layer in order, then the final classifier.
    /// Consumes `rng` exactly like a single stage holding all layers.
    pub fn new<R: Rng + ?Sized>(specs: &[StageSpec], rng: &mut R) -> Result<Self> {
        validate_chain(specs)?;
        let last = &specs[specs.len() - 1];
        let layers: Vec<_> = specs.iter().flat_map(|s| s.layers.iter().copied()).collect();
        let mut net = instantiate(&layers, &specs[0].input_shape, rng)?;
        net.extend(instantiate(&last.head_layers()?, &last.output_shape()?, rng)?);
        let velocity = net.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            net,
            velocity,
            updates: 0,
        })
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn layers(&self) -> &Sequential {
        &self.net
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.net
            .params()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    /// One joint update; returns the loss at the pre-update parameters.
    pub fn step(&mut self, x: &Tensor, y: &[usize], sgd: &SgdConfig) -> Result<f64> {
        let mut tape = GradTape::new();
        let logits = self.net.forward(x, Mode::Train, Some(&mut tape))?;
        let (loss, dlogits) = softmax_xent(&logits, y)?;
        let g = self.net.backward(&mut tape, &dlogits)?;
        let nonfinite = |what| Error::NonFinite {
            what,
            stage: 1,
            step: self.updates,
        };
        if !loss.is_finite() {
            return Err(nonfinite("loss"));
        }
        if !g.params.iter().all(Tensor::is_finite) {
            return Err(nonfinite("gradient"));
        }
        sgd_step(&mut self.net.params_mut(), &g.params, &mut self.velocity, sgd)?;
        self.updates += 1;
        Ok(loss)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        self.net.infer(x)
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        Ok(accuracy(&self.logits(x)?, y))
    }
}
