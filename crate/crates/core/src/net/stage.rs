use rand::Rng;

use super::spec::StageSpec;
use crate::error::{Error, Result};
use crate::nn::{accuracy, softmax_xent, GradTape, Mode, Sequential};
use crate::sched::optim::{sgd_step, SgdConfig};
use crate::tensor::Tensor;

/// Builds a [`Sequential`] from layer specs, threading shapes through.
pub fn instantiate<R: Rng + ?Sized>(
    layers: &[crate::nn::LayerSpec],
    input: &[usize],
    rng: &mut R,
) -> Result<Sequential> {
    let mut shape = input.to_vec();
    let mut net = Sequential::default();
    for l in layers {
        net.push(l.instantiate(&shape, rng)?);
        shape = l.output_shape(&shape)?;
    }
    Ok(net)
}

/// Result of a local forward/backward without an update.
#[derive(Debug, Clone)]
pub struct LocalGrad {
    pub loss: f64,
    /// Body parameters first, then head parameters.
    pub grads: Vec<Tensor>,
    pub output: Tensor,
}

/// A primary sub-network `body`, its local head, and the optimizer state
/// for both.
#[derive(Debug, Clone)]
pub struct GreedyStage {
    index: usize,
    spec: StageSpec,
    body: Sequential,
    head: Sequential,
    velocity: Vec<Tensor>,
    updates: u64,
}

impl GreedyStage {
    /// Instantiates body then head, consuming `rng` in that order.
    pub fn new<R: Rng + ?Sized>(index: usize, spec: &StageSpec, rng: &mut R) -> Result<Self> {
        let body = instantiate(&spec.layers, &spec.input_shape, rng)?;
        let head = instantiate(&spec.head_layers()?, &spec.output_shape()?, rng)?;
        let velocity = body
            .params()
            .into_iter()
            .chain(head.params())
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        Ok(Self {
            index,
            spec: spec.clone(),
            body,
            head,
            velocity,
            updates: 0,
        })
    }

    /// Builds one stage per spec from a shared generator.
    pub fn build_all<R: Rng + ?Sized>(specs: &[StageSpec], rng: &mut R) -> Result<Vec<Self>> {
        super::spec::validate_chain(specs)?;
        specs
            .iter()
            .enumerate()
            .map(|(j, s)| Self::new(j, s, rng))
            .collect()
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn spec(&self) -> &StageSpec {
        &self.spec
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn body(&self) -> &Sequential {
        &self.body
    }

    pub fn head(&self) -> &Sequential {
        &self.head
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn params(&self) -> Vec<&Tensor> {
        self.body.params().into_iter().chain(self.head.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let Self { body, head, .. } = self;
        body.params_mut().into_iter().chain(head.params_mut()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.body.num_params() + self.head.num_params()
    }

    /// All parameters concatenated in [`Self::params`] order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "stage {} has {} parameters, got {}",
                self.index,
                self.num_params(),
                flat.len()
            )));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    /// Computes the local loss and its gradient for `(x, y)` through head
    /// and body in one backward pass. Training-mode normalization updates
    /// running statistics.
    pub fn local_grad(&mut self, x: &Tensor, y: &[usize], mode: Mode) -> Result<LocalGrad> {
        let mut body_tape = GradTape::new();
        let mut head_tape = GradTape::new();
        let output = self.body.forward(x, mode, Some(&mut body_tape))?;
        let logits = self.head.forward(&output, mode, Some(&mut head_tape))?;
        let (loss, dlogits) = softmax_xent(&logits, y)?;
        let hg = self.head.backward(&mut head_tape, &dlogits)?;
        let bg = self.body.backward(&mut body_tape, &hg.input)?;
        Ok(LocalGrad {
            loss,
            grads: bg.params.into_iter().chain(hg.params).collect(),
            output,
        })
    }

    /// One local update on `(x, y)`. Returns the body output computed with
    /// the pre-update parameters, and the local loss.
    pub fn step(&mut self, x: &Tensor, y: &[usize], sgd: &SgdConfig) -> Result<(Tensor, f64)> {
        let g = self.local_grad(x, y, Mode::Train)?;
        let nonfinite = |what| Error::NonFinite {
            what,
            stage: self.index + 1,
            step: self.updates,
        };
        if !g.loss.is_finite() {
            return Err(nonfinite("loss"));
        }
        if !g.grads.iter().all(Tensor::is_finite) {
            return Err(nonfinite("gradient"));
        }
        let Self {
            body,
            head,
            velocity,
            ..
        } = self;
        let mut params: Vec<&mut Tensor> = body.params_mut().into_iter().chain(head.params_mut()).collect();
        sgd_step(&mut params, &g.grads, velocity, sgd)?;
        self.updates += 1;
        Ok((g.output, g.loss))
    }

    /// Eval-mode body output.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.body.infer(x)
    }

    /// Eval-mode body output and head logits.
    pub fn forward_with_logits(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let out = self.body.infer(x)?;
        let logits = self.head.infer(&out)?;
        Ok((out, logits))
    }

    /// Eval-mode head accuracy on `(x, y)` where `x` is this stage's input.
    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        let (_, logits) = self.forward_with_logits(x)?;
        Ok(accuracy(&logits, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::{build_cifar6, build_mlp, AuxKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sgd(lr: f64) -> SgdConfig {
        SgdConfig {
            lr,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }

    #[test]
    fn zero_lr_leaves_params_and_returns_plain_forward() {
        let specs = build_cifar6(4, 3, [1, 8, 8], AuxKind::Mlp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = GreedyStage::new(0, &specs[0], &mut rng).unwrap();
        let before = st.flat_params();
        let x = Tensor::randn(&[4, 1, 8, 8], 1.0, &mut rng);
        let mut reference = st.body.clone();
        let plain = reference.forward(&x, Mode::Train, None).unwrap();
        let (next, loss) = st.step(&x, &[0, 1, 2, 0], &sgd(0.0)).unwrap();
        assert!(loss.is_finite());
        assert_eq!(st.flat_params(), before);
        assert_eq!(next, plain);
        assert_eq!(st.updates(), 1);
    }

    #[test]
    fn output_uses_pre_update_params() {
        let specs = build_mlp(5, 6, 2, 2, AuxKind::Mlp).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut st = GreedyStage::new(0, &specs[0], &mut rng).unwrap();
        let saved = st.body.clone();
        let x = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let (next, _) = st.step(&x, &[0, 1, 1], &sgd(0.5)).unwrap();
        assert_eq!(next, saved.infer(&x).unwrap());
        assert_ne!(st.body.infer(&x).unwrap(), next);
    }

    #[test]
    fn flat_params_round_trip() {
        let specs = build_mlp(3, 4, 2, 2, AuxKind::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut st = GreedyStage::new(0, &specs[0], &mut rng).unwrap();
        let mut p = st.flat_params();
        p.iter_mut().for_each(|v| *v += 1.0);
        st.set_flat_params(&p).unwrap();
        assert_eq!(st.flat_params(), p);
        assert!(st.set_flat_params(&p[1..]).is_err());
    }

    #[test]
    fn nan_input_aborts_with_stage_and_step() {
        let specs = build_mlp(2, 3, 2, 2, AuxKind::Linear).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut st = GreedyStage::new(1, &specs[0], &mut rng).unwrap();
        let x = Tensor::new(vec![2, 2], vec![f64::NAN, 0.0, 1.0, 1.0]).unwrap();
        let err = st.step(&x, &[0, 1], &sgd(0.1)).unwrap_err().to_string();
        assert!(err.contains("stage 2") && err.contains("step 0"), "{err}");
    }
}
