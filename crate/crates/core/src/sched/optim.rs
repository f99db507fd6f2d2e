//! Momentum SGD with weight decay and step-size schedules.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Hyperparameters for a single update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant,
    /// `lr * factor^floor(epoch / period)`.
    StepDecay { factor: f64, period: u64 },
    /// `eta0 / (1 + t)^alpha`, `0.5 < alpha <= 1`.
    RobbinsMonro { eta0: f64, alpha: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub schedule: Schedule,
}

impl OptimizerConfig {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, schedule: Schedule) -> Result<Self> {
        let cfg = Self {
            lr,
            momentum,
            weight_decay,
            schedule,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Plain SGD with a Robbins-Monro schedule.
    pub fn robbins_monro(eta0: f64, alpha: f64) -> Result<Self> {
        Self::new(eta0, 0.0, 0.0, Schedule::RobbinsMonro { eta0, alpha })
    }

    pub fn validate(&self) -> Result<()> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.lr) {
            return Err(Error::config("lr", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "must lie in [0, 1)"));
        }
        if !finite_nonneg(self.weight_decay) {
            return Err(Error::config("weight_decay", "must be finite and >= 0"));
        }
        match self.schedule {
            Schedule::Constant => {}
            Schedule::StepDecay { factor, period } => {
                if !(factor > 0.0 && factor <= 1.0) {
                    return Err(Error::config("decay_factor", "must lie in (0, 1]"));
                }
                if period == 0 {
                    return Err(Error::config("decay_period", "must be positive"));
                }
            }
            Schedule::RobbinsMonro { eta0, alpha } => {
                if !finite_nonneg(eta0) {
                    return Err(Error::config("eta0", "must be finite and >= 0"));
                }
                // sum eta_t diverges and sum eta_t^2 converges only here
                if !(alpha > 0.5 && alpha <= 1.0) {
                    return Err(Error::config("alpha", "must satisfy 0.5 < alpha <= 1"));
                }
            }
        }
        Ok(())
    }

    /// Step size for update `t` taken during `epoch`.
    pub fn lr_at(&self, t: u64, epoch: u64) -> f64 {
        match self.schedule {
            Schedule::Constant => self.lr,
            Schedule::StepDecay { factor, period } => {
                self.lr * factor.powi((epoch / period).min(i32::MAX as u64) as i32)
            }
            Schedule::RobbinsMonro { eta0, alpha } => eta0 / (1.0 + t as f64).powf(alpha),
        }
    }

    pub fn sgd_at(&self, t: u64, epoch: u64) -> SgdConfig {
        SgdConfig {
            lr: self.lr_at(t, epoch),
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

/// `v <- momentum * v + (g + wd * p)`, then `p <- p - lr * v`.
pub fn sgd_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    velocity: &mut [Tensor],
    cfg: &SgdConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::invalid(format!(
            "sgd_step: {} params, {} grads, {} velocity buffers",
            params.len(),
            grads.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        if p.shape() != g.shape() || p.shape() != v.shape() {
            return Err(Error::Dimension {
                op: "sgd_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::invalid("sgd_step: non-finite gradient"));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let pd = p.data_mut();
        for ((pv, &gv), vv) in pd.iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = cfg.momentum * *vv + (gv + cfg.weight_decay * *pv);
            *pv -= cfg.lr * *vv;
        }
    }
    Ok(())
}
