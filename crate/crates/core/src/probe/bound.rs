//! Empirical check of the weighted gradient-norm bound for one stage:
//!
//! ```text
//! sum_t eta_t |grad L(theta_t)|^2
//!     <= L(theta_0) + G sum_t eta_t (sqrt(2 c_t) + L eta_t / 2)
//! ```

use crate::error::{Error, Result};

use super::estimate::ConstantEstimates;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t: u64,
    pub lr: f64,
    pub grad_norm_sq: f64,
    /// Input-distribution drift, in `[0, 2]`.
    pub drift: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TheoryTrace {
    /// 1-based stage the trace describes.
    pub stage: usize,
    /// Runs averaged into each point.
    pub replicates: usize,
    pub points: Vec<TracePoint>,
}

impl TheoryTrace {
    /// `min_{s <= t}` of the gradient-norm estimate, for every `t`.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.points
            .iter()
            .scan(f64::INFINITY, |m, p| {
                *m = m.min(p.grad_norm_sq);
                Some(*m)
            })
            .collect()
    }

    /// Pointwise mean of traces with identical step indices and rates.
    pub fn average(traces: &[TheoryTrace]) -> Result<TheoryTrace> {
        let first = traces
            .first()
            .ok_or_else(|| Error::invalid("no traces to average"))?;
        let n = traces.len() as f64;
        let mut points = first.points.clone();
        for tr in &traces[1..] {
            if tr.points.len() != points.len() || tr.stage != first.stage {
                return Err(Error::invalid("traces cover different checkpoints"));
            }
            for (p, q) in points.iter_mut().zip(&tr.points) {
                if p.t != q.t || p.lr != q.lr {
                    return Err(Error::invalid(format!("trace mismatch at step {}", p.t)));
                }
                p.grad_norm_sq += q.grad_norm_sq;
                p.drift += q.drift;
                p.loss += q.loss;
            }
        }
        for p in &mut points {
            p.grad_norm_sq /= n;
            p.drift /= n;
            p.loss /= n;
        }
        Ok(TheoryTrace {
            stage: first.stage,
            replicates: traces.iter().map(|t| t.replicates.max(1)).sum(),
            points,
        })
    }
}

/// Replicate count at or above which a report is labelled strict.
pub const STRICT_REPLICATES: usize = 3;
/// Relative slack inside which a violation is attributed to the constant
/// estimates being lower bounds.
pub const ESTIMATOR_SLACK: f64 = 0.10;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub satisfied: bool,
    /// `lhs <= (1 + ESTIMATOR_SLACK) * rhs`.
    pub within_slack: bool,
    /// `min_t |grad L|^2`.
    pub best_grad_norm_sq: f64,
    /// `sum sqrt(c_t) eta_t / sum eta_t`.
    pub rate_proxy: f64,
    /// `"strict"` (averaged over enough replicates) or `"single-run"`.
    pub mode: &'static str,
}

/// Evaluates both sides of the bound on a complete trace `t = 0..=T`.
pub fn bound_check(trace: &TheoryTrace, consts: &ConstantEstimates, initial_loss: f64) -> Result<BoundReport> {
    if trace.points.is_empty() {
        return Err(Error::invalid("bound check on an empty trace"));
    }
    for (i, p) in trace.points.iter().enumerate() {
        if p.t != i as u64 {
            return Err(Error::invalid(format!(
                "trace is missing checkpoint {i} (found step {})",
                p.t
            )));
        }
    }
    let (g, l) = (consts.g, consts.l_lip);
    let mut lhs = 0.0;
    let mut penalty = 0.0;
    let mut drift_rate = 0.0;
    let mut lr_sum = 0.0;
    for p in &trace.points {
        lhs += p.lr * p.grad_norm_sq;
        penalty += p.lr * ((2.0 * p.drift).sqrt() + l * p.lr / 2.0);
        drift_rate += p.drift.sqrt() * p.lr;
        lr_sum += p.lr;
    }
    let rhs = initial_loss + g * penalty;
    Ok(BoundReport {
        lhs,
        rhs,
        satisfied: lhs <= rhs,
        within_slack: lhs <= (1.0 + ESTIMATOR_SLACK) * rhs,
        best_grad_norm_sq: trace.best_so_far().last().copied().unwrap_or(f64::NAN),
        rate_proxy: if lr_sum > 0.0 { drift_rate / lr_sum } else { 0.0 },
        mode: if trace.replicates >= STRICT_REPLICATES {
            "strict"
        } else {
            "single-run"
        },
    })
}
