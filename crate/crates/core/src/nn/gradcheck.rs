//! Central finite-difference checker for [`Sequential`] fragments.
//!
//! The scalar objective is either a fixed random projection of the output,
//! `f = sum(r * net(x))`, or the mean cross-entropy against labels. Every
//! input entry and every parameter entry is perturbed by `±eps` and the
//! quotient `(f(+eps) - f(-eps)) / 2 eps` is compared against the analytic
//! gradient from the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{softmax_xent, GradTape, Mode, Sequential};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub enum Objective {
    Projection(Tensor),
    Xent(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Where the worst entry lives, e.g. `input[3]` or `param2[17]`.
    pub worst: String,
    /// Analytic and numeric values at the worst entry.
    pub worst_values: (f64, f64),
    /// Smallest non-zero analytic magnitude; gradients far below the
    /// rounding noise of the differences (about `1e-16 / eps` times the
    /// objective) cannot be resolved by this oracle.
    pub smallest_analytic: f64,
    pub checked: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ABS_FLOOR)
}

fn objective(net: &Sequential, x: &Tensor, obj: &Objective, mode: Mode) -> Result<f64> {
    let mut n = net.clone();
    let y = n.forward(x, mode, None)?;
    match obj {
        Objective::Projection(r) => y.dot(r),
        Objective::Xent(labels) => softmax_xent(&y, labels).map(|(l, _)| l),
    }
}

/// Checks `net` on `input` with a seeded random projection objective in
/// training mode. Returns the worst relative error over all entries.
pub fn grad_check(net: &Sequential, input: &Tensor, eps: f64) -> Result<GradCheckReport> {
    let out = net.clone().forward(input, Mode::Train, None)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let r = Tensor::randn(out.shape(), 1.0, &mut rng);
    grad_check_with(net, input, eps, &Objective::Projection(r), Mode::Train)
}

pub fn grad_check_with(
    net: &Sequential,
    input: &Tensor,
    eps: f64,
    obj: &Objective,
    mode: Mode,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("grad_check epsilon must be > 0, got {eps}")));
    }
    let mut work = net.clone();
    let mut tape = GradTape::new();
    let y = work.forward(input, mode, Some(&mut tape))?;
    let seed = match obj {
        Objective::Projection(r) => {
            if r.shape() != y.shape() {
                return Err(Error::Dimension {
                    op: "grad_check projection",
                    left: y.shape().to_vec(),
                    right: r.shape().to_vec(),
                });
            }
            r.clone()
        }
        Objective::Xent(labels) => softmax_xent(&y, labels)?.1,
    };
    let grads = work.backward(&mut tape, &seed)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: String::new(),
        worst_values: (0.0, 0.0),
        smallest_analytic: f64::INFINITY,
        checked: 0,
    };
    let mut note = |what: String, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.checked += 1;
        if a != 0.0 {
            report.smallest_analytic = report.smallest_analytic.min(a.abs());
        }
        if e > report.max_rel_err || report.worst.is_empty() {
            report.max_rel_err = e;
            report.worst = what;
            report.worst_values = (a, n);
        }
    };

    for i in 0..input.len() {
        let mut xp = input.clone();
        xp.data_mut()[i] += eps;
        let mut xm = input.clone();
        xm.data_mut()[i] -= eps;
        let num = (objective(net, &xp, obj, mode)? - objective(net, &xm, obj, mode)?) / (2.0 * eps);
        note(format!("input[{i}]"), grads.input.data()[i], num);
    }

    let count = net.params().len();
    for p in 0..count {
        let len = net.params()[p].len();
        for i in 0..len {
            let mut plus = net.clone();
            plus.params_mut()[p].data_mut()[i] += eps;
            let mut minus = net.clone();
            minus.params_mut()[p].data_mut()[i] -= eps;
            let num = (objective(&plus, input, obj, mode)? - objective(&minus, input, obj, mode)?)
                / (2.0 * eps);
            note(format!("param{p}[{i}]"), grads.params[p].data()[i], num);
        }
    }
    Ok(report)
}
