use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(logits: &Tensor, labels: &[usize]) -> Result<(usize, usize)> {
    let (n, c) = match *logits.shape() {
        [n, c] => (n, c),
        _ => {
            return Err(Error::Shape {
                op: "softmax_xent",
                msg: format!("expected [batch, classes] logits, got {:?}", logits.shape()),
            })
        }
    };
    if labels.len() != n || n == 0 {
        return Err(Error::Dimension {
            op: "softmax_xent labels",
            left: logits.shape().to_vec(),
            right: vec![labels.len()],
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::InvalidLabel {
            label: bad,
            classes: c,
        });
    }
    Ok((n, c))
}

/// Mean cross-entropy of `softmax(logits)` against class indices, and its
/// gradient with respect to the logits, `(softmax - onehot) / batch`.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = check(logits, labels)?;
    let ld = logits.data();
    let mut grad = vec![0.0; n * c];
    let mut total = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        let row = &ld[b * c..(b + 1) * c];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = z.ln() + m;
        total += log_z - row[label];
        for (k, g) in grad[b * c..(b + 1) * c].iter_mut().enumerate() {
            let p = (row[k] - log_z).exp();
            *g = (p - if k == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, Tensor::new(vec![n, c], grad)?))
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.row_len().max(1);
    logits
        .data()
        .chunks(c)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = argmax_rows(logits)
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    hits as f64 / labels.len() as f64
}
