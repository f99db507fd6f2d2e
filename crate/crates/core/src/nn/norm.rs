use super::{LayerParams, Mode};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
/// Small enough that standardized outputs have unit variance to ~1e-8.
pub const BN_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub(super) struct Cache {
    xhat: Tensor,
    inv_std: Vec<f64>,
    mode: Mode,
}

/// (batch, channels, elements per channel per sample)
fn layout(x: &Tensor, p: &LayerParams) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 || p.weights.len() != s[1] || p.bias.len() != s[1] {
        return Err(Error::Dimension {
            op: "batchnorm",
            left: s.to_vec(),
            right: p.weights.shape().to_vec(),
        });
    }
    Ok((s[0], s[1], s[2..].iter().product()))
}

/// Per-channel standardization followed by scale/shift. Channels live on
/// axis 1; all other axes are reduced over.
pub fn batchnorm(x: &Tensor, p: &mut LayerParams, training: bool) -> Result<Tensor> {
    let mode = if training { Mode::Train } else { Mode::Eval };
    forward(x, p, mode).map(|(y, _)| y)
}

pub(super) fn forward(x: &Tensor, p: &mut LayerParams, mode: Mode) -> Result<(Tensor, Cache)> {
    let (n, c, sp) = layout(x, p)?;
    let stats = p
        .stats
        .as_mut()
        .ok_or_else(|| Error::invalid("batchnorm layer without running statistics"))?;
    let xd = x.data();
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::DegenerateBatch(n));
            }
            let count = (n * sp) as f64;
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for b in 0..n {
                for (ch, m) in mean.iter_mut().enumerate() {
                    *m += xd[(b * c + ch) * sp..(b * c + ch + 1) * sp].iter().sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count);
            for b in 0..n {
                for ch in 0..c {
                    let m = mean[ch];
                    var[ch] += xd[(b * c + ch) * sp..(b * c + ch + 1) * sp]
                        .iter()
                        .map(|v| (v - m) * (v - m))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count);
            let mom = stats.momentum;
            let unbias = count / (count - 1.0);
            for ch in 0..c {
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = (1.0 - mom) * *rm + mom * mean[ch];
                let rv = &mut stats.var.data_mut()[ch];
                *rv = (1.0 - mom) * *rv + mom * var[ch] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut y = vec![0.0; xd.len()];
    let (gamma, beta) = (p.weights.data(), p.bias.data());
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * sp..(b * c + ch + 1) * sp;
            for i in r {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), y)?,
        Cache {
            xhat: Tensor::new(x.shape().to_vec(), xhat)?,
            inv_std,
            mode,
        },
    ))
}

pub(super) fn backward(cache: &Cache, p: &LayerParams, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, c, sp) = layout(&cache.xhat, p)?;
    if g.shape() != cache.xhat.shape() {
        return Err(Error::Dimension {
            op: "batchnorm backward",
            left: cache.xhat.shape().to_vec(),
            right: g.shape().to_vec(),
        });
    }
    let gd = g.data();
    let xh = cache.xhat.data();
    let gamma = p.weights.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * sp..(b * c + ch + 1) * sp {
                dgamma[ch] += gd[i] * xh[i];
                dbeta[ch] += gd[i];
            }
        }
    }
    let mut gx = vec![0.0; gd.len()];
    let count = (n * sp) as f64;
    for b in 0..n {
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch];
            for i in (b * c + ch) * sp..(b * c + ch + 1) * sp {
                gx[i] = match cache.mode {
                    // d xhat = g * gamma; batch statistics couple every element
                    // of the channel.
                    Mode::Train => {
                        k * (gd[i] - dbeta[ch] / count - xh[i] * dgamma[ch] / count)
                    }
                    Mode::Eval => k * gd[i],
                };
            }
        }
    }
    Ok((
        Tensor::new(g.shape().to_vec(), gx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}
