use super::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
}

fn geometry(x: &Tensor, p: &LayerParams, k: usize) -> Result<Geometry> {
    let xs = x.shape();
    let ws = p.weights.shape();
    if k % 2 == 0 {
        return Err(Error::Shape {
            op: "conv2d",
            msg: format!("kernel size {k} must be odd for shape-preserving padding"),
        });
    }
    if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != k || ws[3] != k {
        return Err(Error::Dimension {
            op: "conv2d",
            left: xs.to_vec(),
            right: ws.to_vec(),
        });
    }
    if p.bias.len() != ws[0] {
        return Err(Error::Dimension {
            op: "conv2d bias",
            left: ws.to_vec(),
            right: p.bias.shape().to_vec(),
        });
    }
    Ok(Geometry {
        n: xs[0],
        cin: xs[1],
        cout: ws[0],
        h: xs[2],
        w: xs[3],
    })
}

/// Valid output range along one axis for kernel offset `d` (input = out + d).
#[inline]
fn span(len: usize, d: isize) -> (usize, usize) {
    let lo = ((-d).max(0) as usize).min(len);
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi.max(lo))
}

/// Patch matrix `[cin * k * k, n * h * w]`: row `(ic, ky, kx)` holds, for
/// every output position of every sample, the input pixel that kernel tap
/// multiplies (zero in the padding).
fn im2col(x: &[f64], g: &Geometry, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let plane = g.h * g.w;
    let cols = g.n * plane;
    let mut col = vec![0.0; g.cin * k * k * cols];
    for ic in 0..g.cin {
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = span(g.h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (xlo, xhi) = span(g.w, dx);
                if xlo == xhi {
                    continue;
                }
                let row = ((ic * k + ky) * k + kx) * cols;
                for b in 0..g.n {
                    let inp = &x[(b * g.cin + ic) * plane..(b * g.cin + ic + 1) * plane];
                    for oy in ylo..yhi {
                        let iy = (oy as isize + dy) as usize;
                        let dst = row + b * plane + oy * g.w;
                        let src = (iy * g.w) as isize + dx;
                        col[dst + xlo..dst + xhi]
                            .copy_from_slice(&inp[(src + xlo as isize) as usize..(src + xhi as isize) as usize]);
                    }
                }
            }
        }
    }
    col
}

/// Inverse scatter of [`im2col`]: accumulates patch gradients into the
/// input gradient.
fn col2im(col: &[f64], g: &Geometry, k: usize) -> Vec<f64> {
    let pad = (k / 2) as isize;
    let plane = g.h * g.w;
    let cols = g.n * plane;
    let mut gx = vec![0.0; g.n * g.cin * plane];
    for ic in 0..g.cin {
        for ky in 0..k {
            let dy = ky as isize - pad;
            let (ylo, yhi) = span(g.h, dy);
            for kx in 0..k {
                let dx = kx as isize - pad;
                let (xlo, xhi) = span(g.w, dx);
                if xlo == xhi {
                    continue;
                }
                let row = ((ic * k + ky) * k + kx) * cols;
                for b in 0..g.n {
                    let base = (b * g.cin + ic) * plane;
                    for oy in ylo..yhi {
                        let iy = (oy as isize + dy) as usize;
                        let src = row + b * plane + oy * g.w;
                        let dst = (base + iy * g.w) as isize + dx;
                        let out = &mut gx[(dst + xlo as isize) as usize..(dst + xhi as isize) as usize];
                        for (o, &v) in out.iter_mut().zip(&col[src + xlo..src + xhi]) {
                            *o += v;
                        }
                    }
                }
            }
        }
    }
    gx
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += a * xv;
    }
}

/// Dot product with four independent partial sums.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Stride-1 cross-correlation with `(k - 1) / 2` zero padding on each side.
pub fn conv2d(x: &Tensor, p: &LayerParams, k: usize) -> Result<Tensor> {
    let g = geometry(x, p, k)?;
    let plane = g.h * g.w;
    let cols = g.n * plane;
    let taps = g.cin * k * k;
    let col = im2col(x.data(), &g, k);
    let wd = p.weights.data();
    // [cout, n * h * w], then permuted to [n, cout, h, w]
    let mut acc = vec![0.0; g.cout * cols];
    for oc in 0..g.cout {
        let dst = &mut acc[oc * cols..(oc + 1) * cols];
        for (j, &wv) in wd[oc * taps..(oc + 1) * taps].iter().enumerate() {
            if wv != 0.0 {
                axpy(dst, wv, &col[j * cols..(j + 1) * cols]);
            }
        }
    }
    let mut out = vec![0.0; g.n * g.cout * plane];
    for b in 0..g.n {
        for oc in 0..g.cout {
            let bias = p.bias.data()[oc];
            let src = &acc[oc * cols + b * plane..oc * cols + (b + 1) * plane];
            for (o, &v) in out[(b * g.cout + oc) * plane..(b * g.cout + oc + 1) * plane].iter_mut().zip(src) {
                *o = v + bias;
            }
        }
    }
    Tensor::new(vec![g.n, g.cout, g.h, g.w], out)
}

/// 3x3 convolution with padding 1.
pub fn conv2d_3x3(x: &Tensor, p: &LayerParams) -> Result<Tensor> {
    conv2d(x, p, 3)
}

pub(super) fn backward(
    x: &Tensor,
    p: &LayerParams,
    k: usize,
    grad: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = geometry(x, p, k)?;
    if grad.shape() != [g.n, g.cout, g.h, g.w] {
        return Err(Error::Dimension {
            op: "conv2d backward",
            left: vec![g.n, g.cout, g.h, g.w],
            right: grad.shape().to_vec(),
        });
    }
    let plane = g.h * g.w;
    let cols = g.n * plane;
    let taps = g.cin * k * k;
    let wd = p.weights.data();
    let gd = grad.data();
    // output gradient as [cout, n * h * w]
    let mut go = vec![0.0; g.cout * cols];
    let mut gb = vec![0.0; g.cout];
    for b in 0..g.n {
        for oc in 0..g.cout {
            let src = &gd[(b * g.cout + oc) * plane..(b * g.cout + oc + 1) * plane];
            gb[oc] += src.iter().sum::<f64>();
            go[oc * cols + b * plane..oc * cols + (b + 1) * plane].copy_from_slice(src);
        }
    }
    let col = im2col(x.data(), &g, k);
    let mut gw = vec![0.0; wd.len()];
    let mut gcol = vec![0.0; taps * cols];
    for oc in 0..g.cout {
        let gro = &go[oc * cols..(oc + 1) * cols];
        for j in 0..taps {
            let crow = &col[j * cols..(j + 1) * cols];
            gw[oc * taps + j] = dot(gro, crow);
            axpy(&mut gcol[j * cols..(j + 1) * cols], wd[oc * taps + j], gro);
        }
    }
    let gx = col2im(&gcol, &g, k);
    Ok((
        Tensor::new(x.shape().to_vec(), gx)?,
        Tensor::new(p.weights.shape().to_vec(), gw)?,
        Tensor::new(vec![g.cout], gb)?,
    ))
}
