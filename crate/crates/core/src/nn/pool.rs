use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn dims4(op: &'static str, x: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::Shape {
            op,
            msg: format!("expected [batch, channels, height, width], got {:?}", x.shape()),
        }),
    }
}

/// 2x2 max pooling, stride 2.
pub fn maxpool2x2(x: &Tensor) -> Result<Tensor> {
    maxpool_forward(x).map(|(y, _)| y)
}

/// Returns the pooled tensor and, per output cell, the flat input index it
/// came from. Ties resolve to the first index in row-major window order.
pub(super) fn maxpool_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = dims4("maxpool2x2", x)?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension {
            op: "maxpool2x2 needs even spatial dims",
            left: x.shape().to_vec(),
            right: vec![2, 2],
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if xd[idx] > xd[best] {
                        best = idx;
                    }
                }
                out.push(xd[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

pub(super) fn maxpool_backward(argmax: &[usize], in_shape: &[usize], g: &Tensor) -> Result<Tensor> {
    if g.len() != argmax.len() {
        return Err(Error::Dimension {
            op: "maxpool2x2 backward",
            left: in_shape.to_vec(),
            right: g.shape().to_vec(),
        });
    }
    let mut gx = Tensor::zeros(in_shape);
    let d = gx.data_mut();
    for (&i, &gv) in argmax.iter().zip(g.data()) {
        d[i] += gv;
    }
    Ok(gx)
}

/// Contiguous, non-overlapping windows covering `len` with `parts` pieces
/// whose sizes differ by at most one.
pub(crate) fn windows(len: usize, parts: usize) -> Vec<(usize, usize)> {
    (0..parts)
        .map(|i| (i * len / parts, (i + 1) * len / parts))
        .collect()
}

/// Mean-pools each channel to `th x tw`. Non-divisible sizes use adaptive
/// windows unless `strict` is set, in which case they are an error.
pub fn avgpool_to(x: &Tensor, th: usize, tw: usize, strict: bool) -> Result<Tensor> {
    let (n, c, h, w) = dims4("avgpool_to", x)?;
    check_target(x.shape(), h, w, th, tw, strict)?;
    let rows = windows(h, th);
    let cols = windows(w, tw);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * th * tw);
    for nc in 0..n * c {
        let base = nc * h * w;
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let mut acc = 0.0;
                for yy in y0..y1 {
                    acc += xd[base + yy * w + x0..base + yy * w + x1].iter().sum::<f64>();
                }
                out.push(acc / ((y1 - y0) * (x1 - x0)) as f64);
            }
        }
    }
    Tensor::new(vec![n, c, th, tw], out)
}

fn check_target(
    shape: &[usize],
    h: usize,
    w: usize,
    th: usize,
    tw: usize,
    strict: bool,
) -> Result<()> {
    let bad = th == 0
        || tw == 0
        || th > h
        || tw > w
        || (strict && (h % th != 0 || w % tw != 0));
    if bad {
        return Err(Error::Dimension {
            op: "avgpool_to",
            left: shape.to_vec(),
            right: vec![th, tw],
        });
    }
    Ok(())
}

pub(super) fn avgpool_backward(in_shape: &[usize], th: usize, tw: usize, g: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = match *in_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(Error::invalid("avgpool backward: bad cached shape")),
    };
    if g.shape() != [n, c, th, tw] {
        return Err(Error::Dimension {
            op: "avgpool_to backward",
            left: vec![n, c, th, tw],
            right: g.shape().to_vec(),
        });
    }
    let rows = windows(h, th);
    let cols = windows(w, tw);
    let mut gx = Tensor::zeros(in_shape);
    let d = gx.data_mut();
    let gd = g.data();
    let mut gi = 0;
    for nc in 0..n * c {
        let base = nc * h * w;
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                let share = gd[gi] / ((y1 - y0) * (x1 - x0)) as f64;
                gi += 1;
                for yy in y0..y1 {
                    for v in &mut d[base + yy * w + x0..base + yy * w + x1] {
                        *v += share;
                    }
                }
            }
        }
    }
    Ok(gx)
}
