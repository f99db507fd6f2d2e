use super::LayerParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(x: &Tensor, p: &LayerParams) -> Result<(usize, usize, usize)> {
    let ws = p.weights.shape();
    if x.shape().len() != 2 || ws.len() != 2 || x.shape()[1] != ws[0] || p.bias.len() != ws[1] {
        return Err(Error::Dimension {
            op: "dense",
            left: x.shape().to_vec(),
            right: ws.to_vec(),
        });
    }
    Ok((x.shape()[0], ws[0], ws[1]))
}

/// `out[b, o] = sum_i x[b, i] * W[i, o] + bias[o]`.
pub fn dense(x: &Tensor, p: &LayerParams) -> Result<Tensor> {
    let (n, din, dout) = check(x, p)?;
    let w = p.weights.data();
    let mut out = vec![0.0; n * dout];
    for b in 0..n {
        let row = &mut out[b * dout..(b + 1) * dout];
        row.copy_from_slice(p.bias.data());
        for (i, &xv) in x.data()[b * din..(b + 1) * din].iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (o, &wv) in row.iter_mut().zip(&w[i * dout..(i + 1) * dout]) {
                *o += xv * wv;
            }
        }
    }
    Tensor::new(vec![n, dout], out)
}

pub(super) fn backward(
    x: &Tensor,
    p: &LayerParams,
    g: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, din, dout) = check(x, p)?;
    if g.shape() != [n, dout] {
        return Err(Error::Dimension {
            op: "dense backward",
            left: vec![n, dout],
            right: g.shape().to_vec(),
        });
    }
    let w = p.weights.data();
    let gd = g.data();
    let xd = x.data();
    let mut gx = vec![0.0; n * din];
    let mut gw = vec![0.0; din * dout];
    let mut gb = vec![0.0; dout];
    for b in 0..n {
        let grow = &gd[b * dout..(b + 1) * dout];
        for (acc, &gv) in gb.iter_mut().zip(grow) {
            *acc += gv;
        }
        for i in 0..din {
            let wrow = &w[i * dout..(i + 1) * dout];
            gx[b * din + i] = wrow.iter().zip(grow).map(|(a, c)| a * c).sum();
            let xv = xd[b * din + i];
            for (acc, &gv) in gw[i * dout..(i + 1) * dout].iter_mut().zip(grow) {
                *acc += xv * gv;
            }
        }
    }
    Ok((
        Tensor::new(vec![n, din], gx)?,
        Tensor::new(vec![din, dout], gw)?,
        Tensor::new(vec![dout], gb)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_input_yields_bias_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = LayerParams::dense_init(3, 4, &mut rng);
        p.bias = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let y = dense(&Tensor::zeros(&[2, 3]), &p).unwrap();
        assert_eq!(&y.data()[..4], p.bias.data());
        assert_eq!(&y.data()[4..], p.bias.data());
    }

    #[test]
    fn identity_input_returns_weights() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = LayerParams::new(w.clone(), Tensor::zeros(&[2]));
        assert_eq!(dense(&Tensor::eye(2), &p).unwrap(), w);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let p = LayerParams::new(
            Tensor::randn(&[5, 2], 1.0, &mut rng),
            Tensor::randn(&[2], 1.0, &mut rng),
        );
        let y = dense(&x, &p).unwrap();
        for b in 0..4 {
            for o in 0..2 {
                let mut acc = p.bias.data()[o];
                for i in 0..5 {
                    acc += x.get(&[b, i]) * p.weights.get(&[i, o]);
                }
                assert!((y.get(&[b, o]) - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let p = LayerParams::new(Tensor::zeros(&[3, 2]), Tensor::zeros(&[2]));
        let err = dense(&Tensor::zeros(&[1, 4]), &p).unwrap_err().to_string();
        assert!(err.contains("[1, 4]") && err.contains("[3, 2]"), "{err}");
    }
}
