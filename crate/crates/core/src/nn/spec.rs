use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::{Layer, LayerParams};
use crate::error::{Error, Result};

/// Declarative layer description; geometry is resolved against the
/// per-sample input shape (`[C, H, W]` or `[d]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { out: usize, kernel: usize },
    BatchNorm,
    Relu,
    MaxPool2,
    AvgPoolTo { h: usize, w: usize },
    Flatten,
    Dense { out: usize },
}

impl LayerSpec {
    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let unresolved = |msg: String| Error::Shape { op: "shape inference", msg };
        match (*self, input) {
            (LayerSpec::Conv { out, kernel }, &[_, h, w]) if kernel % 2 == 1 && out > 0 => {
                Ok(vec![out, h, w])
            }
            (LayerSpec::BatchNorm | LayerSpec::Relu, s) if !s.is_empty() => Ok(s.to_vec()),
            (LayerSpec::MaxPool2, &[c, h, w]) if h % 2 == 0 && w % 2 == 0 && h > 0 && w > 0 => {
                Ok(vec![c, h / 2, w / 2])
            }
            (LayerSpec::AvgPoolTo { h: th, w: tw }, &[c, h, w])
                if th >= 1 && tw >= 1 && th <= h && tw <= w =>
            {
                Ok(vec![c, th, tw])
            }
            (LayerSpec::Flatten, s) if !s.is_empty() => Ok(vec![s.iter().product()]),
            (LayerSpec::Dense { out }, &[_]) if out > 0 => Ok(vec![out]),
            (spec, s) => Err(unresolved(format!("{spec} cannot take input {s:?}"))),
        }
    }

    /// Multiply-accumulates per sample.
    pub fn macs(&self, input: &[usize]) -> Result<u64> {
        let out = self.output_shape(input)?;
        Ok(match *self {
            LayerSpec::Conv { kernel, .. } => {
                (input[0] * out[0] * kernel * kernel * out[1] * out[2]) as u64
            }
            LayerSpec::Dense { out } => (input[0] * out) as u64,
            _ => 0,
        })
    }

    pub fn instantiate<R: Rng + ?Sized>(&self, input: &[usize], rng: &mut R) -> Result<Layer> {
        self.output_shape(input)?;
        Ok(match *self {
            LayerSpec::Conv { out, kernel } => Layer::Conv {
                params: LayerParams::conv_init(input[0], out, kernel, rng),
                kernel,
            },
            LayerSpec::BatchNorm => Layer::BatchNorm(LayerParams::batchnorm_init(input[0])),
            LayerSpec::Relu => Layer::Relu,
            LayerSpec::MaxPool2 => Layer::MaxPool2,
            LayerSpec::AvgPoolTo { h, w } => Layer::AvgPoolTo { h, w },
            LayerSpec::Flatten => Layer::Flatten,
            LayerSpec::Dense { out } => Layer::Dense(LayerParams::dense_init(input[0], out, rng)),
        })
    }
}

/// Folds `output_shape` over a layer list.
pub fn infer_shape(layers: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    layers
        .iter()
        .try_fold(input.to_vec(), |s, l| l.output_shape(&s))
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv { out, kernel } => write!(f, "conv{kernel}x{kernel}({out})"),
            LayerSpec::BatchNorm => f.write_str("bn"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::MaxPool2 => f.write_str("maxpool2"),
            LayerSpec::AvgPoolTo { h, w } => write!(f, "avgpool({h},{w})"),
            LayerSpec::Flatten => f.write_str("flatten"),
            LayerSpec::Dense { out } => write!(f, "dense({out})"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::invalid(format!("unknown layer `{s}`"));
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return Err(bad()),
            None => (s, None),
        };
        let nums = |a: Option<&str>| -> Result<Vec<usize>> {
            a.ok_or_else(bad)?
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| bad()))
                .collect()
        };
        match (name, args) {
            ("bn", None) => Ok(LayerSpec::BatchNorm),
            ("relu", None) => Ok(LayerSpec::Relu),
            ("maxpool2", None) => Ok(LayerSpec::MaxPool2),
            ("flatten", None) => Ok(LayerSpec::Flatten),
            ("dense", a) => match nums(a)?[..] {
                [out] => Ok(LayerSpec::Dense { out }),
                _ => Err(bad()),
            },
            ("avgpool", a) => match nums(a)?[..] {
                [h, w] => Ok(LayerSpec::AvgPoolTo { h, w }),
                _ => Err(bad()),
            },
            (conv, a) if conv.starts_with("conv") => {
                let k = conv[4..]
                    .split_once('x')
                    .filter(|(a, b)| a == b)
                    .and_then(|(a, _)| a.parse::<usize>().ok())
                    .ok_or_else(bad)?;
                match nums(a)?[..] {
                    [out] => Ok(LayerSpec::Conv { out, kernel: k }),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_form_round_trips() {
        let all = [
            LayerSpec::Conv { out: 16, kernel: 3 },
            LayerSpec::Conv { out: 4, kernel: 1 },
            LayerSpec::BatchNorm,
            LayerSpec::Relu,
            LayerSpec::MaxPool2,
            LayerSpec::AvgPoolTo { h: 2, w: 3 },
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 10 },
        ];
        for l in all {
            assert_eq!(l.to_string().parse::<LayerSpec>().unwrap(), l);
        }
        assert!("conv3x2(4)".parse::<LayerSpec>().is_err());
        assert!("dense".parse::<LayerSpec>().is_err());
    }

    #[test]
    fn shape_inference_and_macs() {
        let layers = [
            LayerSpec::Conv { out: 8, kernel: 3 },
            LayerSpec::MaxPool2,
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 5 },
        ];
        assert_eq!(infer_shape(&layers, &[3, 8, 8]).unwrap(), vec![5]);
        assert_eq!(LayerSpec::Dense { out: 5 }.macs(&[10]).unwrap(), 50);
        assert_eq!(
            LayerSpec::Conv { out: 64, kernel: 3 }.macs(&[64, 32, 32]).unwrap(),
            37_748_736
        );
        assert!(LayerSpec::Dense { out: 3 }.output_shape(&[2, 4, 4]).is_err());
    }
}
