//! Per-sample multiply-accumulate counts. Pooling, activations and
//! normalization count as zero.

use super::spec::LayerSpec;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlopReport {
    pub primary: Vec<(String, u64)>,
    pub auxiliary: Vec<(String, u64)>,
    pub primary_total: u64,
    pub auxiliary_total: u64,
}

impl FlopReport {
    pub fn total(&self) -> u64 {
        self.primary_total + self.auxiliary_total
    }
}

fn count(layers: &[LayerSpec], input: &[usize]) -> Result<(Vec<(String, u64)>, Vec<usize>)> {
    let mut shape = input.to_vec();
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        out.push((l.to_string(), l.macs(&shape)?));
        shape = l.output_shape(&shape)?;
    }
    Ok((out, shape))
}

/// Counts a primary layer list applied to `input`, followed by a head
/// applied to the primary output.
pub fn flop_count_layers(
    primary: &[LayerSpec],
    head: &[LayerSpec],
    input: &[usize],
) -> Result<FlopReport> {
    let (p, mid) = count(primary, input)?;
    let (a, _) = count(head, &mid)?;
    Ok(FlopReport {
        primary_total: p.iter().map(|(_, m)| m).sum(),
        auxiliary_total: a.iter().map(|(_, m)| m).sum(),
        primary: p,
        auxiliary: a,
    })
}
