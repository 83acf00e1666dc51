//! Region masks from the discrepancy between shallow and restored features.
//!
//! The difference map `D = mean_c |I − I′|` is thresholded at
//! `τ = mean(D) + λ·std(D)`. Pixels above `τ` form the rain mask `R`; the
//! unaffected mask is its complement `U = 1 − R`. The binary path carries no
//! gradient. Each mask kind also owns a learned per-channel gain, produced by
//! a 1×1 convolution applied to an all-ones map.

use super::{Ctx, ModelError, Result};
use crate::graph::Var;
use crate::nn::ConvSpec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Rain,
    Unaffected,
    Full,
}

#[derive(Clone, Debug)]
pub struct RegionMask {
    pub kind: MaskKind,
    /// `1×h×w`, values exactly 0 or 1.
    pub binary: Tensor,
    /// Per-channel gain, shape `[C]`.
    pub gain: Var,
}

impl RegionMask {
    /// All-ones map with unit gain.
    pub fn full(ctx: &mut Ctx, channels: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            kind: MaskKind::Full,
            binary: Tensor::ones([1, h, w])?,
            gain: ctx.g.constant(Tensor::ones([channels])?)?,
        })
    }
}

/// `mean_c |a − b|` as a `1×h×w` map.
pub fn difference_map(reference: &Tensor, restored: &Tensor) -> Result<Tensor> {
    if reference.shape() != restored.shape() {
        return Err(ModelError::Shape(format!(
            "mask inputs differ: {:?} vs {:?}",
            reference.shape(),
            restored.shape()
        )));
    }
    let (c, h, w) = reference.dims3()?;
    let plane = h * w;
    let mut d = vec![0.0; plane];
    for (ra, rb) in reference
        .data()
        .chunks_exact(plane)
        .zip(restored.data().chunks_exact(plane))
    {
        for ((acc, a), b) in d.iter_mut().zip(ra).zip(rb) {
            *acc += (a - b).abs();
        }
    }
    let inv = 1.0 / c as f64;
    d.iter_mut().for_each(|v| *v *= inv);
    Ok(Tensor::new([1, h, w], d)?)
}

/// `[D > mean(D) + λ·std(D)]` with the population standard deviation.
pub fn binarize(diff: &Tensor, lambda: f64) -> Tensor {
    let n = diff.numel() as f64;
    let mean = diff.sum() / n;
    let var = diff
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let tau = mean + lambda * var.sqrt();
    diff.map(|v| if v > tau { 1.0 } else { 0.0 })
}

/// Rain and unaffected binary maps for one cascade.
pub fn region_binaries(
    reference: &Tensor,
    restored: &Tensor,
    lambda: f64,
) -> Result<(Tensor, Tensor)> {
    let rain = binarize(&difference_map(reference, restored)?, lambda);
    let unaffected = rain.map(|v| 1.0 - v);
    Ok((rain, unaffected))
}

/// Learned gain: a 1×1 convolution on a `C×1×1` all-ones map, flattened to `[C]`.
pub fn mask_gain(ctx: &mut Ctx, prefix: &str, channels: usize) -> Result<Var> {
    let ones = ctx.g.constant(Tensor::ones([channels, 1, 1])?)?;
    let g = ctx.conv(ones, prefix, ConvSpec::pointwise(channels, channels))?;
    Ok(ctx.g.reshape(g, &[channels])?)
}

/// Builds the `(R, U)` pair from the reference feature at this level and the
/// feature entering the cascade.
pub fn generate_region_masks(
    ctx: &mut Ctx,
    reference: &Tensor,
    restored: &Tensor,
    rain_gain_prefix: &str,
    unaffected_gain_prefix: &str,
    lambda: f64,
) -> Result<(RegionMask, RegionMask)> {
    let (c, _, _) = reference.dims3()?;
    let (rain, unaffected) = region_binaries(reference, restored, lambda)?;
    let rain_gain = mask_gain(ctx, rain_gain_prefix, c)?;
    let unaffected_gain = mask_gain(ctx, unaffected_gain_prefix, c)?;
    Ok((
        RegionMask {
            kind: MaskKind::Rain,
            binary: rain,
            gain: rain_gain,
        },
        RegionMask {
            kind: MaskKind::Unaffected,
            binary: unaffected,
            gain: unaffected_gain,
        },
    ))
}
