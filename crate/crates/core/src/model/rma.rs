//! Region masked attention: transposed (channel × channel) self-attention
//! whose queries and keys are gated by a region mask.
//!
//! Pipeline for a `C×H×W` input with `h` heads:
//! 1×1 conv to `3C` (no bias) → 3×3 depthwise conv → split into Q, K, V →
//! `Q′ = Q ⊙ M`, `K′ = K ⊙ M` with `M = binary ⊙ gain` → per head, flatten
//! space, L2-normalize rows of Q′ and K′, `A = softmax(α·Q̂′K̂′ᵀ)` of size
//! `(C/h)×(C/h)`, output `A·V` → concatenate heads → 1×1 conv.
//!
//! The gain scales a whole channel row of Q′ or K′, so the row
//! normalization removes its magnitude. Only its sign reaches the scores.

use super::mask::RegionMask;
use super::{Ctx, ModelError, Result};
use crate::graph::Var;
use crate::nn::ConvSpec;
use crate::tensor::Tensor;

/// Guard in the row normalization, `x / max(‖x‖, ε)`.
pub const NORM_EPS: f64 = 1e-12;

/// Intermediate values exposed for inspection.
#[derive(Clone, Debug)]
pub struct RmaProbe {
    /// Masked queries, `C×(H·W)`, before normalization.
    pub q: Tensor,
    /// Masked keys, `C×(H·W)`, before normalization.
    pub k: Tensor,
    /// Per-head attention matrices.
    pub attention: Vec<Tensor>,
}

pub fn rma_forward(
    ctx: &mut Ctx,
    x: Var,
    mask: Option<&RegionMask>,
    prefix: &str,
    heads: usize,
) -> Result<Var> {
    rma_probe(ctx, x, mask, prefix, heads).map(|(out, _)| out)
}

pub fn rma_probe(
    ctx: &mut Ctx,
    x: Var,
    mask: Option<&RegionMask>,
    prefix: &str,
    heads: usize,
) -> Result<(Var, RmaProbe)> {
    let (c, h, w) = ctx.g.value(x).dims3()?;
    if heads == 0 || c % heads != 0 {
        return Err(ModelError::Shape(format!(
            "{c} channels not divisible by {heads} heads"
        )));
    }
    let qkv = ctx.conv(
        x,
        &format!("{prefix}/qkv"),
        ConvSpec::pointwise(c, 3 * c).without_bias(),
    )?;
    let qkv = ctx.conv(
        qkv,
        &format!("{prefix}/qkv_dw"),
        ConvSpec::depthwise(3 * c, 3),
    )?;
    let mut q = ctx.g.narrow(qkv, 0, c)?;
    let mut k = ctx.g.narrow(qkv, c, c)?;
    let v = ctx.g.narrow(qkv, 2 * c, c)?;

    if let Some(m) = mask {
        if m.binary.shape() != [1, h, w] {
            return Err(ModelError::MaskSize {
                mask: m.binary.shape().to_vec(),
                h,
                w,
            });
        }
        let bin = ctx.g.constant(m.binary.clone())?;
        q = ctx.g.mul(q, bin)?;
        q = ctx.g.channel_scale(q, m.gain)?;
        k = ctx.g.mul(k, bin)?;
        k = ctx.g.channel_scale(k, m.gain)?;
    }

    let n = h * w;
    let q = ctx.g.reshape(q, &[c, n])?;
    let k = ctx.g.reshape(k, &[c, n])?;
    let v = ctx.g.reshape(v, &[c, n])?;
    let temperature = ctx.param(&format!("{prefix}/temperature"))?;

    let d = c / heads;
    let mut outs = Vec::with_capacity(heads);
    let mut attention = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = ctx.g.narrow(q, head * d, d)?;
        let kh = ctx.g.narrow(k, head * d, d)?;
        let vh = ctx.g.narrow(v, head * d, d)?;
        let qn = ctx.g.l2_normalize(qh, NORM_EPS)?;
        let kn = ctx.g.l2_normalize(kh, NORM_EPS)?;
        let kt = ctx.g.transpose(kn)?;
        let scores = ctx.g.matmul(qn, kt)?;
        let alpha = ctx.g.narrow(temperature, head, 1)?;
        let scores = ctx.g.mul(scores, alpha)?;
        let a = ctx.g.softmax(scores, 1)?;
        attention.push(ctx.g.value(a).clone());
        outs.push(ctx.g.matmul(a, vh)?);
    }
    let merged = ctx.g.concat(&outs)?;
    let merged = ctx.g.reshape(merged, &[c, h, w])?;
    let out = ctx.conv(merged, &format!("{prefix}/proj"), ConvSpec::pointwise(c, c))?;

    let probe = RmaProbe {
        q: ctx.g.value(q).clone(),
        k: ctx.g.value(k).clone(),
        attention,
    };
    Ok((out, probe))
}
