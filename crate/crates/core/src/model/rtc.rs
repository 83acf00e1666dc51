//! Region transformer cascade:
//! `F = RTB(Conv1×1(concat(RTB_U(x), RTB_R(x), x)))`.

use super::mask::{self, MaskKind, RegionMask};
use super::rtb::rtb_forward;
use super::{Ctx, MaskRecord, ModelConfig, Result};
use crate::graph::Var;
use crate::nn::ConvSpec;

/// `reference` is the shallow feature resampled to this level. Disabled mask
/// kinds (ablation switches) fall back to full masks in their branch.
#[allow(clippy::too_many_arguments)]
pub fn rtc_forward(
    ctx: &mut Ctx,
    x: Var,
    reference: &crate::tensor::Tensor,
    prefix: &str,
    heads: usize,
    cfg: &ModelConfig,
    level: usize,
    index: usize,
) -> Result<Var> {
    let (c, h, w) = ctx.g.value(x).dims3()?;
    let (rain_bin, unaffected_bin) =
        mask::region_binaries(reference, ctx.g.value(x), cfg.mask_lambda)?;

    let rain = if cfg.use_fg_mask {
        RegionMask {
            kind: MaskKind::Rain,
            binary: rain_bin,
            gain: mask::mask_gain(ctx, &format!("{prefix}/gain_r"), c)?,
        }
    } else {
        RegionMask::full(ctx, c, h, w)?
    };
    let unaffected = if cfg.use_bg_mask {
        RegionMask {
            kind: MaskKind::Unaffected,
            binary: unaffected_bin,
            gain: mask::mask_gain(ctx, &format!("{prefix}/gain_u"), c)?,
        }
    } else {
        RegionMask::full(ctx, c, h, w)?
    };
    if ctx.recording_masks() {
        let rec = MaskRecord {
            level,
            rtc: index,
            rain: rain.binary.clone(),
            unaffected: unaffected.binary.clone(),
            rain_gain: ctx.g.value(rain.gain).clone(),
            unaffected_gain: ctx.g.value(unaffected.gain).clone(),
        };
        ctx.push_mask(rec);
    }

    let u = rtb_forward(
        ctx,
        x,
        Some(&unaffected),
        &format!("{prefix}/rtb_u"),
        heads,
        cfg,
    )?;
    let r = rtb_forward(ctx, x, Some(&rain), &format!("{prefix}/rtb_r"), heads, cfg)?;
    let cat = ctx.g.concat(&[u, r, x])?;
    let fused = ctx.conv(
        cat,
        &format!("{prefix}/fuse"),
        ConvSpec::pointwise(3 * c, c),
    )?;
    rtb_forward(ctx, fused, None, &format!("{prefix}/rtb_full"), heads, cfg)
}
