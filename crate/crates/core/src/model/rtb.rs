//! Region transformer block: `y = x + RMA(LN(x))`, `z = y + MGFB(LN(y))`.

use super::mask::RegionMask;
use super::mgfb::mgfb_forward;
use super::rma::rma_forward;
use super::{Ctx, ModelConfig, Result};
use crate::graph::Var;

/// `mask = None` runs the attention without any masking step.
pub fn rtb_forward(
    ctx: &mut Ctx,
    x: Var,
    mask: Option<&RegionMask>,
    prefix: &str,
    heads: usize,
    cfg: &ModelConfig,
) -> Result<Var> {
    let n1 = ctx.layer_norm(x, &format!("{prefix}/norm1"))?;
    let a = rma_forward(ctx, n1, mask, &format!("{prefix}/rma"), heads)?;
    let y = ctx.g.add(x, a)?;
    if !cfg.use_mgfb {
        return Ok(y);
    }
    let n2 = ctx.layer_norm(y, &format!("{prefix}/norm2"))?;
    let f = mgfb_forward(ctx, n2, &format!("{prefix}/mgfb"), cfg)?;
    Ok(ctx.g.add(y, f)?)
}
