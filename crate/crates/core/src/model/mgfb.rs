//! Mixed-scale gated feed-forward block.
//!
//! `M = DWConv3×3(Conv1×1(x))` expands to `e·C` channels. `M` is split into
//! `n` equal channel groups; group `i` becomes `Bᵢ = DWConv_{kᵢ}(Mᵢ) + Mᵢ`.
//! The leading `mgfb_activated` branches pass through the activation, all
//! branches are multiplied elementwise, and a 1×1 conv maps back to `C`.

use super::{Ctx, ModelConfig, ModelError, Result};
use crate::graph::Var;
use crate::nn::ConvSpec;

pub fn mgfb_forward(ctx: &mut Ctx, x: Var, prefix: &str, cfg: &ModelConfig) -> Result<Var> {
    let (c, _, _) = ctx.g.value(x).dims3()?;
    let n = cfg.mgfb_n();
    let hidden = cfg.mgfb_expansion * c;
    if n == 0 || !hidden.is_multiple_of(n) {
        return Err(ModelError::Shape(format!(
            "{hidden} channels cannot split into {n} branches"
        )));
    }
    let group = hidden / n;

    let m = ctx.conv(
        x,
        &format!("{prefix}/expand"),
        ConvSpec::pointwise(c, hidden),
    )?;
    let m = ctx.conv(
        m,
        &format!("{prefix}/expand_dw"),
        ConvSpec::depthwise(hidden, 3),
    )?;

    let mut gated: Option<Var> = None;
    for (i, &k) in cfg.mgfb_kernels.iter().enumerate() {
        let part = ctx.g.narrow(m, i * group, group)?;
        let filtered = ctx.conv(
            part,
            &format!("{prefix}/branch{i}"),
            ConvSpec::depthwise(group, k),
        )?;
        let mut branch = ctx.g.add(filtered, part)?;
        if i < cfg.mgfb_activated {
            branch = ctx.g.activation(branch, cfg.activation)?;
        }
        gated = Some(match gated {
            None => branch,
            Some(acc) => ctx.g.mul(acc, branch)?,
        });
    }
    let f = gated.expect("at least one branch");
    ctx.conv(f, &format!("{prefix}/out"), ConvSpec::pointwise(group, c))
}
