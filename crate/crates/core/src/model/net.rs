//! Full encoder/decoder assembly.

use super::mask::RegionMask;
use super::rtb::rtb_forward;
use super::rtc::rtc_forward;
use super::{Ctx, MaskRecord, ModelConfig, ModelError, Result, LEVELS};
use crate::graph::Var;
use crate::nn::{ConvSpec, ParamStore};
use crate::tensor::Tensor;

/// Input extents must be multiples of this (three 2× downsamplings).
pub const SIZE_MULTIPLE: usize = 8;

/// Shallow feature and its encoder-downsampled versions, used as the
/// reference signal for mask generation at each decoder level.
#[derive(Clone, Debug)]
pub struct FeatureCache {
    pub full: Tensor,
    pub half: Tensor,
    pub quarter: Tensor,
}

impl FeatureCache {
    pub fn level(&self, level: usize) -> &Tensor {
        match level {
            0 => &self.full,
            1 => &self.half,
            _ => &self.quarter,
        }
    }
}

fn downsample(ctx: &mut Ctx, x: Var, level: usize) -> Result<Var> {
    let (c, _, _) = ctx.g.value(x).dims3()?;
    let y = ctx.conv(
        x,
        &format!("encoder/down{level}"),
        ConvSpec::pointwise(c, c / 2),
    )?;
    Ok(ctx.g.pixel_unshuffle(y, 2)?)
}

fn upsample(ctx: &mut Ctx, x: Var, level: usize) -> Result<Var> {
    let (c2, _, _) = ctx.g.value(x).dims3()?;
    let y = ctx.conv(
        x,
        &format!("decoder/level{level}/up"),
        ConvSpec::pointwise(c2, 2 * c2),
    )?;
    Ok(ctx.g.pixel_shuffle(y, 2)?)
}

/// Network on a `3×H×W` input with `H`, `W` multiples of [`SIZE_MULTIPLE`].
/// Returns `input + residual`.
pub fn forward(ctx: &mut Ctx, img: Var, cfg: &ModelConfig) -> Result<Var> {
    cfg.validate()?;
    let (c_in, h, w) = ctx.g.value(img).dims3()?;
    if c_in != 3 || h % SIZE_MULTIPLE != 0 || w % SIZE_MULTIPLE != 0 {
        return Err(ModelError::Shape(format!(
            "expected 3×H×W with H, W multiples of {SIZE_MULTIPLE}, got {c_in}×{h}×{w}"
        )));
    }
    let base = cfg.base_channels;
    let shallow = ctx.conv(img, "shallow", ConvSpec::new(3, base, 3))?;

    let reference = ctx.g.detach(shallow);
    let half = downsample(ctx, reference, 0)?;
    let quarter = downsample(ctx, half, 1)?;
    let cache = FeatureCache {
        full: ctx.g.value(shallow).clone(),
        half: ctx.g.value(half).clone(),
        quarter: ctx.g.value(quarter).clone(),
    };

    let mut x = shallow;
    let mut skips = Vec::with_capacity(LEVELS - 1);
    for level in 0..LEVELS {
        let (c, lh, lw) = ctx.g.value(x).dims3()?;
        let full = RegionMask::full(ctx, c, lh, lw)?;
        for b in 0..cfg.blocks[level] {
            let p = format!("encoder/level{level}/rtb{b}");
            x = rtb_forward(ctx, x, Some(&full), &p, cfg.heads[level], cfg)?;
        }
        if level + 1 < LEVELS {
            skips.push(x);
            x = downsample(ctx, x, level)?;
        }
    }

    for level in (0..LEVELS - 1).rev() {
        let c = cfg.channels(level);
        x = upsample(ctx, x, level)?;
        x = ctx.g.concat(&[x, skips[level]])?;
        x = ctx.conv(
            x,
            &format!("decoder/level{level}/reduce"),
            ConvSpec::pointwise(2 * c, c),
        )?;
        for j in 0..cfg.rtc_per_decoder_level {
            let p = format!("decoder/level{level}/rtc{j}");
            x = rtc_forward(
                ctx,
                x,
                cache.level(level),
                &p,
                cfg.heads[level],
                cfg,
                level,
                j,
            )?;
        }
    }

    for k in 0..cfg.refinement_blocks {
        x = rtb_forward(ctx, x, None, &format!("refine/rtb{k}"), cfg.heads[0], cfg)?;
    }
    let residual = ctx.conv(x, "output", ConvSpec::new(base, 3, 3))?;
    Ok(ctx.g.add(img, residual)?)
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let i = i % period;
    if i < n {
        i
    } else {
        period - i
    }
}

/// Reflect-pads bottom and right edges up to the next multiple of `m`.
pub fn pad_to_multiple(t: &Tensor, m: usize) -> Result<Tensor> {
    let (c, h, w) = t.dims3()?;
    let (ph, pw) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    if (ph, pw) == (h, w) {
        return Ok(t.clone());
    }
    let src = t.data();
    let mut out = Vec::with_capacity(c * ph * pw);
    for ch in 0..c {
        for y in 0..ph {
            let row = &src[(ch * h + reflect(y, h)) * w..][..w];
            out.extend((0..pw).map(|x| row[reflect(x, w)]));
        }
    }
    Ok(Tensor::new([c, ph, pw], out)?)
}

/// Top-left `h×w` window of every channel.
pub fn crop(t: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (c, th, tw) = t.dims3()?;
    if h > th || w > tw {
        return Err(ModelError::Shape(format!(
            "cannot crop {th}×{tw} to {h}×{w}"
        )));
    }
    let src = t.data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        for y in 0..h {
            out.extend_from_slice(&src[(ch * th + y) * tw..][..w]);
        }
    }
    Ok(Tensor::new([c, h, w], out)?)
}

/// Inference on any `3×H×W` image: reflect-pad, run, crop.
pub fn regformer_forward(store: &ParamStore, cfg: &ModelConfig, img: &Tensor) -> Result<Tensor> {
    run(store, cfg, img, false).map(|(t, _)| t)
}

/// Like [`regformer_forward`] but also returns the masks of every cascade,
/// cropped to the unpadded extent at their level.
pub fn regformer_forward_traced(
    store: &ParamStore,
    cfg: &ModelConfig,
    img: &Tensor,
) -> Result<(Tensor, Vec<MaskRecord>)> {
    run(store, cfg, img, true)
}

fn run(
    store: &ParamStore,
    cfg: &ModelConfig,
    img: &Tensor,
    trace: bool,
) -> Result<(Tensor, Vec<MaskRecord>)> {
    let (_, h, w) = img.dims3()?;
    let padded = pad_to_multiple(img, SIZE_MULTIPLE)?;
    let mut ctx = Ctx::new(store, false);
    if trace {
        ctx.record_masks();
    }
    let x = ctx.g.constant(padded)?;
    let y = forward(&mut ctx, x, cfg)?;
    let out = crop(ctx.g.value(y), h, w)?;
    let masks = ctx
        .take_masks()
        .into_iter()
        .map(|mut rec| {
            let s = 1usize << rec.level;
            let (mh, mw) = (h.div_ceil(s), w.div_ceil(s));
            rec.rain = crop(&rec.rain, mh, mw)?;
            rec.unaffected = crop(&rec.unaffected, mh, mw)?;
            Ok(rec)
        })
        .collect::<Result<_>>()?;
    Ok((out, masks))
}

/// Mean absolute error between `output` and a constant `target`.
pub fn l1_loss(ctx: &mut Ctx, output: Var, target: &Tensor) -> Result<Var> {
    let t = ctx.g.constant(target.clone())?;
    let d = ctx.g.sub(output, t)?;
    let a = ctx.g.abs(d)?;
    Ok(ctx.g.mean(a)?)
}
