//! Parameter inventory: paths, shapes and initializers.
//!
//! Initialization: convolution weights uniform on `±1/√fan_in`, biases 0,
//! layer-norm gamma 1 and beta 0, attention temperatures 1. Mask gain
//! convolutions start with zero weight and unit bias, so every gain starts at
//! exactly 1.

use super::{ModelConfig, Result, LEVELS};
use crate::nn::{initialize, ConvSpec, Init, ParamSpec, ParamStore};

struct Layout<'a> {
    cfg: &'a ModelConfig,
    specs: Vec<ParamSpec>,
}

impl Layout<'_> {
    fn push(&mut self, path: String, shape: Vec<usize>, init: Init) {
        self.specs.push(ParamSpec { path, shape, init });
    }

    fn conv(&mut self, prefix: &str, spec: ConvSpec) {
        self.push(
            format!("{prefix}/weight"),
            spec.weight_shape().to_vec(),
            Init::fan_in(spec.fan_in()),
        );
        if spec.has_bias {
            self.push(
                format!("{prefix}/bias"),
                vec![spec.out_channels],
                Init::Constant(0.0),
            );
        }
    }

    fn norm(&mut self, prefix: &str, c: usize) {
        self.push(format!("{prefix}/gamma"), vec![c], Init::Constant(1.0));
        self.push(format!("{prefix}/beta"), vec![c], Init::Constant(0.0));
    }

    fn gain(&mut self, prefix: &str, c: usize) {
        self.push(
            format!("{prefix}/weight"),
            vec![c, c, 1, 1],
            Init::Constant(0.0),
        );
        self.push(format!("{prefix}/bias"), vec![c], Init::Constant(1.0));
    }

    fn rtb(&mut self, prefix: &str, c: usize, heads: usize) {
        self.norm(&format!("{prefix}/norm1"), c);
        let rma = format!("{prefix}/rma");
        self.conv(
            &format!("{rma}/qkv"),
            ConvSpec::pointwise(c, 3 * c).without_bias(),
        );
        self.conv(&format!("{rma}/qkv_dw"), ConvSpec::depthwise(3 * c, 3));
        self.push(
            format!("{rma}/temperature"),
            vec![heads],
            Init::Constant(1.0),
        );
        self.conv(&format!("{rma}/proj"), ConvSpec::pointwise(c, c));
        if !self.cfg.use_mgfb {
            return;
        }
        self.norm(&format!("{prefix}/norm2"), c);
        let mgfb = format!("{prefix}/mgfb");
        let hidden = self.cfg.mgfb_expansion * c;
        let group = hidden / self.cfg.mgfb_n();
        self.conv(&format!("{mgfb}/expand"), ConvSpec::pointwise(c, hidden));
        self.conv(&format!("{mgfb}/expand_dw"), ConvSpec::depthwise(hidden, 3));
        for (i, &k) in self.cfg.mgfb_kernels.iter().enumerate() {
            self.conv(&format!("{mgfb}/branch{i}"), ConvSpec::depthwise(group, k));
        }
        self.conv(&format!("{mgfb}/out"), ConvSpec::pointwise(group, c));
    }

    fn rtc(&mut self, prefix: &str, c: usize, heads: usize) {
        if self.cfg.use_fg_mask {
            self.gain(&format!("{prefix}/gain_r"), c);
        }
        if self.cfg.use_bg_mask {
            self.gain(&format!("{prefix}/gain_u"), c);
        }
        self.rtb(&format!("{prefix}/rtb_u"), c, heads);
        self.rtb(&format!("{prefix}/rtb_r"), c, heads);
        self.conv(&format!("{prefix}/fuse"), ConvSpec::pointwise(3 * c, c));
        self.rtb(&format!("{prefix}/rtb_full"), c, heads);
    }
}

/// Every parameter of the network in forward-pass order.
pub fn param_layout(cfg: &ModelConfig) -> Result<Vec<ParamSpec>> {
    cfg.validate()?;
    let mut l = Layout {
        cfg,
        specs: Vec::new(),
    };
    let base = cfg.base_channels;
    l.conv("shallow", ConvSpec::new(3, base, 3));
    for level in 0..LEVELS {
        let c = cfg.channels(level);
        for b in 0..cfg.blocks[level] {
            l.rtb(&format!("encoder/level{level}/rtb{b}"), c, cfg.heads[level]);
        }
        if level + 1 < LEVELS {
            l.conv(
                &format!("encoder/down{level}"),
                ConvSpec::pointwise(c, c / 2),
            );
        }
    }
    for level in (0..LEVELS - 1).rev() {
        let c = cfg.channels(level);
        let p = format!("decoder/level{level}");
        l.conv(&format!("{p}/up"), ConvSpec::pointwise(2 * c, 4 * c));
        l.conv(&format!("{p}/reduce"), ConvSpec::pointwise(2 * c, c));
        for j in 0..cfg.rtc_per_decoder_level {
            l.rtc(&format!("{p}/rtc{j}"), c, cfg.heads[level]);
        }
    }
    for k in 0..cfg.refinement_blocks {
        l.rtb(&format!("refine/rtb{k}"), base, cfg.heads[0]);
    }
    l.conv("output", ConvSpec::new(base, 3, 3));
    Ok(l.specs)
}

/// Parameters of a single block rooted at `prefix`, for testing blocks in
/// isolation.
pub fn rtb_layout(
    cfg: &ModelConfig,
    prefix: &str,
    channels: usize,
    heads: usize,
) -> Vec<ParamSpec> {
    let mut l = Layout {
        cfg,
        specs: Vec::new(),
    };
    l.rtb(prefix, channels, heads);
    l.specs
}

/// Parameters of a single cascade rooted at `prefix`.
pub fn rtc_layout(
    cfg: &ModelConfig,
    prefix: &str,
    channels: usize,
    heads: usize,
) -> Vec<ParamSpec> {
    let mut l = Layout {
        cfg,
        specs: Vec::new(),
    };
    l.rtc(prefix, channels, heads);
    l.specs
}

/// Fresh parameters, deterministic in `(cfg, seed)`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    Ok(initialize(&param_layout(cfg)?, seed)?)
}

/// Closed-form scalar count. With `e` the MGFB expansion, `n` the branch
/// count, `g = e·c/n` and kernels `kᵢ`, a block at width `c` with `h` heads
/// holds
///
/// ```text
/// rtb(c) = 2c + 3c² + 30c + h + c² + c                      (norm, attention)
///        + 2c + (e·c² + e·c) + 10e·c + Σᵢ g(kᵢ² + 1) + g·c + c   (MGFB)
/// rtc(c) = 3·rtb(c) + 3c² + c + masks·(c² + c)
/// ```
///
/// and the whole network adds the 3×3 stem `28C`, downsamplers `c²/2 + c/2`,
/// per decoder level `up 8c² + 4c` and `reduce 2c² + c`, and the 3×3 head
/// `27C + 3`.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let e = cfg.mgfb_expansion;
    let n = cfg.mgfb_n();
    let rtb = |c: usize, h: usize| {
        let attention = 2 * c + 3 * c * c + 30 * c + h + c * c + c;
        let mgfb = if cfg.use_mgfb {
            let g = e * c / n;
            let branches: usize = cfg.mgfb_kernels.iter().map(|k| g * (k * k + 1)).sum();
            2 * c + (e * c * c + e * c) + 10 * e * c + branches + g * c + c
        } else {
            0
        };
        attention + mgfb
    };
    let masks = usize::from(cfg.use_fg_mask) + usize::from(cfg.use_bg_mask);
    let rtc = |c: usize, h: usize| 3 * rtb(c, h) + 3 * c * c + c + masks * (c * c + c);

    let base = cfg.base_channels;
    let mut total = 28 * base + 27 * base + 3;
    for level in 0..LEVELS {
        let (c, h) = (cfg.channels(level), cfg.heads[level]);
        total += cfg.blocks[level] * rtb(c, h);
        if level + 1 < LEVELS {
            total += c * c / 2 + c / 2;
            total += 8 * c * c + 4 * c + 2 * c * c + c + cfg.rtc_per_decoder_level * rtc(c, h);
        }
    }
    total + cfg.refinement_blocks * rtb(base, cfg.heads[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic_and_stated() {
        let cfg = ModelConfig::desk();
        let a = init_params(&cfg, 7).unwrap();
        let b = init_params(&cfg, 7).unwrap();
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|((pa, ta), (pb, tb))| pa == pb && ta.bitwise_eq(tb)));
        assert_ne!(init_params(&cfg, 8).unwrap(), a);
        for (path, t) in a.iter() {
            if path.ends_with("/gamma") || path.ends_with("/temperature") {
                assert!(t.data().iter().all(|&v| v == 1.0), "{path}");
            }
            if path.ends_with("/beta") || (path.ends_with("/bias") && !path.contains("/gain_")) {
                assert!(t.data().iter().all(|&v| v == 0.0), "{path}");
            }
        }
    }

    #[test]
    fn weight_bounds_follow_fan_in() {
        let store = init_params(&ModelConfig::desk(), 1).unwrap();
        let qkv = store.get("encoder/level1/rtb0/rma/qkv/weight").unwrap();
        assert_eq!(qkv.shape(), &[96, 32, 1, 1]);
        let bound = 1.0 / 32f64.sqrt();
        assert!(qkv.data().iter().all(|v| v.abs() <= bound));
        assert!(!store.contains("encoder/level1/rtb0/rma/qkv/bias"));
    }
}
