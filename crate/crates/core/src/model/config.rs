use thiserror::Error;

use crate::nn::Activation;

/// Encoder depth: three downsampling stages, four resolutions.
pub const LEVELS: usize = 4;

#[derive(Debug, Error, PartialEq)]
#[error("invalid model config: {0}")]
pub struct ConfigError(pub String);

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Channels at full resolution; level `i` carries `base_channels · 2ⁱ`.
    pub base_channels: usize,
    /// Encoder blocks per level.
    pub blocks: [usize; LEVELS],
    pub heads: [usize; LEVELS],
    /// Depthwise kernel size per gated branch; the branch count is the length.
    pub mgfb_kernels: Vec<usize>,
    pub mgfb_expansion: usize,
    /// Leading branches that pass through the activation before gating.
    pub mgfb_activated: usize,
    pub activation: Activation,
    /// Threshold coefficient: `τ = mean + λ·std` of the difference map.
    pub mask_lambda: f64,
    pub refinement_blocks: usize,
    pub rtc_per_decoder_level: usize,
    pub use_fg_mask: bool,
    pub use_bg_mask: bool,
    pub use_mgfb: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 48 channels, four blocks and six heads per level.
    pub fn standard() -> Self {
        Self {
            base_channels: 48,
            blocks: [4; LEVELS],
            heads: [6; LEVELS],
            ..Self::desk()
        }
    }

    /// The large variant: 60 channels, six blocks per level.
    pub fn large() -> Self {
        Self {
            base_channels: 60,
            blocks: [6; LEVELS],
            ..Self::standard()
        }
    }

    /// Small configuration that trains in minutes on one CPU core.
    pub fn desk() -> Self {
        Self {
            base_channels: 16,
            blocks: [2; LEVELS],
            heads: [2; LEVELS],
            mgfb_kernels: vec![3, 5],
            mgfb_expansion: 2,
            mgfb_activated: 1,
            activation: Activation::Gelu,
            mask_lambda: 0.0,
            refinement_blocks: 1,
            rtc_per_decoder_level: 1,
            use_fg_mask: true,
            use_bg_mask: true,
            use_mgfb: true,
        }
    }

    pub fn mgfb_n(&self) -> usize {
        self.mgfb_kernels.len()
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |msg: String| Err(ConfigError(msg));
        if self.base_channels < 2 || !self.base_channels.is_multiple_of(2) {
            return fail(format!(
                "base_channels {} must be even and ≥ 2",
                self.base_channels
            ));
        }
        if self.blocks.contains(&0) {
            return fail(format!(
                "every level needs at least one block: {:?}",
                self.blocks
            ));
        }
        let n = self.mgfb_n();
        if n == 0 {
            return fail("mgfb_kernels is empty".into());
        }
        if let Some(k) = self.mgfb_kernels.iter().find(|&&k| k % 2 == 0) {
            return fail(format!("mgfb kernel {k} must be odd"));
        }
        if self.mgfb_expansion == 0 {
            return fail("mgfb_expansion must be ≥ 1".into());
        }
        if self.mgfb_activated == 0 || self.mgfb_activated > n {
            return fail(format!(
                "mgfb_activated {} outside 1..={n}",
                self.mgfb_activated
            ));
        }
        for level in 0..LEVELS {
            let c = self.channels(level);
            let h = self.heads[level];
            if h == 0 || !c.is_multiple_of(h) {
                return fail(format!(
                    "level {level}: {c} channels not divisible by {h} heads"
                ));
            }
            if !(self.mgfb_expansion * c).is_multiple_of(n) {
                return fail(format!(
                    "level {level}: {} expanded channels not divisible into {n} branches",
                    self.mgfb_expansion * c
                ));
            }
        }
        if self.rtc_per_decoder_level == 0 {
            return fail("rtc_per_decoder_level must be ≥ 1".into());
        }
        if !self.mask_lambda.is_finite() {
            return fail("mask_lambda must be finite".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        ModelConfig::standard().validate().unwrap();
        ModelConfig::large().validate().unwrap();
        ModelConfig::desk().validate().unwrap();
        assert_eq!(ModelConfig::standard().channels(3), 384);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        let bad_heads = ModelConfig {
            heads: [3, 2, 2, 2],
            ..ModelConfig::desk()
        };
        assert!(bad_heads.validate().is_err());
        let even_kernel = ModelConfig {
            mgfb_kernels: vec![3, 4],
            ..ModelConfig::desk()
        };
        assert!(even_kernel.validate().is_err());
        let odd_channels = ModelConfig {
            base_channels: 15,
            ..ModelConfig::desk()
        };
        assert!(odd_channels.validate().is_err());
        let split = ModelConfig {
            base_channels: 10,
            mgfb_kernels: vec![3, 5, 7],
            mgfb_expansion: 1,
            ..ModelConfig::desk()
        };
        assert!(split.validate().is_err());
    }
}
