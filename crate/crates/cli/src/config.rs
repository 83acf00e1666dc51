//! Run configuration as flat `key = value` text.
//!
//! Every key is optional; omitted keys keep their defaults. Unknown keys and
//! repeated keys are errors. [`RunConfig::echo`] writes every key in a fixed
//! order with floats in shortest round-trip form, so `parse(echo(c)) == c`.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `base_channels` | 16 | channels at full resolution |
//! | `blocks` | `2,2,2,2` | encoder blocks per level |
//! | `heads` | `2,2,2,2` | attention heads per level |
//! | `mgfb_kernels` | `3,5` | depthwise kernel per gated branch |
//! | `mgfb_expansion` | 2 | feed-forward width multiplier |
//! | `mgfb_activated` | 1 | leading branches passed through the activation |
//! | `activation` | `gelu` | `gelu` or `relu` |
//! | `mask_lambda` | 0 | threshold = mean + λ·std |
//! | `refinement_blocks` | 1 | unmasked blocks before the output conv |
//! | `rtc_per_decoder_level` | 1 | cascades per decoder level |
//! | `use_fg_mask`, `use_bg_mask`, `use_mgfb` | true | ablation switches |
//! | `seed` | 0 | init and sampling seed |
//! | `total_steps` | 1500 | optimizer steps |
//! | `batch_size` | 1 | patches per step |
//! | `patch_size` | 32 | square patch side, multiple of 8 |
//! | `lr0`, `lr_min` | 0.0003, 0.000001 | cosine schedule end points |
//! | `beta1`, `beta2`, `weight_decay` | 0.9, 0.999, 0.0001 | AdamW |
//! | `train_manifest`, `eval_manifest` | empty | pair lists |
//! | `out_dir` | `runs` | training output directory |
//! | `checkpoint_interval` | 500 | steps between checkpoints, 0 = end only |
//! | `rain_*` | see [`RainParams`] | synthetic rain for `synth-data` |

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use regformer::data::RainParams;
use regformer::model::{ModelConfig, LEVELS};
use regformer::nn::Activation;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    Duplicate { line: usize, key: String },
    #[error("line {line}: bad value `{value}` for `{key}`: {msg}")]
    Value {
        line: usize,
        key: String,
        value: String,
        msg: String,
    },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub total_steps: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub train_manifest: Option<PathBuf>,
    pub eval_manifest: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub checkpoint_interval: u64,
    pub rain: RainParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            seed: 0,
            total_steps: 1500,
            batch_size: 1,
            patch_size: 32,
            lr0: 3e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            train_manifest: None,
            eval_manifest: None,
            out_dir: PathBuf::from("runs"),
            checkpoint_interval: 500,
            rain: RainParams::default(),
        }
    }
}

/// Keys that determine the parameter layout or the forward computation.
pub const MODEL_KEYS: &[&str] = &[
    "base_channels",
    "blocks",
    "heads",
    "mgfb_kernels",
    "mgfb_expansion",
    "mgfb_activated",
    "activation",
    "mask_lambda",
    "refinement_blocks",
    "rtc_per_decoder_level",
    "use_fg_mask",
    "use_bg_mask",
    "use_mgfb",
];

const RUN_KEYS: &[&str] = &[
    "seed",
    "total_steps",
    "batch_size",
    "patch_size",
    "lr0",
    "lr_min",
    "beta1",
    "beta2",
    "weight_decay",
    "train_manifest",
    "eval_manifest",
    "out_dir",
    "checkpoint_interval",
    "rain_streak_count",
    "rain_length",
    "rain_angle_deg",
    "rain_width",
    "rain_intensity",
    "rain_blur_sigma",
];

fn list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("`{p}`: {e}")))
        .collect()
}

fn parse_levels(s: &str) -> Result<[usize; LEVELS], String> {
    let v: Vec<usize> = parse_list(s)?;
    v.try_into()
        .map_err(|v: Vec<usize>| format!("expected {LEVELS} entries, got {}", v.len()))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    match parse_list::<f64>(s)?[..] {
        [a, b] => Ok((a, b)),
        [a] => Ok((a, a)),
        _ => Err("expected `min,max`".into()),
    }
}

fn parse_scalar<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

fn opt_path(s: &str) -> Option<PathBuf> {
    (!s.is_empty()).then(|| PathBuf::from(s))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref()
        .map_or(String::new(), |p| p.display().to_string())
}

impl RunConfig {
    pub fn get(&self, key: &str) -> Option<String> {
        let m = &self.model;
        let r = &self.rain;
        Some(match key {
            "base_channels" => m.base_channels.to_string(),
            "blocks" => list(&m.blocks),
            "heads" => list(&m.heads),
            "mgfb_kernels" => list(&m.mgfb_kernels),
            "mgfb_expansion" => m.mgfb_expansion.to_string(),
            "mgfb_activated" => m.mgfb_activated.to_string(),
            "activation" => m.activation.name().to_string(),
            "mask_lambda" => m.mask_lambda.to_string(),
            "refinement_blocks" => m.refinement_blocks.to_string(),
            "rtc_per_decoder_level" => m.rtc_per_decoder_level.to_string(),
            "use_fg_mask" => m.use_fg_mask.to_string(),
            "use_bg_mask" => m.use_bg_mask.to_string(),
            "use_mgfb" => m.use_mgfb.to_string(),
            "seed" => self.seed.to_string(),
            "total_steps" => self.total_steps.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "lr0" => self.lr0.to_string(),
            "lr_min" => self.lr_min.to_string(),
            "beta1" => self.beta1.to_string(),
            "beta2" => self.beta2.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "train_manifest" => show_path(&self.train_manifest),
            "eval_manifest" => show_path(&self.eval_manifest),
            "out_dir" => self.out_dir.display().to_string(),
            "checkpoint_interval" => self.checkpoint_interval.to_string(),
            "rain_streak_count" => r.streak_count.to_string(),
            "rain_length" => list(&[r.length.0, r.length.1]),
            "rain_angle_deg" => list(&[r.angle_deg.0, r.angle_deg.1]),
            "rain_width" => r.width.to_string(),
            "rain_intensity" => list(&[r.intensity.0, r.intensity.1]),
            "rain_blur_sigma" => r.blur_sigma.to_string(),
            _ => return None,
        })
    }

    fn set(&mut self, key: &str, v: &str) -> Result<bool, String> {
        let m = &mut self.model;
        let r = &mut self.rain;
        match key {
            "base_channels" => m.base_channels = parse_scalar(v)?,
            "blocks" => m.blocks = parse_levels(v)?,
            "heads" => m.heads = parse_levels(v)?,
            "mgfb_kernels" => m.mgfb_kernels = parse_list(v)?,
            "mgfb_expansion" => m.mgfb_expansion = parse_scalar(v)?,
            "mgfb_activated" => m.mgfb_activated = parse_scalar(v)?,
            "activation" => m.activation = v.parse::<Activation>().map_err(|e| e.to_string())?,
            "mask_lambda" => m.mask_lambda = parse_scalar(v)?,
            "refinement_blocks" => m.refinement_blocks = parse_scalar(v)?,
            "rtc_per_decoder_level" => m.rtc_per_decoder_level = parse_scalar(v)?,
            "use_fg_mask" => m.use_fg_mask = parse_scalar(v)?,
            "use_bg_mask" => m.use_bg_mask = parse_scalar(v)?,
            "use_mgfb" => m.use_mgfb = parse_scalar(v)?,
            "seed" => self.seed = parse_scalar(v)?,
            "total_steps" => self.total_steps = parse_scalar(v)?,
            "batch_size" => self.batch_size = parse_scalar(v)?,
            "patch_size" => self.patch_size = parse_scalar(v)?,
            "lr0" => self.lr0 = parse_scalar(v)?,
            "lr_min" => self.lr_min = parse_scalar(v)?,
            "beta1" => self.beta1 = parse_scalar(v)?,
            "beta2" => self.beta2 = parse_scalar(v)?,
            "weight_decay" => self.weight_decay = parse_scalar(v)?,
            "train_manifest" => self.train_manifest = opt_path(v),
            "eval_manifest" => self.eval_manifest = opt_path(v),
            "out_dir" => self.out_dir = PathBuf::from(v),
            "checkpoint_interval" => self.checkpoint_interval = parse_scalar(v)?,
            "rain_streak_count" => r.streak_count = parse_scalar(v)?,
            "rain_length" => r.length = parse_range(v)?,
            "rain_angle_deg" => r.angle_deg = parse_range(v)?,
            "rain_width" => r.width = parse_scalar(v)?,
            "rain_intensity" => r.intensity = parse_range(v)?,
            "rain_blur_sigma" => r.blur_sigma = parse_scalar(v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn keys() -> impl Iterator<Item = &'static str> {
        MODEL_KEYS.iter().chain(RUN_KEYS).copied()
    }

    /// Parses and validates. Values may not contain `#`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("expected `key = value`, got `{content}`"),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.into(),
                });
            }
            match cfg.set(key, value) {
                Ok(true) => {}
                Ok(false) => {
                    return Err(ConfigError::UnknownKey {
                        line,
                        key: key.into(),
                    })
                }
                Err(msg) => {
                    return Err(ConfigError::Value {
                        line,
                        key: key.into(),
                        value: value.into(),
                        msg,
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rain
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.total_steps == 0 {
            return bad("total_steps must be ≥ 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if self.patch_size == 0 || !self.patch_size.is_multiple_of(8) {
            return bad(format!(
                "patch_size {} must be a positive multiple of 8",
                self.patch_size
            ));
        }
        if !(self.lr0 > 0.0 && self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return bad(format!(
                "need 0 ≤ lr_min ≤ lr0 and lr0 > 0, got {} and {}",
                self.lr_min, self.lr0
            ));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay {} must be ≥ 0", self.weight_decay));
        }
        Ok(())
    }

    /// Every key, one per line, in a fixed order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for key in Self::keys() {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("known key"));
        }
        out
    }

    /// Model keys whose values differ between `self` and `other`.
    pub fn model_differences(&self, other: &RunConfig) -> Vec<&'static str> {
        MODEL_KEYS
            .iter()
            .copied()
            .filter(|k| self.get(k) != other.get(k))
            .collect()
    }
}
