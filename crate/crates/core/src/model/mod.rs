//! The deraining network.
//!
//! Data flow at a glance: a 3×3 convolution produces the shallow feature
//! `I`; a four-level encoder of full-mask blocks halves the resolution and
//! doubles the channels three times; each decoder level upsamples, merges the
//! skip connection and runs region cascades whose masks come from comparing
//! the (downsampled) shallow feature with the cascade input; a refinement
//! block and a 3×3 convolution produce a residual added to the input image.

mod config;
mod ctx;
mod layout;
pub mod mask;
pub mod mgfb;
mod net;
pub mod rma;
pub mod rtb;
pub mod rtc;

pub use config::{ConfigError, ModelConfig, LEVELS};
pub use ctx::{Ctx, MaskRecord};
pub use layout::{init_params, param_count, param_layout, rtb_layout, rtc_layout};
pub use mask::{MaskKind, RegionMask};
pub use net::{
    crop, forward, l1_loss, pad_to_multiple, regformer_forward, regformer_forward_traced,
    FeatureCache, SIZE_MULTIPLE,
};

use thiserror::Error;

use crate::nn::ParamError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Param(#[from] ParamError),
    #[error("parameter `{path}` has shape {found:?}, expected {expected:?}")]
    ParamShape {
        path: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("mask is {mask:?} but the feature map is {h}×{w}")]
    MaskSize {
        mask: Vec<usize>,
        h: usize,
        w: usize,
    },
    #[error("{0}")]
    Shape(String),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;
