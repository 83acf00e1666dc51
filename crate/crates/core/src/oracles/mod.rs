//! Slow, literal reference implementations for tests.
//!
//! Nothing here calls into the convolution, normalization or tape kernels
//! it is meant to check: convolutions are six nested loops, attention is
//! written out index by index, gradients come from central differences.
//! [`Tensor`](crate::Tensor) is used only as a shape-plus-buffer carrier.

mod blocks;
mod conv;
mod fixture;
mod gradcheck;

pub use blocks::{
    gelu, layer_norm_oracle, mask_oracle, mgfb_scalar_oracle, rma_scalar_oracle, rtb_scalar_oracle,
    rtc_scalar_oracle, MgfbWeights, OracleMask, RmaWeights, RtbWeights, RtcWeights, MAX_CHANNELS,
    MAX_EXTENT,
};
pub use conv::conv2d_naive;
pub use fixture::{format_fixture, parse_fixture, read_fixture, write_fixture};
pub use gradcheck::{
    grad_check, relative_error, CoordCheck, Differentiable, GradCheckOptions, GradCheckReport,
    ModelLoss, TapeFn,
};

use thiserror::Error;

use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{0}")]
    Shape(String),
    #[error("oracle limited to {max_c} channels and {max_hw}×{max_hw}, got {c}×{h}×{w}")]
    TooLarge {
        c: usize,
        h: usize,
        w: usize,
        max_c: usize,
        max_hw: usize,
    },
    #[error("function must return a single value, got shape {0:?}")]
    NonScalar(Vec<usize>),
    #[error("missing weight `{0}`")]
    MissingWeight(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("fixture: {0}")]
    Fixture(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error("function evaluation failed: {0}")]
    Eval(String),
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;
