//! Region-masked transformer for single-image rain removal, built on a small
//! dense tensor library with reverse-mode differentiation.
//!
//! Module map:
//! - [`tensor`], [`graph`]: value type and the define-by-run tape.
//! - [`nn`]: convolution, layer norm, activations, parameters, AdamW, schedule.
//! - [`model`]: region masks, masked channel attention, mixed-scale gated
//!   feed-forward, the block/cascade structure and the full U-shaped network.
//! - [`data`]: image I/O, luma conversion, synthetic rain, patch sampling.
//! - [`metrics`]: PSNR and SSIM on the Y plane.
//! - [`oracles`]: slow reference implementations used for verification.

pub mod data;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod oracles;
pub mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use tensor::{Tensor, TensorError};
