//! Images, luma conversion, synthetic rain, patch sampling and manifests.
//!
//! Randomized functions take an explicit seed (or an RNG for callers that
//! manage their own stream) and are pure functions of their arguments.

mod color;
mod image;
mod manifest;
mod patch;
mod rain;
mod scene;

pub use self::color::{rgb_to_y, Plane};
pub use self::image::{
    image_to_tensor, load_image, save_image, tensor_to_image, Image, ImageFormatKind,
};
pub use self::manifest::{parse_manifest, read_manifest, write_manifest, PairPaths};
pub use self::patch::{patch_origin, sample_patch, sample_patch_with, Patch};
pub use self::rain::{rain_layer, synth_rain, synth_rain_with_layer, RainParams};
pub use self::scene::clean_scene;

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: cannot decode image: {msg}")]
    Decode { path: PathBuf, msg: String },
    #[error("{path}: unsupported pixel format {format} (only 8-bit samples are accepted)")]
    UnsupportedDepth { path: PathBuf, format: String },
    #[error("{path}: cannot encode image: {msg}")]
    Encode { path: PathBuf, msg: String },
    #[error("{path}: unknown image extension (use .png or .ppm)")]
    UnknownFormat { path: PathBuf },
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid rain parameters: {0}")]
    InvalidRain(String),
    #[error("patch {size}×{size} does not fit a {width}×{height} image")]
    PatchTooLarge {
        size: usize,
        width: usize,
        height: usize,
    },
    #[error("paired images differ in size: {a:?} vs {b:?}")]
    PairSize {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;
