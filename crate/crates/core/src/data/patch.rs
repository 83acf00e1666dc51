use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Image, Result};

/// Top-left corner and side length of a square crop.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Patch {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// Uniform top-left corner for a `size×size` window in a `width×height` frame.
pub fn patch_origin<R: Rng>(
    width: usize,
    height: usize,
    size: usize,
    rng: &mut R,
) -> Result<Patch> {
    if size == 0 || size > width || size > height {
        return Err(DataError::PatchTooLarge {
            size,
            width,
            height,
        });
    }
    let x = rng.gen_range(0..=width - size);
    let y = rng.gen_range(0..=height - size);
    Ok(Patch { x, y, size })
}

/// Crops the same window from both images of a pair.
pub fn sample_patch_with<R: Rng>(
    clean: &Image,
    rainy: &Image,
    size: usize,
    rng: &mut R,
) -> Result<(Image, Image, Patch)> {
    let dims = |i: &Image| (i.width(), i.height());
    if dims(clean) != dims(rainy) {
        return Err(DataError::PairSize {
            a: dims(clean),
            b: dims(rainy),
        });
    }
    let p = patch_origin(clean.width(), clean.height(), size, rng)?;
    Ok((
        clean.crop(p.x, p.y, size, size)?,
        rainy.crop(p.x, p.y, size, size)?,
        p,
    ))
}

pub fn sample_patch(
    clean: &Image,
    rainy: &Image,
    size: usize,
    seed: u64,
) -> Result<(Image, Image)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_patch_with(clean, rainy, size, &mut rng).map(|(c, r, _)| (c, r))
}
