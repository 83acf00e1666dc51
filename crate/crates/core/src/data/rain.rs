//! Additive streak model: rasterize line segments into an intensity layer,
//! blur it, add it to every channel and clamp.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Image, Plane, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct RainParams {
    pub streak_count: usize,
    /// Streak length in pixels along its axis.
    pub length: (f64, f64),
    /// Degrees from vertical, positive leaning right.
    pub angle_deg: (f64, f64),
    /// Streak thickness in pixels (rounded, at least 1).
    pub width: f64,
    /// Peak added brightness as a fraction of full scale.
    pub intensity: (f64, f64),
    /// Gaussian blur applied to the streak layer; 0 disables it.
    pub blur_sigma: f64,
}

impl Default for RainParams {
    fn default() -> Self {
        Self {
            streak_count: 20,
            length: (6.0, 14.0),
            angle_deg: (-15.0, 15.0),
            width: 1.0,
            intensity: (0.35, 0.75),
            blur_sigma: 0.5,
        }
    }
}

impl RainParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::InvalidRain(m));
        for (name, (lo, hi)) in [
            ("length", self.length),
            ("angle_deg", self.angle_deg),
            ("intensity", self.intensity),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return bad(format!(
                    "{name} range ({lo}, {hi}) must be finite and ordered"
                ));
            }
        }
        if self.length.0 < 1.0 {
            return bad(format!(
                "length must be at least 1 px, got {}",
                self.length.0
            ));
        }
        if self.intensity.0 < 0.0 || self.intensity.1 > 1.0 {
            return bad(format!("intensity {:?} must lie in [0, 1]", self.intensity));
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return bad(format!("width must be positive, got {}", self.width));
        }
        if !(self.blur_sigma.is_finite() && self.blur_sigma >= 0.0) {
            return bad(format!("blur_sigma must be ≥ 0, got {}", self.blur_sigma));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Center coordinate keeping a segment of extent `span` inside `[0, n-1]`
/// when it fits.
fn center(rng: &mut ChaCha8Rng, span: f64, n: usize) -> f64 {
    let max = (n - 1) as f64;
    let half = span.abs() / 2.0;
    if 2.0 * half <= max {
        uniform(rng, (half, max - half))
    } else {
        uniform(rng, (0.0, max))
    }
}

fn rasterize(width: usize, height: usize, p: &RainParams, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut layer = vec![0.0f64; width * height];
    let thickness = p.width.round().max(1.0) as usize;
    for _ in 0..p.streak_count {
        let len = uniform(rng, p.length);
        let theta = uniform(rng, p.angle_deg).to_radians();
        let a = uniform(rng, p.intensity);
        let (dx, dy) = ((len - 1.0) * theta.sin(), (len - 1.0) * theta.cos());
        let cx = center(rng, dx, width);
        let cy = center(rng, dy, height);
        let (px, py) = (theta.cos(), -theta.sin());
        let steps = (2.0 * (len - 1.0)).ceil() as usize + 1;
        for s in 0..steps {
            let t = if steps == 1 {
                0.0
            } else {
                s as f64 / (steps - 1) as f64 - 0.5
            };
            for k in 0..thickness {
                let o = k as f64 - (thickness - 1) as f64 / 2.0;
                let x = (cx + t * dx + o * px).round();
                let y = (cy + t * dy + o * py).round();
                if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
                    continue;
                }
                let i = y as usize * width + x as usize;
                layer[i] = layer[i].max(a);
            }
        }
    }
    layer
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with edge clamping.
fn blur(data: &[f64], width: usize, height: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return data.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * data[y * width + clamp(x as i64 + j as i64 - r, width)])
                .sum();
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            out[y * width + x] = k
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[clamp(y as i64 + j as i64 - r, height) * width + x])
                .sum();
        }
    }
    out
}

/// Additive streak intensity in `[0, 1]` for a `width×height` frame.
pub fn rain_layer(width: usize, height: usize, p: &RainParams, seed: u64) -> Result<Plane> {
    p.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = rasterize(width, height, p, &mut rng);
    Ok(Plane::new(
        width,
        height,
        blur(&raw, width, height, p.blur_sigma),
    ))
}

/// Rainy counterpart of `clean`, plus the streak layer that produced it.
pub fn synth_rain_with_layer(clean: &Image, p: &RainParams, seed: u64) -> Result<(Image, Plane)> {
    let layer = rain_layer(clean.width(), clean.height(), p, seed)?;
    let data = clean
        .data()
        .chunks_exact(3)
        .zip(&layer.data)
        .flat_map(|(px, &a)| {
            let add = (a * 255.0).round() as u16;
            px.iter().map(move |&v| (u16::from(v) + add).min(255) as u8)
        })
        .collect();
    Ok((Image::new(clean.width(), clean.height(), data)?, layer))
}

pub fn synth_rain(clean: &Image, p: &RainParams, seed: u64) -> Result<Image> {
    synth_rain_with_layer(clean, p, seed).map(|(img, _)| img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(1.2);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k.len(), 9);
        assert_eq!(k[0], k[8]);
    }

    #[test]
    fn rejects_unordered_ranges() {
        let p = RainParams {
            length: (5.0, 2.0),
            ..RainParams::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn blur_preserves_constant_field() {
        let out = blur(&[0.25; 20], 5, 4, 1.0);
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }
}
