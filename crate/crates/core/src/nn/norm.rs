//! Layer normalization across the channel axis of a `C×H×W` map.
//!
//! Every spatial location is normalized independently over its `C` values,
//! then scaled by `gamma[c]` and shifted by `beta[c]`.

pub const LN_EPS: f64 = 1e-6;

/// Per-pixel mean and reciprocal standard deviation.
fn pixel_stats(x: &[f64], c: usize, plane: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; plane];
    for ch in x.chunks_exact(plane) {
        for (m, v) in mean.iter_mut().zip(ch) {
            *m += v;
        }
    }
    let inv_c = 1.0 / c as f64;
    mean.iter_mut().for_each(|m| *m *= inv_c);
    let mut var = vec![0.0; plane];
    for ch in x.chunks_exact(plane) {
        for ((s, v), m) in var.iter_mut().zip(ch).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let rstd = var
        .into_iter()
        .map(|s| 1.0 / (s * inv_c + LN_EPS).sqrt())
        .collect();
    (mean, rstd)
}

pub fn forward(x: &[f64], c: usize, plane: usize, gamma: &[f64], beta: &[f64]) -> Vec<f64> {
    let (mean, rstd) = pixel_stats(x, c, plane);
    let mut out = vec![0.0; x.len()];
    for (ch, (dst, src)) in out
        .chunks_exact_mut(plane)
        .zip(x.chunks_exact(plane))
        .enumerate()
    {
        let (g, b) = (gamma[ch], beta[ch]);
        for i in 0..plane {
            dst[i] = (src[i] - mean[i]) * rstd[i] * g + b;
        }
    }
    out
}

pub struct NormGrads {
    pub input: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub fn backward(x: &[f64], c: usize, plane: usize, gamma: &[f64], grad_out: &[f64]) -> NormGrads {
    let (mean, rstd) = pixel_stats(x, c, plane);
    let (mean_ref, rstd_ref) = (&mean, &rstd);
    let xhat: Vec<f64> = x
        .chunks_exact(plane)
        .flat_map(|ch| (0..plane).map(move |i| (ch[i] - mean_ref[i]) * rstd_ref[i]))
        .collect();

    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    // per-pixel sums of dxhat and dxhat·xhat
    let mut sum_d = vec![0.0; plane];
    let mut sum_dx = vec![0.0; plane];
    for ch in 0..c {
        let g = &grad_out[ch * plane..][..plane];
        let xh = &xhat[ch * plane..][..plane];
        for i in 0..plane {
            dgamma[ch] += g[i] * xh[i];
            dbeta[ch] += g[i];
            let d = g[i] * gamma[ch];
            sum_d[i] += d;
            sum_dx[i] += d * xh[i];
        }
    }
    let inv_c = 1.0 / c as f64;
    let mut dx = vec![0.0; x.len()];
    for ch in 0..c {
        let g = &grad_out[ch * plane..][..plane];
        let xh = &xhat[ch * plane..][..plane];
        let dst = &mut dx[ch * plane..][..plane];
        for i in 0..plane {
            let d = g[i] * gamma[ch];
            dst[i] = rstd[i] * (d - inv_c * sum_d[i] - xh[i] * inv_c * sum_dx[i]);
        }
    }
    NormGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_channel_pixel_normalizes_to_unit_magnitude() {
        let y = forward(&[1.0, 3.0], 2, 1, &[1.0, 1.0], &[0.0, 0.0]);
        let expect = 1.0 / (1.0f64 + LN_EPS).sqrt();
        assert!((y[0] + expect).abs() < 1e-15);
        assert!((y[1] - expect).abs() < 1e-15);
        assert!((y[1] - 0.9999995).abs() < 1e-12);
    }

    #[test]
    fn constant_pixel_maps_to_zero() {
        let y = forward(&[4.0, 4.0, 4.0], 3, 1, &[1.0; 3], &[0.0; 3]);
        assert_eq!(y, vec![0.0; 3]);
    }

    #[test]
    fn zero_gamma_yields_beta() {
        let x = [0.3, -1.2, 2.0, 0.7, 5.0, -3.0];
        let y = forward(&x, 3, 2, &[0.0; 3], &[0.5, -0.25, 2.0]);
        assert_eq!(y, vec![0.5, 0.5, -0.25, -0.25, 2.0, 2.0]);
    }
}
