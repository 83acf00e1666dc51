//! Index-level transcriptions of the network blocks.
//!
//! Feature maps are handled as `v[channel][row][col]` nested vectors.

#![allow(clippy::needless_range_loop)]

use super::{OracleError, Result};
use crate::model::ModelConfig;
use crate::nn::{Activation, ParamStore};
use crate::tensor::Tensor;

pub const MAX_CHANNELS: usize = 8;
pub const MAX_EXTENT: usize = 8;

const LN_EPS: f64 = 1e-6;
const L2_EPS: f64 = 1e-12;

type Field = Vec<Vec<Vec<f64>>>;

fn check_size(x: &Tensor) -> Result<(usize, usize, usize)> {
    let (c, h, w) = x.dims3()?;
    if c > MAX_CHANNELS || h > MAX_EXTENT || w > MAX_EXTENT {
        return Err(OracleError::TooLarge {
            c,
            h,
            w,
            max_c: MAX_CHANNELS,
            max_hw: MAX_EXTENT,
        });
    }
    Ok((c, h, w))
}

fn to_field(t: &Tensor) -> Result<Field> {
    let (c, h, w) = t.dims3()?;
    let d = t.data();
    Ok((0..c)
        .map(|ch| {
            (0..h)
                .map(|y| (0..w).map(|x| d[(ch * h + y) * w + x]).collect())
                .collect()
        })
        .collect())
}

fn from_field(f: &Field) -> Result<Tensor> {
    let (c, h, w) = (f.len(), f[0].len(), f[0][0].len());
    let data = f.iter().flatten().flatten().copied().collect();
    Ok(Tensor::new([c, h, w], data)?)
}

fn zeros(c: usize, h: usize, w: usize) -> Field {
    vec![vec![vec![0.0; w]; h]; c]
}

fn dims(f: &Field) -> (usize, usize, usize) {
    (f.len(), f[0].len(), f[0][0].len())
}

/// `out[o] = b[o] + Σ_i W[o][i] · x[i]` at every pixel.
fn pointwise(x: &Field, w: &Tensor, b: Option<&Tensor>) -> Result<Field> {
    let (c, h, wd) = dims(x);
    let o = w.shape()[0];
    if w.numel() != o * c {
        return Err(OracleError::Shape(format!(
            "1×1 weight {:?} for {c} inputs",
            w.shape()
        )));
    }
    let mut out = zeros(o, h, wd);
    for oc in 0..o {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b.map_or(0.0, |b| b.data()[oc]);
                for ic in 0..c {
                    s += w.data()[oc * c + ic] * x[ic][y][xx];
                }
                out[oc][y][xx] = s;
            }
        }
    }
    Ok(out)
}

/// Per-channel `k×k` filter, zero outside the image, centered taps.
fn depthwise(x: &Field, w: &Tensor, b: &Tensor) -> Result<Field> {
    let (c, h, wd) = dims(x);
    let k = w.shape()[2];
    if w.shape() != [c, 1, k, k] {
        return Err(OracleError::Shape(format!(
            "depthwise weight {:?} for {c} channels",
            w.shape()
        )));
    }
    let r = (k / 2) as isize;
    let mut out = zeros(c, h, wd);
    for ch in 0..c {
        for y in 0..h as isize {
            for xx in 0..wd as isize {
                let mut s = b.data()[ch];
                for u in -r..=r {
                    for v in -r..=r {
                        let (yy, xv) = (y + u, xx + v);
                        if yy < 0 || xv < 0 || yy >= h as isize || xv >= wd as isize {
                            continue;
                        }
                        let tap = w.data()[(ch * k + (u + r) as usize) * k + (v + r) as usize];
                        s += tap * x[ch][yy as usize][xv as usize];
                    }
                }
                out[ch][y as usize][xx as usize] = s;
            }
        }
    }
    Ok(out)
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn activate(act: Activation, x: f64) -> f64 {
    match act {
        Activation::Gelu => gelu(x),
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
    }
}

fn fetch(store: &ParamStore, path: String) -> Result<Tensor> {
    store
        .get(&path)
        .cloned()
        .map_err(|_| OracleError::MissingWeight(path))
}

/// Per-pixel normalization over channels with learned scale and shift.
pub fn layer_norm_oracle(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
    let f = to_field(x)?;
    let (c, h, w) = dims(&f);
    let mut out = zeros(c, h, w);
    for y in 0..h {
        for xx in 0..w {
            let mean = (0..c).map(|ch| f[ch][y][xx]).sum::<f64>() / c as f64;
            let var = (0..c).map(|ch| (f[ch][y][xx] - mean).powi(2)).sum::<f64>() / c as f64;
            let sd = (var + LN_EPS).sqrt();
            for ch in 0..c {
                out[ch][y][xx] = (f[ch][y][xx] - mean) / sd * gamma.data()[ch] + beta.data()[ch];
            }
        }
    }
    from_field(&out)
}

#[derive(Clone, Debug)]
pub struct RmaWeights {
    /// `3C×C×1×1`, no bias.
    pub qkv: Tensor,
    pub qkv_dw: Tensor,
    pub qkv_dw_bias: Tensor,
    /// One value per head.
    pub temperature: Tensor,
    pub proj: Tensor,
    pub proj_bias: Tensor,
}

impl RmaWeights {
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Self {
            qkv: fetch(store, format!("{prefix}/qkv/weight"))?,
            qkv_dw: fetch(store, format!("{prefix}/qkv_dw/weight"))?,
            qkv_dw_bias: fetch(store, format!("{prefix}/qkv_dw/bias"))?,
            temperature: fetch(store, format!("{prefix}/temperature"))?,
            proj: fetch(store, format!("{prefix}/proj/weight"))?,
            proj_bias: fetch(store, format!("{prefix}/proj/bias"))?,
        })
    }
}

/// Binary `1×H×W` map and its per-channel gain.
#[derive(Clone, Debug)]
pub struct OracleMask {
    pub binary: Tensor,
    pub gain: Vec<f64>,
}

/// Masked transposed attention. With `mask = None` no masking is applied.
pub fn rma_scalar_oracle(
    x: &Tensor,
    wts: &RmaWeights,
    mask: Option<&OracleMask>,
    heads: usize,
) -> Result<Tensor> {
    let (c, h, w) = check_size(x)?;
    if heads == 0 || c % heads != 0 {
        return Err(OracleError::Shape(format!("{c} channels, {heads} heads")));
    }
    let f = to_field(x)?;
    let t = depthwise(
        &pointwise(&f, &wts.qkv, None)?,
        &wts.qkv_dw,
        &wts.qkv_dw_bias,
    )?;
    let n = h * w;
    let flat = |ch: usize| -> Vec<f64> { t[ch].iter().flatten().copied().collect() };
    let mut q: Vec<Vec<f64>> = (0..c).map(flat).collect();
    let mut k: Vec<Vec<f64>> = (c..2 * c).map(flat).collect();
    let v: Vec<Vec<f64>> = (2 * c..3 * c).map(flat).collect();

    if let Some(m) = mask {
        if m.binary.shape() != [1, h, w] || m.gain.len() != c {
            return Err(OracleError::Shape("mask does not match features".into()));
        }
        for ch in 0..c {
            for p in 0..n {
                q[ch][p] = q[ch][p] * m.binary.data()[p] * m.gain[ch];
                k[ch][p] = k[ch][p] * m.binary.data()[p] * m.gain[ch];
            }
        }
    }

    let unit = |row: &Vec<f64>| -> Vec<f64> {
        let norm = row.iter().map(|a| a * a).sum::<f64>().sqrt();
        let norm = if norm > L2_EPS { norm } else { L2_EPS };
        row.iter().map(|a| a / norm).collect()
    };
    let d = c / heads;
    let mut merged = vec![vec![0.0; n]; c];
    for head in 0..heads {
        let rows = head * d..(head + 1) * d;
        let qh: Vec<Vec<f64>> = rows.clone().map(|i| unit(&q[i])).collect();
        let kh: Vec<Vec<f64>> = rows.clone().map(|i| unit(&k[i])).collect();
        let alpha = wts.temperature.data()[head];
        for i in 0..d {
            let scores: Vec<f64> = (0..d)
                .map(|j| alpha * (0..n).map(|p| qh[i][p] * kh[j][p]).sum::<f64>())
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for p in 0..n {
                merged[head * d + i][p] = (0..d).map(|j| e[j] / z * v[head * d + j][p]).sum();
            }
        }
    }
    let merged: Field = merged
        .into_iter()
        .map(|row| row.chunks(w).map(<[f64]>::to_vec).collect())
        .collect();
    from_field(&pointwise(&merged, &wts.proj, Some(&wts.proj_bias))?)
}

#[derive(Clone, Debug)]
pub struct MgfbWeights {
    pub expand: Tensor,
    pub expand_bias: Tensor,
    pub expand_dw: Tensor,
    pub expand_dw_bias: Tensor,
    /// `(weight, bias)` of each branch filter; kernel size read from the weight.
    pub branches: Vec<(Tensor, Tensor)>,
    pub out: Tensor,
    pub out_bias: Tensor,
}

impl MgfbWeights {
    pub fn from_store(store: &ParamStore, prefix: &str, branches: usize) -> Result<Self> {
        Ok(Self {
            expand: fetch(store, format!("{prefix}/expand/weight"))?,
            expand_bias: fetch(store, format!("{prefix}/expand/bias"))?,
            expand_dw: fetch(store, format!("{prefix}/expand_dw/weight"))?,
            expand_dw_bias: fetch(store, format!("{prefix}/expand_dw/bias"))?,
            branches: (0..branches)
                .map(|i| {
                    Ok((
                        fetch(store, format!("{prefix}/branch{i}/weight"))?,
                        fetch(store, format!("{prefix}/branch{i}/bias"))?,
                    ))
                })
                .collect::<Result<_>>()?,
            out: fetch(store, format!("{prefix}/out/weight"))?,
            out_bias: fetch(store, format!("{prefix}/out/bias"))?,
        })
    }
}

/// Expand, split into branches, filter each with its own kernel plus a
/// skip, activate the first `activated` branches, multiply, project back.
pub fn mgfb_scalar_oracle(
    x: &Tensor,
    wts: &MgfbWeights,
    activated: usize,
    act: Activation,
) -> Result<Tensor> {
    check_size(x)?;
    let f = to_field(x)?;
    let m = pointwise(&f, &wts.expand, Some(&wts.expand_bias))?;
    let m = depthwise(&m, &wts.expand_dw, &wts.expand_dw_bias)?;
    let (hidden, h, w) = dims(&m);
    let n = wts.branches.len();
    if n == 0 || hidden % n != 0 {
        return Err(OracleError::Shape(format!(
            "{hidden} channels into {n} branches"
        )));
    }
    let g = hidden / n;
    let mut prod = vec![vec![vec![1.0; w]; h]; g];
    for (i, (bw, bb)) in wts.branches.iter().enumerate() {
        let part: Field = m[i * g..(i + 1) * g].to_vec();
        let filtered = depthwise(&part, bw, bb)?;
        for ch in 0..g {
            for y in 0..h {
                for xx in 0..w {
                    let mut b = filtered[ch][y][xx] + part[ch][y][xx];
                    if i < activated {
                        b = activate(act, b);
                    }
                    prod[ch][y][xx] *= b;
                }
            }
        }
    }
    from_field(&pointwise(&prod, &wts.out, Some(&wts.out_bias))?)
}

#[derive(Clone, Debug)]
pub struct RtbWeights {
    pub norm1: (Tensor, Tensor),
    pub rma: RmaWeights,
    pub norm2: (Tensor, Tensor),
    /// `None` when the feed-forward half is switched off.
    pub mgfb: Option<MgfbWeights>,
}

impl RtbWeights {
    pub fn from_store(store: &ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let norm = |name: &str| -> Result<(Tensor, Tensor)> {
            Ok((
                fetch(store, format!("{prefix}/{name}/gamma"))?,
                fetch(store, format!("{prefix}/{name}/beta"))?,
            ))
        };
        Ok(Self {
            norm1: norm("norm1")?,
            rma: RmaWeights::from_store(store, &format!("{prefix}/rma"))?,
            norm2: if cfg.use_mgfb {
                norm("norm2")?
            } else {
                (Tensor::scalar(1.0), Tensor::scalar(0.0))
            },
            mgfb: if cfg.use_mgfb {
                Some(MgfbWeights::from_store(
                    store,
                    &format!("{prefix}/mgfb"),
                    cfg.mgfb_kernels.len(),
                )?)
            } else {
                None
            },
        })
    }
}

fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(Tensor::new(
        a.shape(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )?)
}

/// `y = x + RMA(LN(x))`, then `y + MGFB(LN(y))` when the MGFB is present.
pub fn rtb_scalar_oracle(
    x: &Tensor,
    wts: &RtbWeights,
    mask: Option<&OracleMask>,
    heads: usize,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let n1 = layer_norm_oracle(x, &wts.norm1.0, &wts.norm1.1)?;
    let y = add(x, &rma_scalar_oracle(&n1, &wts.rma, mask, heads)?)?;
    match &wts.mgfb {
        None => Ok(y),
        Some(mg) => {
            let n2 = layer_norm_oracle(&y, &wts.norm2.0, &wts.norm2.1)?;
            add(
                &y,
                &mgfb_scalar_oracle(&n2, mg, cfg.mgfb_activated, cfg.activation)?,
            )
        }
    }
}

/// Rain and unaffected binary maps from the channel-mean absolute
/// difference thresholded at `mean + λ·std`.
pub fn mask_oracle(reference: &Tensor, restored: &Tensor, lambda: f64) -> Result<(Tensor, Tensor)> {
    let (a, b) = (to_field(reference)?, to_field(restored)?);
    let (c, h, w) = dims(&a);
    if dims(&b) != (c, h, w) {
        return Err(OracleError::Shape("mask inputs differ in shape".into()));
    }
    let mut d = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            d[y * w + x] = (0..c)
                .map(|ch| (a[ch][y][x] - b[ch][y][x]).abs())
                .sum::<f64>()
                / c as f64;
        }
    }
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let tau = mean + lambda * sd;
    let r: Vec<f64> = d.iter().map(|&v| if v > tau { 1.0 } else { 0.0 }).collect();
    let u: Vec<f64> = r.iter().map(|v| 1.0 - v).collect();
    Ok((Tensor::new([1, h, w], r)?, Tensor::new([1, h, w], u)?))
}

#[derive(Clone, Debug)]
pub struct RtcWeights {
    pub gain_r: Option<(Tensor, Tensor)>,
    pub gain_u: Option<(Tensor, Tensor)>,
    pub rtb_u: RtbWeights,
    pub rtb_r: RtbWeights,
    pub fuse: (Tensor, Tensor),
    pub rtb_full: RtbWeights,
}

impl RtcWeights {
    pub fn from_store(store: &ParamStore, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let pair = |name: &str| -> Result<(Tensor, Tensor)> {
            Ok((
                fetch(store, format!("{prefix}/{name}/weight"))?,
                fetch(store, format!("{prefix}/{name}/bias"))?,
            ))
        };
        Ok(Self {
            gain_r: if cfg.use_fg_mask {
                Some(pair("gain_r")?)
            } else {
                None
            },
            gain_u: if cfg.use_bg_mask {
                Some(pair("gain_u")?)
            } else {
                None
            },
            rtb_u: RtbWeights::from_store(store, &format!("{prefix}/rtb_u"), cfg)?,
            rtb_r: RtbWeights::from_store(store, &format!("{prefix}/rtb_r"), cfg)?,
            fuse: pair("fuse")?,
            rtb_full: RtbWeights::from_store(store, &format!("{prefix}/rtb_full"), cfg)?,
        })
    }
}

/// Gain of a 1×1 convolution applied to an all-ones map: row sums plus bias.
fn gain_of((w, b): &(Tensor, Tensor)) -> Vec<f64> {
    let o = b.numel();
    let c = w.numel() / o;
    (0..o)
        .map(|oc| b.data()[oc] + (0..c).map(|ic| w.data()[oc * c + ic]).sum::<f64>())
        .collect()
}

/// Unaffected-masked block, rain-masked block and the input concatenated,
/// fused by a 1×1 convolution, then an unmasked block.
pub fn rtc_scalar_oracle(
    x: &Tensor,
    reference: &Tensor,
    wts: &RtcWeights,
    heads: usize,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    let (c, h, w) = check_size(x)?;
    let (r_bin, u_bin) = mask_oracle(reference, x, cfg.mask_lambda)?;
    let full = OracleMask {
        binary: Tensor::ones([1, h, w])?,
        gain: vec![1.0; c],
    };
    let build = |gain: &Option<(Tensor, Tensor)>, bin: Tensor| match gain {
        Some(gw) => OracleMask {
            binary: bin,
            gain: gain_of(gw),
        },
        None => full.clone(),
    };
    let um = build(&wts.gain_u, u_bin);
    let rm = build(&wts.gain_r, r_bin);
    let u = rtb_scalar_oracle(x, &wts.rtb_u, Some(&um), heads, cfg)?;
    let r = rtb_scalar_oracle(x, &wts.rtb_r, Some(&rm), heads, cfg)?;
    let mut cat = to_field(&u)?;
    cat.extend(to_field(&r)?);
    cat.extend(to_field(x)?);
    let fused = from_field(&pointwise(&cat, &wts.fuse.0, Some(&wts.fuse.1))?)?;
    rtb_scalar_oracle(&fused, &wts.rtb_full, None, heads, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depthwise_identity_tap() {
        let x = Tensor::from_fn([2, 3, 3], |i| i as f64).unwrap();
        let mut k = vec![0.0; 2 * 9];
        k[4] = 1.0;
        k[13] = 1.0;
        let w = Tensor::new([2, 1, 3, 3], k).unwrap();
        let b = Tensor::zeros([2]).unwrap();
        let y = from_field(&depthwise(&to_field(&x).unwrap(), &w, &b).unwrap()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn size_limit_enforced() {
        let x = Tensor::zeros([MAX_CHANNELS + 1, 2, 2]).unwrap();
        assert!(matches!(check_size(&x), Err(OracleError::TooLarge { .. })));
    }

    #[test]
    fn mask_oracle_hand_case() {
        let a = Tensor::new([1, 2, 2], vec![4.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::zeros([1, 2, 2]).unwrap();
        let (r, u) = mask_oracle(&a, &b, 0.0).unwrap();
        assert_eq!(r.data(), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(u.data(), &[0.0, 1.0, 1.0, 1.0]);
    }
}
