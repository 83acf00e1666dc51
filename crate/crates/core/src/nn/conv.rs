//! Grouped 2-D cross-correlation with zero padding.
//!
//! Weights are laid out `(out, in / groups, k, k)`. The `k == 1`, stride 1,
//! no-padding case is routed through a flat channel-mixing loop; everything
//! else walks output rows and accumulates shifted input rows.

use crate::tensor::{Result, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub has_bias: bool,
}

impl ConvSpec {
    /// Dense "same" convolution with bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
            padding: kernel / 2,
            groups: 1,
            has_bias: true,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    /// One filter per channel.
    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self {
            groups: channels,
            ..Self::new(channels, channels, kernel)
        }
    }

    pub fn without_bias(self) -> Self {
        Self {
            has_bias: false,
            ..self
        }
    }

    pub fn in_per_group(&self) -> usize {
        self.in_channels / self.groups
    }

    pub fn out_per_group(&self) -> usize {
        self.out_channels / self.groups
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_per_group(),
            self.kernel,
            self.kernel,
        ]
    }

    pub fn fan_in(&self) -> usize {
        self.in_per_group() * self.kernel * self.kernel
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(TensorError::Invalid { op: "conv2d", msg });
        if self.groups == 0 || self.stride == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!("degenerate spec {self:?}"));
        }
        if !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return bad(format!(
                "channels {}→{} not divisible by groups {}",
                self.in_channels, self.out_channels, self.groups
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return bad(format!("kernel {} must be odd", self.kernel));
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (hp, wp) = (h + 2 * self.padding, w + 2 * self.padding);
        if hp < self.kernel || wp < self.kernel {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("{h}×{w} input too small for kernel {}", self.kernel),
            });
        }
        Ok((
            (hp - self.kernel) / self.stride + 1,
            (wp - self.kernel) / self.stride + 1,
        ))
    }

    fn is_flat_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    /// Range of output columns whose tap `kx` lands inside a row of width `w`.
    fn col_range(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.padding as isize);
        let kx = kx as isize;
        let lo = (p - kx).max(0);
        let lo = (lo + s - 1) / s;
        let hi = (w as isize - 1 + p - kx).div_euclid(s) + 1;
        let hi = hi.clamp(0, ow as isize);
        (lo.min(hi) as usize, hi as usize)
    }

    fn input_row(&self, oy: usize, ky: usize, h: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
        (0..h as isize).contains(&iy).then_some(iy as usize)
    }
}

/// Checks operand shapes and returns the output extents.
pub fn check_operands(
    spec: &ConvSpec,
    x_shape: &[usize],
    w_shape: &[usize],
    b_shape: Option<&[usize]>,
) -> Result<(usize, usize)> {
    spec.validate()?;
    let [c, h, w] = x_shape[..] else {
        return Err(TensorError::Invalid {
            op: "conv2d",
            msg: format!("input must be C×H×W, got {x_shape:?}"),
        });
    };
    if c != spec.in_channels {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d input channels",
            lhs: x_shape.to_vec(),
            rhs: vec![spec.in_channels],
        });
    }
    if w_shape != spec.weight_shape() {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d weight",
            lhs: w_shape.to_vec(),
            rhs: spec.weight_shape().to_vec(),
        });
    }
    match (spec.has_bias, b_shape) {
        (true, Some(b)) if b.iter().product::<usize>() == spec.out_channels => {}
        (false, None) => {}
        (_, b) => {
            return Err(TensorError::Invalid {
                op: "conv2d",
                msg: format!("bias {b:?} inconsistent with has_bias={}", spec.has_bias),
            })
        }
    }
    spec.output_hw(h, w)
}

/// Forward pass. `x` is `C×H×W`; returns the `C'×H'×W'` output buffer.
pub fn forward(
    spec: &ConvSpec,
    x: &[f64],
    (h, w): (usize, usize),
    weight: &[f64],
    bias: Option<&[f64]>,
) -> Vec<f64> {
    let (oh, ow) = spec.output_hw(h, w).expect("operands checked by caller");
    let (ipg, opg, k) = (spec.in_per_group(), spec.out_per_group(), spec.kernel);
    let (in_plane, out_plane) = (h * w, oh * ow);
    let mut out = vec![0.0; spec.out_channels * out_plane];

    for (oc, dst) in out.chunks_exact_mut(out_plane).enumerate() {
        if let Some(b) = bias {
            dst.fill(b[oc]);
        }
        let group = oc / opg;
        for icg in 0..ipg {
            let src = &x[(group * ipg + icg) * in_plane..][..in_plane];
            let taps = &weight[(oc * ipg + icg) * k * k..][..k * k];
            if spec.is_flat_pointwise() {
                let wv = taps[0];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wv * s;
                }
                continue;
            }
            for ky in 0..k {
                for kx in 0..k {
                    let wv = taps[ky * k + kx];
                    let (lo, hi) = spec.col_range(kx, w, ow);
                    if lo == hi {
                        continue;
                    }
                    for oy in 0..oh {
                        let Some(iy) = spec.input_row(oy, ky, h) else {
                            continue;
                        };
                        let row = &mut dst[oy * ow..][lo..hi];
                        let ix0 = lo * spec.stride + kx - spec.padding;
                        if spec.stride == 1 {
                            let srow = &src[iy * w + ix0..][..hi - lo];
                            for (d, s) in row.iter_mut().zip(srow) {
                                *d += wv * s;
                            }
                        } else {
                            for (j, d) in row.iter_mut().enumerate() {
                                *d += wv * src[iy * w + ix0 + j * spec.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub input: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

/// Vector-Jacobian product of [`forward`] given the output gradient.
pub fn backward(
    spec: &ConvSpec,
    x: &[f64],
    (h, w): (usize, usize),
    weight: &[f64],
    grad_out: &[f64],
) -> ConvGrads {
    let (oh, ow) = spec.output_hw(h, w).expect("operands checked by caller");
    let (ipg, opg, k) = (spec.in_per_group(), spec.out_per_group(), spec.kernel);
    let (in_plane, out_plane) = (h * w, oh * ow);
    let mut dx = vec![0.0; spec.in_channels * in_plane];
    let mut dw = vec![0.0; weight.len()];

    for (oc, g) in grad_out.chunks_exact(out_plane).enumerate() {
        let group = oc / opg;
        for icg in 0..ipg {
            let ic = group * ipg + icg;
            let src = &x[ic * in_plane..][..in_plane];
            let dsrc = &mut dx[ic * in_plane..][..in_plane];
            let base = (oc * ipg + icg) * k * k;
            if spec.is_flat_pointwise() {
                let wv = weight[base];
                let mut acc = 0.0;
                for ((d, s), gv) in dsrc.iter_mut().zip(src).zip(g) {
                    *d += wv * gv;
                    acc += gv * s;
                }
                dw[base] += acc;
                continue;
            }
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[base + ky * k + kx];
                    let (lo, hi) = spec.col_range(kx, w, ow);
                    if lo == hi {
                        continue;
                    }
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let Some(iy) = spec.input_row(oy, ky, h) else {
                            continue;
                        };
                        let grow = &g[oy * ow..][lo..hi];
                        let ix0 = lo * spec.stride + kx - spec.padding;
                        for (j, gv) in grow.iter().enumerate() {
                            let ix = iy * w + ix0 + j * spec.stride;
                            dsrc[ix] += wv * gv;
                            acc += gv * src[ix];
                        }
                    }
                    dw[base + ky * k + kx] += acc;
                }
            }
        }
    }

    let bias = spec.has_bias.then(|| {
        grad_out
            .chunks_exact(out_plane)
            .map(|g| g.iter().sum())
            .collect()
    });
    ConvGrads {
        input: dx,
        weight: dw,
        bias,
    }
}
