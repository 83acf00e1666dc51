use super::{OracleError, Result};
use crate::tensor::Tensor;

/// Direct grouped cross-correlation with zero padding:
/// `y[o,i,j] = b[o] + Σ_{c,u,v} w[o,c,u,v] · x[g·cin + c, i·s + u − p, j·s + v − p]`
/// where `g` is the group of output channel `o`.
pub fn conv2d_naive(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor> {
    let bad = |m: String| Err(OracleError::Shape(m));
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 3 || ws.len() != 4 {
        return bad(format!("input {xs:?} / weight {ws:?} ranks"));
    }
    let (cin, h, w) = (xs[0], xs[1] as isize, xs[2] as isize);
    let (cout, cpg, kh, kw) = (ws[0], ws[1], ws[2] as isize, ws[3] as isize);
    if groups == 0 || stride == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cpg
    {
        return bad(format!(
            "groups {groups} incompatible with {xs:?} and {ws:?}"
        ));
    }
    if let Some(b) = bias {
        if b.numel() != cout {
            return bad(format!("bias {:?} for {cout} outputs", b.shape()));
        }
    }
    let (p, s) = (padding as isize, stride as isize);
    if h + 2 * p < kh || w + 2 * p < kw {
        return bad("kernel larger than padded input".into());
    }
    let oh = ((h + 2 * p - kh) / s + 1) as usize;
    let ow = ((w + 2 * p - kw) / s + 1) as usize;
    let opg = cout / groups;
    let (xd, wd) = (x.data(), weight.data());

    let mut out = vec![0.0; cout * oh * ow];
    for o in 0..cout {
        let g = o / opg;
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias.map_or(0.0, |b| b.data()[o]);
                for c in 0..cpg {
                    for u in 0..kh {
                        for v in 0..kw {
                            let yy = i as isize * s + u - p;
                            let xx = j as isize * s + v - p;
                            if yy < 0 || xx < 0 || yy >= h || xx >= w {
                                continue;
                            }
                            let ci = g * cpg + c;
                            let xv = xd[(ci * h as usize + yy as usize) * w as usize + xx as usize];
                            let wv = wd[((o * cpg + c) * kh as usize + u as usize) * kw as usize
                                + v as usize];
                            acc += wv * xv;
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    Ok(Tensor::new([cout, oh, ow], out)?)
}
