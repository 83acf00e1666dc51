//! PSNR and SSIM on the luma plane, plus the per-dataset CSV report.

use std::fmt::Write as _;

use thiserror::Error;

use crate::data::{rgb_to_y, Image, Plane};

pub const PEAK: f64 = 255.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("planes differ in size: {a:?} vs {b:?}")]
    ShapeMismatch {
        a: (usize, usize),
        b: (usize, usize),
    },
    #[error("{width}×{height} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window")]
    TooSmall { width: usize, height: usize },
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

fn same_shape(a: &Plane, b: &Plane) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(MetricError::ShapeMismatch {
            a: (a.width, a.height),
            b: (b.width, b.height),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(a: &Plane, b: &Plane, peak: f64) -> Result<f64> {
    same_shape(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    g.iter()
        .flat_map(|wy| g.iter().map(move |wx| wy * wx))
        .collect()
}

/// Mean single-scale SSIM over every position where the 11×11 Gaussian
/// window fits entirely inside the image.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    same_shape(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(MetricError::TooSmall {
            width: a.width,
            height: a.height,
        });
    }
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let win = gaussian_window();
    let (nx, ny) = (a.width - SSIM_WINDOW + 1, a.height - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y0 in 0..ny {
        for x0 in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for wy in 0..SSIM_WINDOW {
                let row = (y0 + wy) * a.width + x0;
                for wx in 0..SSIM_WINDOW {
                    let w = win[wy * SSIM_WINDOW + wx];
                    let (va, vb) = (a.data[row + wx], b.data[row + wx]);
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (nx * ny) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairScore {
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Luma PSNR and SSIM of `restored` against `clean`.
pub fn evaluate_pair(clean: &Image, restored: &Image) -> Result<PairScore> {
    let (a, b) = (rgb_to_y(clean), rgb_to_y(restored));
    Ok(PairScore {
        psnr_db: psnr(&a, &b, PEAK)?,
        ssim: ssim(&a, &b)?,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub entries: Vec<(String, PairScore)>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v}")
    }
}

impl MetricReport {
    pub fn push(&mut self, name: impl Into<String>, score: PairScore) {
        self.entries.push((name.into(), score));
    }

    /// Mean PSNR over the rows with finite PSNR, with the number of rows
    /// left out. `None` when no row is finite.
    pub fn mean_psnr(&self) -> (Option<f64>, usize) {
        let finite: Vec<f64> = self
            .entries
            .iter()
            .map(|(_, s)| s.psnr_db)
            .filter(|v| v.is_finite())
            .collect();
        let skipped = self.entries.len() - finite.len();
        let mean = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        (mean, skipped)
    }

    pub fn mean_ssim(&self) -> Option<f64> {
        (!self.entries.is_empty()).then(|| {
            self.entries.iter().map(|(_, s)| s.ssim).sum::<f64>() / self.entries.len() as f64
        })
    }

    /// `image,psnr_db,ssim` rows, a `MEAN` row, and a trailing comment when
    /// infinite PSNR rows were left out of the mean. With every row infinite
    /// the mean PSNR is written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("image,psnr_db,ssim\n");
        for (name, s) in &self.entries {
            let _ = writeln!(out, "{name},{},{}", fmt_db(s.psnr_db), s.ssim);
        }
        let (mean, skipped) = self.mean_psnr();
        let mean_db = match mean {
            Some(m) => fmt_db(m),
            None if self.entries.is_empty() => "nan".into(),
            None => "inf".into(),
        };
        let mean_ssim = self.mean_ssim().map_or("nan".into(), |v| v.to_string());
        let _ = writeln!(out, "MEAN,{mean_db},{mean_ssim}");
        if skipped > 0 {
            let _ = writeln!(
                out,
                "# MEAN psnr_db excludes {skipped} row(s) with infinite PSNR"
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_sums_to_one() {
        let w = gaussian_window();
        assert_eq!(w.len(), 121);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unit_mse_gives_twenty_log_peak() {
        let a = Plane::filled(4, 4, 10.0);
        let b = Plane::filled(4, 4, 11.0);
        let db = psnr(&a, &b, PEAK).unwrap();
        assert!((db - 20.0 * 255f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn constant_planes_follow_closed_form() {
        let a = Plane::filled(12, 12, 0.0);
        let b = Plane::filled(12, 12, 255.0);
        let c1 = (SSIM_K1 * PEAK).powi(2);
        let expect = c1 / (PEAK * PEAK + c1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn csv_mean_skips_infinite_rows() {
        let mut r = MetricReport::default();
        r.push(
            "a",
            PairScore {
                psnr_db: f64::INFINITY,
                ssim: 1.0,
            },
        );
        r.push(
            "b",
            PairScore {
                psnr_db: 30.0,
                ssim: 0.5,
            },
        );
        let csv = r.to_csv();
        assert!(csv.contains("a,inf,1\n"));
        assert!(csv.contains("MEAN,30,0.75\n"));
        assert!(csv.contains("excludes 1 row"));
    }
}
