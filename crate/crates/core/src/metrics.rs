//! Dataset-level evaluation: mean CIELab error and single-scale SSIM.

use std::io::Write;

use crate::color::{luminance, mean_lab_distance, RgbImage};
use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean over image pairs of [`mean_lab_distance`].
pub fn mean_l2_error(outputs: &[RgbImage], targets: &[RgbImage]) -> Result<f64> {
    if outputs.len() != targets.len() {
        return Err(Error::dims("image list length", targets.len(), outputs.len()));
    }
    if outputs.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let mut total = 0.0;
    for (o, t) in outputs.iter().zip(targets) {
        total += mean_lab_distance(o, t)?;
    }
    Ok(total / outputs.len() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable "valid" filtering: output is `(w - 10) x (h - 10)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// SSIM of the luma maps with an 11x11 Gaussian window (σ = 1.5), dynamic
/// range 1, averaged over all fully contained window positions.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dims(
            "image dimensions",
            format!("{}x{}", a.width(), a.height()),
            format!("{}x{}", b.width(), b.height()),
        ));
    }
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidImage(format!(
            "{w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let x: Vec<f64> = luminance(a).into_iter().map(f64::from).collect();
    let y: Vec<f64> = luminance(b).into_iter().map(f64::from).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let k = gaussian_kernel();
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|m| filter_valid(m, w, h, &k));
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mx.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub stem: String,
    pub l2_before: f64,
    pub l2_after: f64,
    pub ssim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub l2_before: f64,
    pub l2_after: f64,
    pub ssim: f64,
}

pub fn summarize(rows: &[EvalRow]) -> Result<EvalSummary> {
    if rows.is_empty() {
        return Err(Error::InsufficientData { needed: 1, available: 0 });
    }
    let n = rows.len() as f64;
    Ok(EvalSummary {
        l2_before: rows.iter().map(|r| r.l2_before).sum::<f64>() / n,
        l2_after: rows.iter().map(|r| r.l2_after).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
    })
}

pub const REPORT_HEADER: &str = "stem,l2_before,l2_after,ssim";

/// Per-image rows followed by a `mean` aggregate row.
pub fn write_report(mut w: impl Write, rows: &[EvalRow]) -> Result<EvalSummary> {
    let summary = summarize(rows)?;
    writeln!(w, "{REPORT_HEADER}")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.stem, r.l2_before, r.l2_after, r.ssim)?;
    }
    writeln!(w, "mean,{},{},{}", summary.l2_before, summary.l2_after, summary.ssim)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{apply_edit, EditAction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, w: usize, h: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn l2_basics() {
        let a = noise(1, 12, 12);
        let b = noise(2, 12, 12);
        assert_eq!(mean_l2_error(&[a.clone()], &[a.clone()]).unwrap(), 0.0);
        assert_eq!(mean_l2_error(&[a.clone()], &[b.clone()]).unwrap(), mean_lab_distance(&a, &b).unwrap());
        assert!(mean_l2_error(&[a.clone()], &[]).is_err());
        let m = mean_l2_error(&[a.clone(), b.clone()], &[b.clone(), b.clone()]).unwrap();
        assert!((m - mean_lab_distance(&a, &b).unwrap() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_identity_symmetry_bounds() {
        let a = noise(3, 20, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-6);
        let b = apply_edit(&a, EditAction::ContrastDown);
        let s = ssim(&a, &b).unwrap();
        assert_eq!(s, ssim(&b, &a).unwrap());
        assert!((-1.0..1.0).contains(&s));
        assert!(ssim(&noise(4, 10, 20), &noise(5, 10, 20)).is_err());
    }

    #[test]
    fn constant_patches_closed_form() {
        let a = RgbImage::filled(16, 16, [0.4; 3]);
        let b = RgbImage::filled(16, 16, [0.6; 3]);
        let (m1, m2) = (0.4f32 as f64 * 1.0, 0.6f32 as f64);
        // Luma of a gray pixel is the gray value (coefficients sum to 1).
        let l1 = crate::color::luminance(&a)[0] as f64;
        let l2 = crate::color::luminance(&b)[0] as f64;
        assert!((l1 - m1).abs() < 1e-6 && (l2 - m2).abs() < 1e-6);
        let c1 = 0.01f64 * 0.01;
        let expected = (2.0 * l1 * l2 + c1) / (l1 * l1 + l2 * l2 + c1);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn report_aggregate_is_row_mean() {
        let rows = vec![
            EvalRow { stem: "a".into(), l2_before: 10.0, l2_after: 4.0, ssim: 0.9 },
            EvalRow { stem: "b".into(), l2_before: 20.0, l2_after: 8.0, ssim: 0.7 },
        ];
        let mut buf = Vec::new();
        let s = write_report(&mut buf, &rows).unwrap();
        assert_eq!(s.l2_before, 15.0);
        assert_eq!(s.l2_after, 6.0);
        assert!((s.ssim - 0.8).abs() < 1e-12);
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(REPORT_HEADER));
        assert!(text.trim_end().ends_with(&format!("mean,15,6,{}", s.ssim)));
    }
}
