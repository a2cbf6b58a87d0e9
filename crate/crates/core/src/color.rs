//! sRGB / CIELab colorimetry and the per-pixel color distance used for both
//! reward and evaluation.
//!
//! All conversions use the D65 white point and the 2° observer. Values are
//! stored as `f32` but every conversion runs in `f64`.

use std::sync::LazyLock;

use crate::error::{Error, Result};

/// Linear sRGB -> XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

/// Reference white, taken as the image of linear (1,1,1) so that the gray
/// axis lands exactly on a = b = 0.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let m = &RGB_TO_XYZ;
    [
        m[0][0] + m[0][1] + m[0][2],
        m[1][0] + m[1][1] + m[1][2],
        m[2][0] + m[2][1] + m[2][2],
    ]
});

const LAB_EPSILON: f64 = 216.0 / 24389.0;
const LAB_KAPPA: f64 = 24389.0 / 27.0;

/// An image in nonlinear sRGB, channels in `[0, 1]`, row-major interleaved RGB.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

/// An image in CIELab, row-major interleaved (L, a, b).
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RgbImage {
    /// Validates and wraps raw interleaved RGB data.
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if data.len() != 3 * width * height {
            return Err(Error::dims("rgb data length", 3 * width * height, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("channel value {v} outside [0, 1]")));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Builds an image from a per-pixel generator; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        assert!(width > 0 && height > 0, "image must have at least one pixel");
        let mut data = Vec::with_capacity(3 * width * height);
        for y in 0..height {
            for x in 0..width {
                data.extend(f(x, y).map(clamp01));
            }
        }
        Self { width, height, data }
    }

    /// Decodes 8-bit interleaved RGB.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * width * height {
            return Err(Error::dims("rgb8 buffer length", 3 * width * height, bytes.len()));
        }
        Self::new(width, height, bytes.iter().map(|&b| f32::from(b) / 255.0).collect())
    }

    /// Quantizes to 8-bit interleaved RGB (round to nearest).
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v * 255.0).round() as u8).collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl ExactSizeIterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Applies `f` to every pixel and clamps the result.
    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for p in self.pixels() {
            data.extend(f(p).map(clamp01));
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn same_dims(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Bilinear resampling with pixel-center alignment (no prefiltering).
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Self {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let sample_axis = |dst: usize, scale: f64, len: usize| {
            let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(len - 1);
            (i0, i1, pos - i0 as f64)
        };
        Self::from_fn(width, height, |x, y| {
            let (x0, x1, fx) = sample_axis(x, sx, self.width);
            let (y0, y1, fy) = sample_axis(y, sy, self.height);
            let p00 = self.pixel(x0, y0);
            let p10 = self.pixel(x1, y0);
            let p01 = self.pixel(x0, y1);
            let p11 = self.pixel(x1, y1);
            std::array::from_fn(|c| {
                let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
                let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
                (top * (1.0 - fy) + bottom * fy) as f32
            })
        })
    }

    /// Box-filter downsampling so that the longer side is at most `max_side`.
    /// Images already within the bound are returned unchanged.
    pub fn downsample_to_fit(&self, max_side: usize) -> Self {
        let longest = self.width.max(self.height);
        if longest <= max_side {
            return self.clone();
        }
        let scale = max_side as f64 / longest as f64;
        let width = ((self.width as f64 * scale).round() as usize).max(1);
        let height = ((self.height as f64 * scale).round() as usize).max(1);
        let span = |dst: usize, src_len: usize, dst_len: usize| {
            let start = dst * src_len / dst_len;
            let end = ((dst + 1) * src_len).div_ceil(dst_len).max(start + 1);
            start..end.min(src_len)
        };
        Self::from_fn(width, height, |x, y| {
            let mut acc = [0.0f64; 3];
            let mut n = 0.0;
            for sy in span(y, self.height, height) {
                for sx in span(x, self.width, width) {
                    let p = self.pixel(sx, sy);
                    for c in 0..3 {
                        acc[c] += p[c] as f64;
                    }
                    n += 1.0;
                }
            }
            acc.map(|v| (v / n) as f32)
        })
    }
}

impl LabImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if data.len() != 3 * width * height {
            return Err(Error::dims("lab data length", 3 * width * height, data.len()));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixels(&self) -> impl ExactSizeIterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }
}

#[inline]
pub(crate) fn clamp01(v: f32) -> f32 {
    v.clamp(0.0, 1.0)
}

#[inline]
fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn srgb_encode(v: f64) -> f64 {
    if v <= 0.0031308 {
        v * 12.92
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    if t > LAB_EPSILON {
        t.cbrt()
    } else {
        (LAB_KAPPA * t + 16.0) / 116.0
    }
}

#[inline]
fn lab_f_inv(f: f64) -> f64 {
    let cube = f * f * f;
    if cube > LAB_EPSILON {
        cube
    } else {
        (116.0 * f - 16.0) / LAB_KAPPA
    }
}

/// Converts one nonlinear sRGB pixel to CIELab.
pub fn srgb_to_lab_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_decode);
    let white = &*WHITE;
    let xyz: [f64; 3] = std::array::from_fn(|r| {
        (RGB_TO_XYZ[r][0] * lin[0] + RGB_TO_XYZ[r][1] * lin[1] + RGB_TO_XYZ[r][2] * lin[2]) / white[r]
    });
    let [fx, fy, fz] = xyz.map(lab_f);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts one CIELab pixel to nonlinear sRGB, clamping out-of-gamut channels.
pub fn lab_to_srgb_pixel(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let white = &*WHITE;
    let xyz = [
        lab_f_inv(fx) * white[0],
        // Below the knee L maps linearly to Y.
        if lab[0] > LAB_KAPPA * LAB_EPSILON {
            fy * fy * fy
        } else {
            lab[0] / LAB_KAPPA
        } * white[1],
        lab_f_inv(fz) * white[2],
    ];
    let m = &*XYZ_TO_RGB;
    std::array::from_fn(|r| {
        let lin = m[r][0] * xyz[0] + m[r][1] * xyz[1] + m[r][2] * xyz[2];
        srgb_encode(lin.max(0.0)).clamp(0.0, 1.0)
    })
}

pub fn srgb_to_lab(img: &RgbImage) -> LabImage {
    let mut data = Vec::with_capacity(img.data.len());
    for p in img.pixels() {
        let lab = srgb_to_lab_pixel(p.map(f64::from));
        data.extend(lab.map(|v| v as f32));
    }
    LabImage {
        width: img.width,
        height: img.height,
        data,
    }
}

pub fn lab_to_srgb(img: &LabImage) -> RgbImage {
    let mut data = Vec::with_capacity(img.data.len());
    for p in img.pixels() {
        let rgb = lab_to_srgb_pixel(p.map(f64::from));
        data.extend(rgb.map(|v| v as f32));
    }
    RgbImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Mean over pixels of the Euclidean CIELab difference (mean ΔE*ab).
pub fn mean_lab_distance(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    if !a.same_dims(b) {
        return Err(Error::dims(
            "image dimensions",
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    mean_lab_distance_lab(&srgb_to_lab(a), &srgb_to_lab(b))
}

/// [`mean_lab_distance`] on images already converted to CIELab.
pub fn mean_lab_distance_lab(a: &LabImage, b: &LabImage) -> Result<f64> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::dims(
            "image dimensions",
            format!("{}x{}", a.width, a.height),
            format!("{}x{}", b.width, b.height),
        ));
    }
    let total: f64 = a
        .pixels()
        .zip(b.pixels())
        .map(|(p, q)| {
            let d: f64 = (0..3).map(|c| (p[c] as f64 - q[c] as f64).powi(2)).sum();
            d.sqrt()
        })
        .sum();
    Ok(total / (a.width * a.height) as f64)
}

/// Rec. 601 luma on the nonlinear channels.
pub fn luminance(img: &RgbImage) -> Vec<f32> {
    img.pixels().map(luma).collect()
}

#[inline]
pub(crate) fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [cof(1, 2, 1, 2) / det, -cof(0, 2, 1, 2) / det, cof(0, 1, 1, 2) / det],
        [-cof(1, 2, 0, 2) / det, cof(0, 2, 0, 2) / det, -cof(0, 1, 0, 2) / det],
        [cof(1, 2, 0, 1) / det, -cof(0, 2, 0, 1) / det, cof(0, 1, 0, 1) / det],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook CIE 1976 route: published inverse-free matrix, tabulated D65
    /// white, explicit piecewise definitions.
    fn oracle_lab(rgb: [f64; 3]) -> [f64; 3] {
        let lin: Vec<f64> = rgb
            .iter()
            .map(|&c| if c <= 0.04045 { c / 12.92 } else { ((c + 0.055) / 1.055).powf(2.4) })
            .collect();
        let x = 0.4124564 * lin[0] + 0.3575761 * lin[1] + 0.1804375 * lin[2];
        let y = 0.2126729 * lin[0] + 0.7151522 * lin[1] + 0.0721750 * lin[2];
        let z = 0.0193339 * lin[0] + 0.1191920 * lin[1] + 0.9503041 * lin[2];
        let f = |t: f64| {
            if t > (6.0f64 / 29.0).powi(3) {
                t.powf(1.0 / 3.0)
            } else {
                t / (3.0 * (6.0f64 / 29.0).powi(2)) + 4.0 / 29.0
            }
        };
        let (fx, fy, fz) = (f(x / 0.95047), f(y / 1.0), f(z / 1.08883));
        [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
    }

    #[test]
    fn white_and_black_endpoints() {
        let w = srgb_to_lab_pixel([1.0, 1.0, 1.0]);
        assert!((w[0] - 100.0).abs() < 0.05 && w[1].abs() < 0.05 && w[2].abs() < 0.05, "{w:?}");
        let k = srgb_to_lab_pixel([0.0, 0.0, 0.0]);
        assert!(k.iter().all(|v| v.abs() < 1e-9), "{k:?}");
    }

    #[test]
    fn mid_gray_matches_oracle() {
        let ours = srgb_to_lab_pixel([0.5, 0.5, 0.5]);
        let oracle = oracle_lab([0.5, 0.5, 0.5]);
        assert!((ours[0] - oracle[0]).abs() < 1e-3);
        assert!((ours[0] - 53.39).abs() < 0.01, "{ours:?}");
        assert!(ours[1].abs() < 0.05 && ours[2].abs() < 0.05);
    }

    #[test]
    fn random_colors_match_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let rgb = [rng.random::<f64>(), rng.random(), rng.random()];
            let (a, b) = (srgb_to_lab_pixel(rgb), oracle_lab(rgb));
            for c in 0..3 {
                // The oracle's tabulated white differs in the 5th digit.
                assert!((a[c] - b[c]).abs() < 0.02, "{rgb:?}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn lab_to_srgb_known_points() {
        let w = lab_to_srgb_pixel([100.0, 0.0, 0.0]);
        assert!(w.iter().all(|v| (v - 1.0).abs() < 1e-3), "{w:?}");
        let l_gray = oracle_lab([0.5, 0.5, 0.5])[0];
        let g = lab_to_srgb_pixel([l_gray, 0.0, 0.0]);
        assert!(g.iter().all(|v| (v - 0.5).abs() < 1e-3), "{g:?}");
        let g = lab_to_srgb_pixel([53.39, 0.0, 0.0]);
        assert!(g.iter().all(|v| (v - 0.5).abs() < 1e-3), "{g:?}");
    }

    #[test]
    fn out_of_gamut_lab_is_clamped() {
        let p = lab_to_srgb_pixel([50.0, 127.0, -128.0]);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn gray_axis_is_neutral() {
        for i in 0..=100 {
            let g = i as f64 / 100.0;
            let lab = srgb_to_lab_pixel([g, g, g]);
            assert!(lab[1].abs() < 0.05 && lab[2].abs() < 0.05, "{g}: {lab:?}");
        }
    }

    #[test]
    fn distance_of_brightened_gray() {
        let a = RgbImage::filled(4, 3, [0.5; 3]);
        let b = RgbImage::filled(4, 3, [0.525; 3]);
        let expected = oracle_lab([0.525; 3])[0] - oracle_lab([0.5; 3])[0];
        let d = mean_lab_distance(&a, &b).unwrap();
        assert!((d - expected).abs() < 1e-4, "{d} vs {expected}");
        assert_eq!(mean_lab_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn distance_rejects_mismatched_dims() {
        let a = RgbImage::filled(4, 3, [0.5; 3]);
        let b = RgbImage::filled(3, 4, [0.5; 3]);
        assert!(matches!(mean_lab_distance(&a, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn luminance_coefficients() {
        assert_eq!(luminance(&RgbImage::filled(2, 2, [1.0; 3])), vec![1.0; 4]);
        assert_eq!(luminance(&RgbImage::filled(2, 2, [0.0; 3])), vec![0.0; 4]);
        assert!((luminance(&RgbImage::filled(1, 1, [1.0, 0.0, 0.0]))[0] - 0.299).abs() < 1e-7);
    }

    #[test]
    fn image_validation() {
        assert!(RgbImage::new(0, 1, vec![]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, 0.0]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, 1.5, 0.0]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        assert!(RgbImage::new(1, 1, vec![0.0, 1.0, 0.2]).is_ok());
    }

    #[test]
    fn downsample_bounds_longest_side() {
        let img = RgbImage::from_fn(600, 300, |x, _| [x as f32 / 600.0, 0.2, 0.3]);
        let small = img.downsample_to_fit(256);
        assert_eq!((small.width(), small.height()), (256, 128));
        let same = img.downsample_to_fit(1000);
        assert_eq!(same, img);
    }
}
