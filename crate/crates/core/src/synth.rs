//! Procedural "well exposed" scenes: a soft two-color gradient with a few
//! blurred ellipses in moderately saturated colors, then tone-matched so
//! every scene shares a similar luma mean and spread (a consistent house
//! style). Stand-ins for curated reference photos in tests, demos and toy
//! training runs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::hsv_to_rgb;
use crate::color::{luminance, RgbImage};

fn pleasant_color(rng: &mut impl Rng) -> [f32; 3] {
    let h = rng.random_range(0.0..360.0);
    let s = rng.random_range(0.15..0.6);
    let v = rng.random_range(0.45..0.85);
    hsv_to_rgb([h, s, v]).map(|c| c as f32)
}

struct Blob {
    cx: f32,
    cy: f32,
    rx: f32,
    ry: f32,
    color: [f32; 3],
}

pub fn reference_scene(width: usize, height: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let top = pleasant_color(&mut rng);
    let bottom = pleasant_color(&mut rng);
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let side = width.min(height) as f32;
    let blobs: Vec<Blob> = (0..rng.random_range(3..=6))
        .map(|_| Blob {
            cx: rng.random_range(0.0..width as f32),
            cy: rng.random_range(0.0..height as f32),
            rx: rng.random_range(0.1..0.35) * side,
            ry: rng.random_range(0.1..0.35) * side,
            color: pleasant_color(&mut rng),
        })
        .collect();
    let raw = RgbImage::from_fn(width, height, |x, y| {
        let u = x as f32 / width as f32 - 0.5;
        let v = y as f32 / height as f32 - 0.5;
        let t = (u * dx + v * dy + 0.5).clamp(0.0, 1.0);
        let mut px: [f32; 3] = std::array::from_fn(|c| top[c] * (1.0 - t) + bottom[c] * t);
        for b in &blobs {
            let ex = (x as f32 - b.cx) / b.rx;
            let ey = (y as f32 - b.cy) / b.ry;
            let r = (ex * ex + ey * ey).sqrt();
            // Soft edge over the outer fifth of the radius.
            let alpha = ((1.0 - r) / 0.2).clamp(0.0, 1.0);
            for c in 0..3 {
                px[c] += alpha * (b.color[c] - px[c]);
            }
        }
        px
    });
    let mean = rng.random_range(TONE_MEAN.0..TONE_MEAN.1);
    let spread = rng.random_range(TONE_SPREAD.0..TONE_SPREAD.1);
    match_tone(&raw, mean, spread)
}

/// Band for the per-scene target luma mean.
pub const TONE_MEAN: (f32, f32) = (0.50, 0.54);
/// Band for the per-scene target luma standard deviation.
pub const TONE_SPREAD: (f32, f32) = (0.09, 0.11);

/// Shifts every pixel's channels by a common offset so the luma histogram
/// takes the given mean and standard deviation; chroma differences between
/// channels are left alone. Results are clamped to [0, 1].
pub fn match_tone(img: &RgbImage, mean: f32, spread: f32) -> RgbImage {
    let luma = luminance(img);
    let n = luma.len() as f64;
    let m = luma.iter().map(|&v| v as f64).sum::<f64>() / n;
    let sd = (luma.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n).sqrt();
    let gain = if sd > 1e-6 { spread as f64 / sd } else { 1.0 };
    let mut i = 0;
    img.map_pixels(|p| {
        let l = luma[i] as f64;
        i += 1;
        let shift = (mean as f64 + (l - m) * gain - l) as f32;
        p.map(|c| c + shift)
    })
}

/// `count` scenes with seeds `seed, seed + 1, ...`.
pub fn reference_set(count: usize, width: usize, height: usize, seed: u64) -> Vec<RgbImage> {
    (0..count as u64).map(|i| reference_scene(width, height, seed + i)).collect()
}
