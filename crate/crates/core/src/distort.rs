//! Synthesis of distorted/reference training pairs.
//!
//! A reference image is corrupted by a random walk of global or softly
//! region-weighted operations until its mean CIELab distance to the original
//! lands inside a target band. The corrupted image becomes the agent's input
//! and the untouched reference its target.

use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{adjust_brightness, adjust_contrast, adjust_saturation};
use crate::color::{clamp01, luma, mean_lab_distance_lab, srgb_to_lab, RgbImage};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Region {
    Global,
    Highlight,
    Shadow,
}

/// Channel targeted by a [`DistortKind::ChannelPush`]. The secondary colors
/// act on their two constituent primaries (cyan = G+B, magenta = R+B,
/// yellow = R+G).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PushChannel {
    Cyan,
    Magenta,
    Yellow,
    Red,
    Green,
    Blue,
}

impl PushChannel {
    pub const ALL: [PushChannel; 6] = [
        PushChannel::Cyan,
        PushChannel::Magenta,
        PushChannel::Yellow,
        PushChannel::Red,
        PushChannel::Green,
        PushChannel::Blue,
    ];

    fn channels(self) -> [bool; 3] {
        match self {
            PushChannel::Cyan => [false, true, true],
            PushChannel::Magenta => [true, false, true],
            PushChannel::Yellow => [true, true, false],
            PushChannel::Red => [true, false, false],
            PushChannel::Green => [false, true, false],
            PushChannel::Blue => [false, false, true],
        }
    }

    /// How strongly a pixel expresses this channel; drives the highlight mask.
    fn intensity(self, p: [f32; 3]) -> f32 {
        let mask = self.channels();
        let (sum, n) = (0..3)
            .filter(|&c| mask[c])
            .fold((0.0, 0.0), |(s, n), c| (s + p[c], n + 1.0));
        sum / n
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistortKind {
    Brightness,
    Contrast,
    Saturation,
    ChannelPush(PushChannel),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistortOp {
    pub kind: DistortKind,
    pub region: Region,
    pub factor: f32,
}

impl fmt::Display for DistortOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}/{:?}x{:.4}", self.kind, self.region, self.factor)
    }
}

/// Sigmoid soft-selection parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskParams {
    pub steepness: f32,
    pub highlight_pivot: f32,
    pub shadow_pivot: f32,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            steepness: 10.0,
            highlight_pivot: 0.6,
            shadow_pivot: 0.4,
        }
    }
}

impl MaskParams {
    fn pivot(&self, region: Region) -> f32 {
        match region {
            Region::Shadow => self.shadow_pivot,
            _ => self.highlight_pivot,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistortConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub max_ops: usize,
    pub max_restarts: usize,
    /// Factor is drawn uniformly from one of these two ranges (equal odds).
    pub factor_down: (f32, f32),
    pub factor_up: (f32, f32),
    pub mask: MaskParams,
    /// Operation templates sampled uniformly; the factor is filled in per draw.
    pub catalogue: Vec<(DistortKind, Region)>,
}

impl Default for DistortConfig {
    fn default() -> Self {
        let mut catalogue = Vec::new();
        for kind in [DistortKind::Brightness, DistortKind::Contrast, DistortKind::Saturation] {
            for region in [Region::Global, Region::Highlight, Region::Shadow] {
                catalogue.push((kind, region));
            }
        }
        for ch in PushChannel::ALL {
            catalogue.push((DistortKind::ChannelPush(ch), Region::Highlight));
        }
        Self::with_catalogue(catalogue)
    }
}

impl DistortConfig {
    pub fn with_catalogue(catalogue: Vec<(DistortKind, Region)>) -> Self {
        Self {
            d_min: 10.0,
            d_max: 20.0,
            max_ops: 30,
            max_restarts: 100,
            factor_down: (0.85, 0.97),
            factor_up: (1.03, 1.15),
            mask: MaskParams::default(),
            catalogue,
        }
    }

    /// Only whole-image brightness and contrast changes.
    pub fn global_tone() -> Self {
        Self::with_catalogue(vec![
            (DistortKind::Brightness, Region::Global),
            (DistortKind::Contrast, Region::Global),
        ])
    }

    /// Brightness and contrast restricted to soft highlight or shadow regions.
    pub fn regional_tone() -> Self {
        let mut catalogue = Vec::new();
        for kind in [DistortKind::Brightness, DistortKind::Contrast] {
            for region in [Region::Highlight, Region::Shadow] {
                catalogue.push((kind, region));
            }
        }
        Self::with_catalogue(catalogue)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_min >= 0.0 && self.d_min <= self.d_max) {
            return Err(Error::param("d_min", format!("need 0 <= d_min <= d_max, got {}..{}", self.d_min, self.d_max)));
        }
        if self.catalogue.is_empty() {
            return Err(Error::param("catalogue", "no distortion operations"));
        }
        let (lo, hi) = self.factor_down;
        let (ulo, uhi) = self.factor_up;
        if !(0.0 < lo && lo <= hi && hi <= 1.0 && 1.0 <= ulo && ulo <= uhi) {
            return Err(Error::param("factor", "ranges must be positive with down <= 1 <= up"));
        }
        if self
            .catalogue
            .iter()
            .any(|(k, r)| matches!(k, DistortKind::ChannelPush(_)) && *r != Region::Highlight)
        {
            return Err(Error::param("catalogue", "channel pushes act on highlight pixels only"));
        }
        Ok(())
    }

    pub fn sample_op(&self, rng: &mut impl Rng) -> DistortOp {
        let (kind, region) = self.catalogue[rng.random_range(0..self.catalogue.len())];
        let (lo, hi) = if rng.random_bool(0.5) {
            self.factor_down
        } else {
            self.factor_up
        };
        DistortOp {
            kind,
            region,
            factor: rng.random_range(lo..=hi),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub distorted: RgbImage,
    pub reference: RgbImage,
    pub achieved_distance: f64,
    pub op_log: Vec<DistortOp>,
}

#[inline]
fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-pixel weight for highlight (bright) or shadow (dark) pixels, a
/// sigmoid of luminance centred on `pivot`. `Global` yields all ones.
pub fn soft_mask(img: &RgbImage, region: Region, steepness: f32, pivot: f32) -> Vec<f32> {
    img.pixels().map(|p| region_weight(luma(p), region, steepness, pivot)).collect()
}

#[inline]
fn region_weight(v: f32, region: Region, steepness: f32, pivot: f32) -> f32 {
    match region {
        Region::Global => 1.0,
        Region::Highlight => sigmoid(steepness * (v - pivot)),
        Region::Shadow => sigmoid(steepness * (pivot - v)),
    }
}

pub fn apply_distort_op(img: &RgbImage, op: &DistortOp, mask: &MaskParams) -> RgbImage {
    let f = op.factor;
    let full = match op.kind {
        DistortKind::Brightness => adjust_brightness(img, f),
        DistortKind::Contrast => adjust_contrast(img, f),
        DistortKind::Saturation => adjust_saturation(img, f),
        DistortKind::ChannelPush(ch) => {
            let sel = ch.channels();
            Ok(img.map_pixels(|p| std::array::from_fn(|c| if sel[c] { p[c] * f } else { p[c] })))
        }
    }
    .expect("distortion factors are positive");

    if op.region == Region::Global {
        return full;
    }
    let pivot = mask.pivot(op.region);
    let mut full_px = full.pixels();
    img.map_pixels(|p| {
        let q = full_px.next().expect("same pixel count");
        let v = match op.kind {
            DistortKind::ChannelPush(ch) => ch.intensity(p),
            _ => luma(p),
        };
        let w = region_weight(v, op.region, mask.steepness, pivot);
        std::array::from_fn(|c| clamp01(p[c] + w * (q[c] - p[c])))
    })
}

/// Random walk of distortion operations until the distance to `reference`
/// falls in `[d_min, d_max]`. Overshooting or running out of operations
/// restarts the walk from the reference with the generator state carried on.
pub fn synthesize_pair(reference: &RgbImage, name: &str, seed: u64, cfg: &DistortConfig) -> Result<TrainingPair> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ref_lab = srgb_to_lab(reference);
    for _restart in 0..cfg.max_restarts {
        let mut current = reference.clone();
        let mut log = Vec::new();
        while log.len() < cfg.max_ops {
            let op = cfg.sample_op(&mut rng);
            current = apply_distort_op(&current, &op, &cfg.mask);
            log.push(op);
            let d = mean_lab_distance_lab(&srgb_to_lab(&current), &ref_lab)?;
            if d > cfg.d_max {
                break;
            }
            if d >= cfg.d_min {
                return Ok(TrainingPair {
                    distorted: current,
                    reference: reference.clone(),
                    achieved_distance: d,
                    op_log: log,
                });
            }
        }
    }
    Err(Error::SynthesisFailure {
        name: name.to_string(),
        restarts: cfg.max_restarts,
    })
}

/// Per-pair seed: the run seed xor the pair's position in the dataset.
pub fn pair_seed(run_seed: u64, index: u64) -> u64 {
    run_seed ^ index
}

/// One manifest line: `stem,achieved_distance,op_count,seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub stem: String,
    pub achieved_distance: f64,
    pub op_count: usize,
    pub seed: u64,
}

pub const MANIFEST_HEADER: &str = "stem,achieved_distance,op_count,seed";

pub fn write_manifest(mut w: impl Write, entries: &[ManifestEntry]) -> Result<()> {
    writeln!(w, "{MANIFEST_HEADER}")?;
    for e in entries {
        if e.stem.contains([',', '\n']) {
            return Err(Error::format("manifest", "stem", format!("`{}` contains a separator", e.stem)));
        }
        writeln!(w, "{},{},{},{}", e.stem, e.achieved_distance, e.op_count, e.seed)?;
    }
    Ok(())
}

pub fn read_manifest(r: impl BufRead) -> Result<Vec<ManifestEntry>> {
    let mut lines = r.lines();
    match lines.next().transpose()? {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::format("manifest", "header", format!("expected `{MANIFEST_HEADER}`, got {other:?}")))
        }
    }
    let mut out = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::format("manifest", "line", format!("expected 4 fields in `{line}`")));
        }
        let bad = |field: &'static str| Error::format("manifest", field, format!("unparsable in `{line}`"));
        out.push(ManifestEntry {
            stem: fields[0].to_string(),
            achieved_distance: fields[1].parse().map_err(|_| bad("achieved_distance"))?,
            op_count: fields[2].parse().map_err(|_| bad("op_count"))?,
            seed: fields[3].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{apply_edit, EditAction};
    use crate::color::mean_lab_distance;

    fn textured(seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(24, 16, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn mask_midpoint_and_tail() {
        let img = RgbImage::filled(1, 1, [0.6; 3]);
        let w = soft_mask(&img, Region::Highlight, 10.0, 0.6)[0];
        assert!((w - 0.5).abs() < 1e-6);
        let white = RgbImage::filled(3, 3, [1.0; 3]);
        let w = soft_mask(&white, Region::Highlight, 10.0, 0.6)[0];
        assert!((w - 1.0 / (1.0 + (-4.0f32).exp())).abs() < 1e-6);
        assert!((w - 0.982).abs() < 1e-3);
        assert!(soft_mask(&white, Region::Shadow, 10.0, 0.4).iter().all(|&w| w < 0.5));
        assert!(soft_mask(&white, Region::Global, 10.0, 0.4).iter().all(|&w| w == 1.0));
    }

    #[test]
    fn zero_weight_limit_is_identity() {
        // Dark pixels, highlight mask with a near-step sigmoid.
        let img = RgbImage::filled(4, 4, [0.1, 0.15, 0.05]);
        let mask = MaskParams {
            steepness: 1e4,
            ..MaskParams::default()
        };
        let op = DistortOp {
            kind: DistortKind::Brightness,
            region: Region::Highlight,
            factor: 1.15,
        };
        assert_eq!(apply_distort_op(&img, &op, &mask), img);
    }

    #[test]
    fn global_brightness_and_black_highlight() {
        let gray = RgbImage::filled(2, 2, [0.5; 3]);
        let op = DistortOp {
            kind: DistortKind::Brightness,
            region: Region::Global,
            factor: 1.1,
        };
        let out = apply_distort_op(&gray, &op, &MaskParams::default());
        assert!(out.data().iter().all(|v| (v - 0.55).abs() < 1e-6));

        let black = RgbImage::filled(2, 2, [0.0; 3]);
        let op = DistortOp {
            region: Region::Highlight,
            ..op
        };
        assert_eq!(apply_distort_op(&black, &op, &MaskParams::default()), black);
    }

    #[test]
    fn pairs_land_in_band_and_replay() {
        let cfg = DistortConfig::default();
        for s in 0..8 {
            let img = textured(s);
            let pair = synthesize_pair(&img, "t", s * 31, &cfg).unwrap();
            assert!((10.0..=20.0).contains(&pair.achieved_distance));
            let d = mean_lab_distance(&pair.distorted, &pair.reference).unwrap();
            assert_eq!(d, pair.achieved_distance);
            let again = synthesize_pair(&img, "t", s * 31, &cfg).unwrap();
            assert_eq!(again.distorted, pair.distorted);
            assert_eq!(again.op_log, pair.op_log);
        }
    }

    #[test]
    fn black_reference_fails_with_name() {
        let black = RgbImage::filled(8, 8, [0.0; 3]);
        let cfg = DistortConfig {
            max_restarts: 5,
            catalogue: vec![(DistortKind::Brightness, Region::Global), (DistortKind::Contrast, Region::Global)],
            ..DistortConfig::default()
        };
        match synthesize_pair(&black, "night.png", 1, &cfg) {
            Err(Error::SynthesisFailure { name, restarts }) => {
                assert_eq!(name, "night.png");
                assert_eq!(restarts, 5);
            }
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn sampled_ops_differ_from_every_edit_action() {
        let img = textured(99);
        let cfg = DistortConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let edited: Vec<RgbImage> = EditAction::ALL.iter().map(|&a| apply_edit(&img, a)).collect();
        for _ in 0..300 {
            let op = cfg.sample_op(&mut rng);
            assert!(op.factor <= 0.97 || op.factor >= 1.03);
            assert!((0.85..=1.15).contains(&op.factor));
            let out = apply_distort_op(&img, &op, &cfg.mask);
            for e in &edited {
                assert_ne!(&out, e, "{op} reproduces an edit action");
            }
        }
    }

    #[test]
    fn manifest_round_trip_and_errors() {
        let entries = vec![
            ManifestEntry {
                stem: "a_000".into(),
                achieved_distance: 12.345678901234,
                op_count: 3,
                seed: 42,
            },
            ManifestEntry {
                stem: "b_000".into(),
                achieved_distance: 19.9,
                op_count: 1,
                seed: u64::MAX,
            },
        ];
        let mut buf = Vec::new();
        write_manifest(&mut buf, &entries).unwrap();
        assert_eq!(read_manifest(buf.as_slice()).unwrap(), entries);
        assert!(read_manifest("stem,x\n".as_bytes()).is_err());
        assert!(read_manifest(format!("{MANIFEST_HEADER}\na,b,1,2\n").as_bytes()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DistortConfig::default().validate().is_ok());
        let bad = DistortConfig {
            catalogue: vec![(DistortKind::ChannelPush(PushChannel::Red), Region::Shadow)],
            ..DistortConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!(DistortConfig::with_catalogue(vec![]).validate().is_err());
    }
}
