//! Browser bindings: edit a canvas image with the agent's actions, synthesize
//! a seeded distortion of it, and visualize highlight/shadow masks.
//!
//! Images cross the boundary as RGBA bytes (`ImageData.data`); alpha is
//! ignored on input and written as opaque on output.

use retouch_core::distort::{soft_mask, synthesize_pair, DistortConfig, Region};
use retouch_core::synth::reference_scene;
use retouch_core::{apply_edit, mean_lab_distance, EditAction, RgbImage};
use wasm_bindgen::prelude::*;

type Outcome<T> = std::result::Result<T, String>;

fn from_rgba(width: usize, height: usize, rgba: &[u8]) -> Outcome<RgbImage> {
    if rgba.len() != width * height * 4 {
        return Err(format!("expected {} RGBA bytes for {width}x{height}, got {}", width * height * 4, rgba.len()));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    RgbImage::from_rgb8(width, height, &rgb).map_err(|e| e.to_string())
}

fn to_rgba(img: &RgbImage) -> Vec<u8> {
    img.to_rgb8().chunks_exact(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect()
}

fn gray_to_rgba(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .flat_map(|v| {
            let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect()
}

fn catalogue(name: &str) -> Outcome<DistortConfig> {
    match name {
        "full" => Ok(DistortConfig::default()),
        "global-tone" => Ok(DistortConfig::global_tone()),
        "regional-tone" => Ok(DistortConfig::regional_tone()),
        other => Err(format!("unknown operation set `{other}`")),
    }
}

fn region(name: &str) -> Outcome<Region> {
    match name {
        "highlight" => Ok(Region::Highlight),
        "shadow" => Ok(Region::Shadow),
        other => Err(format!("unknown region `{other}`")),
    }
}

fn js(e: String) -> JsError {
    JsError::new(&e)
}

/// Snake-case names of the twelve edit actions, in index order.
#[wasm_bindgen(js_name = actionNames)]
pub fn action_names() -> Vec<String> {
    EditAction::ALL.iter().map(|a| a.name().to_string()).collect()
}

/// A procedurally generated, well-exposed scene as RGBA.
#[wasm_bindgen(js_name = referenceScene)]
pub fn reference_scene_rgba(width: usize, height: usize, seed: u32) -> Vec<u8> {
    to_rgba(&reference_scene(width, height, seed as u64))
}

fn apply_action_inner(width: usize, height: usize, rgba: &[u8], action: &str) -> Outcome<Vec<u8>> {
    let action = EditAction::from_name(action).ok_or_else(|| format!("unknown action `{action}`"))?;
    Ok(to_rgba(&apply_edit(&from_rgba(width, height, rgba)?, action)))
}

#[wasm_bindgen(js_name = applyAction)]
pub fn apply_action(width: usize, height: usize, rgba: &[u8], action: &str) -> Result<Vec<u8>, JsError> {
    apply_action_inner(width, height, rgba, action).map_err(js)
}

fn lab_distance_inner(width: usize, height: usize, a: &[u8], b: &[u8]) -> Outcome<f64> {
    mean_lab_distance(&from_rgba(width, height, a)?, &from_rgba(width, height, b)?).map_err(|e| e.to_string())
}

/// Mean per-pixel CIELab distance between two RGBA images of one size.
#[wasm_bindgen(js_name = labDistance)]
pub fn lab_distance(width: usize, height: usize, a: &[u8], b: &[u8]) -> Result<f64, JsError> {
    lab_distance_inner(width, height, a, b).map_err(js)
}

#[wasm_bindgen]
pub struct Distortion {
    rgba: Vec<u8>,
    distance: f64,
    ops: Vec<String>,
}

#[wasm_bindgen]
impl Distortion {
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn distance(&self) -> f64 {
        self.distance
    }

    #[wasm_bindgen(getter)]
    pub fn ops(&self) -> Vec<String> {
        self.ops.clone()
    }
}

fn distort_inner(width: usize, height: usize, rgba: &[u8], seed: u32, ops: &str) -> Outcome<Distortion> {
    let reference = from_rgba(width, height, rgba)?;
    let pair = synthesize_pair(&reference, "canvas", seed as u64, &catalogue(ops)?).map_err(|e| e.to_string())?;
    Ok(Distortion {
        rgba: to_rgba(&pair.distorted),
        distance: pair.achieved_distance,
        ops: pair.op_log.iter().map(|op| op.to_string()).collect(),
    })
}

/// Seeded random distortion landing 10 to 20 CIELab units from the input.
/// `ops` is `full`, `global-tone` or `regional-tone`.
#[wasm_bindgen]
pub fn distort(width: usize, height: usize, rgba: &[u8], seed: u32, ops: &str) -> Result<Distortion, JsError> {
    distort_inner(width, height, rgba, seed, ops).map_err(js)
}

fn region_mask_inner(width: usize, height: usize, rgba: &[u8], which: &str) -> Outcome<Vec<u8>> {
    let img = from_rgba(width, height, rgba)?;
    let cfg = DistortConfig::default().mask;
    let r = region(which)?;
    let pivot = if r == Region::Shadow { cfg.shadow_pivot } else { cfg.highlight_pivot };
    Ok(gray_to_rgba(&soft_mask(&img, r, cfg.steepness, pivot)))
}

/// Soft highlight or shadow selection as a grayscale RGBA image.
#[wasm_bindgen(js_name = regionMask)]
pub fn region_mask(width: usize, height: usize, rgba: &[u8], which: &str) -> Result<Vec<u8>, JsError> {
    region_mask_inner(width, height, rgba, which).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn canvas(w: usize, h: usize) -> Vec<u8> {
        reference_scene_rgba(w, h, 3)
    }

    #[test]
    fn rgba_conversion_round_trips_opaque_pixels() {
        let rgba = canvas(9, 6);
        assert_eq!(rgba.len(), 9 * 6 * 4);
        assert!(rgba.chunks_exact(4).all(|p| p[3] == 255));
        assert_eq!(to_rgba(&from_rgba(9, 6, &rgba).unwrap()), rgba);
        assert!(from_rgba(9, 5, &rgba).is_err());
    }

    #[test]
    fn actions_match_core() {
        assert_eq!(action_names().len(), 12);
        let rgba = canvas(8, 8);
        let out = apply_action_inner(8, 8, &rgba, "brightness_up").unwrap();
        let expected = to_rgba(&apply_edit(&from_rgba(8, 8, &rgba).unwrap(), EditAction::BrightnessUp));
        assert_eq!(out, expected);
        assert!(apply_action_inner(8, 8, &rgba, "sharpen").is_err());
    }

    #[test]
    fn distortion_is_seeded_and_in_band() {
        let rgba = canvas(24, 24);
        let a = distort_inner(24, 24, &rgba, 5, "global-tone").unwrap();
        let b = distort_inner(24, 24, &rgba, 5, "global-tone").unwrap();
        assert_eq!(a.rgba, b.rgba);
        assert_eq!(a.ops, b.ops);
        assert!((10.0..=20.0).contains(&a.distance));
        assert!(!a.ops.is_empty());
        // 8-bit quantization moves the distance only slightly.
        let measured = lab_distance_inner(24, 24, &rgba, &a.rgba).unwrap();
        assert!((measured - a.distance).abs() < 0.5, "{measured} vs {}", a.distance);
        assert!(distort_inner(24, 24, &rgba, 5, "everything").is_err());
    }

    #[test]
    fn masks_are_gray_and_complementary_in_brightness() {
        let rgba: Vec<u8> = [[250u8, 250, 250, 255], [5, 5, 5, 255]].concat();
        let hi = region_mask_inner(2, 1, &rgba, "highlight").unwrap();
        let lo = region_mask_inner(2, 1, &rgba, "shadow").unwrap();
        assert!(hi[0] > 240 && hi[4] < 15);
        assert!(lo[0] < 15 && lo[4] > 240);
        assert!(hi.chunks_exact(4).all(|p| p[0] == p[1] && p[1] == p[2]));
        assert!(region_mask_inner(2, 1, &rgba, "midtone").is_err());
    }
}
