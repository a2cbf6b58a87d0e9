//! The twelve discrete global adjustments the agent chooses from.
//!
//! Action indices `0..12` are a frozen wire encoding used in checkpoints and
//! trace files.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::color::RgbImage;
use crate::error::{Error, Result};

pub const NUM_ACTIONS: usize = 12;

const DOWN: f32 = 0.95;
const UP: f32 = 1.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EditAction {
    ContrastDown,
    ContrastUp,
    SaturationDown,
    SaturationUp,
    BrightnessDown,
    BrightnessUp,
    RedGreenDown,
    RedGreenUp,
    GreenBlueDown,
    GreenBlueUp,
    RedBlueDown,
    RedBlueUp,
}

/// Pair of channels scaled together by the white-balance actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelPair {
    RedGreen,
    GreenBlue,
    RedBlue,
}

impl ChannelPair {
    fn mask(self) -> [bool; 3] {
        match self {
            ChannelPair::RedGreen => [true, true, false],
            ChannelPair::GreenBlue => [false, true, true],
            ChannelPair::RedBlue => [true, false, true],
        }
    }
}

impl EditAction {
    pub const ALL: [EditAction; NUM_ACTIONS] = [
        EditAction::ContrastDown,
        EditAction::ContrastUp,
        EditAction::SaturationDown,
        EditAction::SaturationUp,
        EditAction::BrightnessDown,
        EditAction::BrightnessUp,
        EditAction::RedGreenDown,
        EditAction::RedGreenUp,
        EditAction::GreenBlueDown,
        EditAction::GreenBlueUp,
        EditAction::RedBlueDown,
        EditAction::RedBlueUp,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        Self::ALL
            .get(index)
            .copied()
            .ok_or_else(|| Error::param("action_index", format!("{index} is not in 0..{NUM_ACTIONS}")))
    }

    /// 0.95 for the decreasing variants, 1.05 for the increasing ones.
    pub fn factor(self) -> f32 {
        if self.index() % 2 == 0 {
            DOWN
        } else {
            UP
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EditAction::ContrastDown => "contrast_down",
            EditAction::ContrastUp => "contrast_up",
            EditAction::SaturationDown => "saturation_down",
            EditAction::SaturationUp => "saturation_up",
            EditAction::BrightnessDown => "brightness_down",
            EditAction::BrightnessUp => "brightness_up",
            EditAction::RedGreenDown => "red_green_down",
            EditAction::RedGreenUp => "red_green_up",
            EditAction::GreenBlueDown => "green_blue_down",
            EditAction::GreenBlueUp => "green_blue_up",
            EditAction::RedBlueDown => "red_blue_down",
            EditAction::RedBlueUp => "red_blue_up",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name)
    }
}

impl fmt::Display for EditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn apply_edit(img: &RgbImage, action: EditAction) -> RgbImage {
    let f = action.factor();
    let out = match action {
        EditAction::ContrastDown | EditAction::ContrastUp => adjust_contrast(img, f),
        EditAction::SaturationDown | EditAction::SaturationUp => adjust_saturation(img, f),
        EditAction::BrightnessDown | EditAction::BrightnessUp => adjust_brightness(img, f),
        EditAction::RedGreenDown | EditAction::RedGreenUp => scale_channels(img, ChannelPair::RedGreen, f),
        EditAction::GreenBlueDown | EditAction::GreenBlueUp => scale_channels(img, ChannelPair::GreenBlue, f),
        EditAction::RedBlueDown | EditAction::RedBlueUp => scale_channels(img, ChannelPair::RedBlue, f),
    };
    out.expect("action factors are positive")
}

fn check_factor(f: f32) -> Result<()> {
    if f > 0.0 && f.is_finite() {
        Ok(())
    } else {
        Err(Error::param("factor", format!("must be positive and finite, got {f}")))
    }
}

pub fn adjust_brightness(img: &RgbImage, f: f32) -> Result<RgbImage> {
    check_factor(f)?;
    Ok(img.map_pixels(|p| p.map(|c| c * f)))
}

/// Affine contrast around the mean of all channel values of the image.
pub fn adjust_contrast(img: &RgbImage, f: f32) -> Result<RgbImage> {
    check_factor(f)?;
    let mean = mean_channel_value(img);
    Ok(img.map_pixels(|p| p.map(|c| mean + (c - mean) * f)))
}

pub(crate) fn mean_channel_value(img: &RgbImage) -> f32 {
    let sum: f64 = img.data().iter().map(|&v| v as f64).sum();
    (sum / img.data().len() as f64) as f32
}

/// Scales HSV saturation, keeping hue and value.
pub fn adjust_saturation(img: &RgbImage, f: f32) -> Result<RgbImage> {
    check_factor(f)?;
    let f = f as f64;
    Ok(img.map_pixels(|p| {
        let [h, s, v] = rgb_to_hsv(p.map(f64::from));
        hsv_to_rgb([h, (s * f).clamp(0.0, 1.0), v]).map(|c| c as f32)
    }))
}

pub fn scale_channels(img: &RgbImage, pair: ChannelPair, f: f32) -> Result<RgbImage> {
    check_factor(f)?;
    let mask = pair.mask();
    Ok(img.map_pixels(|p| std::array::from_fn(|c| if mask[c] { p[c] * f } else { p[c] })))
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    [h, s, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(img: &RgbImage, expected: &[f32], tol: f32) {
        for (a, b) in img.data().iter().zip(expected) {
            assert!((a - b).abs() < tol, "{:?} vs {expected:?}", img.data());
        }
    }

    #[test]
    fn index_is_a_bijection() {
        for (i, a) in EditAction::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(EditAction::from_index(i).unwrap(), *a);
            assert_eq!(EditAction::from_name(a.name()), Some(*a));
        }
        assert!(EditAction::from_index(12).is_err());
        assert_eq!(EditAction::ContrastDown.factor(), 0.95);
        assert_eq!(EditAction::RedBlueUp.factor(), 1.05);
    }

    #[test]
    fn brightness_cases() {
        let black = RgbImage::filled(3, 2, [0.0; 3]);
        assert_eq!(apply_edit(&black, EditAction::BrightnessUp), black);
        let white = RgbImage::filled(3, 2, [1.0; 3]);
        assert_eq!(apply_edit(&white, EditAction::BrightnessUp), white);
        let gray = RgbImage::filled(3, 2, [0.5; 3]);
        assert_close(&apply_edit(&gray, EditAction::BrightnessUp), &[0.525; 18], 1e-6);

        let p = RgbImage::filled(1, 1, [0.8; 3]);
        assert_close(&adjust_brightness(&p, 0.95).unwrap(), &[0.76; 3], 1e-6);
        let p = RgbImage::filled(1, 1, [0.99; 3]);
        assert_eq!(adjust_brightness(&p, 1.05).unwrap().data(), &[1.0; 3]);
        assert_eq!(adjust_brightness(&p, 1.0).unwrap(), p);
        assert!(adjust_brightness(&p, 0.0).is_err());
        assert!(adjust_brightness(&p, -1.0).is_err());
    }

    #[test]
    fn contrast_cases() {
        let uniform = RgbImage::filled(4, 4, [0.3, 0.3, 0.3]);
        assert_close(&adjust_contrast(&uniform, 1.05).unwrap(), uniform.data(), 1e-6);
        assert_close(&adjust_contrast(&uniform, 0.95).unwrap(), uniform.data(), 1e-6);

        let two = RgbImage::new(2, 1, vec![0.4, 0.4, 0.4, 0.6, 0.6, 0.6]).unwrap();
        let out = adjust_contrast(&two, 1.05).unwrap();
        assert_close(&out, &[0.395, 0.395, 0.395, 0.605, 0.605, 0.605], 1e-6);
        assert_close(&adjust_contrast(&two, 1.0).unwrap(), two.data(), 1e-7);
        assert!(adjust_contrast(&two, 0.0).is_err());
    }

    #[test]
    fn saturation_cases() {
        let gray = RgbImage::new(2, 1, vec![0.2, 0.2, 0.2, 0.7, 0.7, 0.7]).unwrap();
        assert_close(&adjust_saturation(&gray, 1.05).unwrap(), gray.data(), 1e-7);
        let red = RgbImage::filled(1, 1, [1.0, 0.0, 0.0]);
        assert_close(&adjust_saturation(&red, 0.95).unwrap(), &[1.0, 0.05, 0.05], 1e-6);
        let mixed = RgbImage::filled(1, 1, [0.3, 0.6, 0.9]);
        assert_close(&adjust_saturation(&mixed, 1.0).unwrap(), mixed.data(), 1e-6);
    }

    #[test]
    fn channel_pair_cases() {
        let gray = RgbImage::filled(1, 1, [0.4; 3]);
        assert_close(
            &scale_channels(&gray, ChannelPair::RedGreen, 1.05).unwrap(),
            &[0.42, 0.42, 0.4],
            1e-6,
        );
        let blue = RgbImage::filled(1, 1, [0.0, 0.0, 1.0]);
        assert_eq!(scale_channels(&blue, ChannelPair::RedGreen, 0.95).unwrap(), blue);
        assert_eq!(scale_channels(&blue, ChannelPair::RedGreen, 1.05).unwrap(), blue);
        assert_eq!(scale_channels(&gray, ChannelPair::RedBlue, 1.0).unwrap(), gray);
    }

    #[test]
    fn hsv_round_trip() {
        for &p in &[[0.1, 0.5, 0.9], [0.9, 0.2, 0.4], [0.3, 0.3, 0.31], [1.0, 1.0, 0.0]] {
            let back = hsv_to_rgb(rgb_to_hsv(p));
            for c in 0..3 {
                assert!((back[c] - p[c]).abs() < 1e-12);
            }
        }
    }
}

#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn image() -> impl Strategy<Value = RgbImage> {
        (1usize..=5, 1usize..=5).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0.0f32..=1.0, w * h * 3).prop_map(move |d| RgbImage::new(w, h, d).unwrap())
        })
    }

    fn action() -> impl Strategy<Value = EditAction> {
        (0..NUM_ACTIONS).prop_map(|i| EditAction::ALL[i])
    }

    proptest! {
        #[test]
        fn every_action_keeps_size_and_gamut(img in image(), a in action()) {
            let out = apply_edit(&img, a);
            prop_assert!(out.same_dims(&img));
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn brightness_is_monotone(img in image()) {
            let up = apply_edit(&img, EditAction::BrightnessUp);
            let down = apply_edit(&img, EditAction::BrightnessDown);
            for ((u, d), o) in up.data().iter().zip(down.data()).zip(img.data()) {
                prop_assert!(u >= o && d <= o);
            }
        }

        #[test]
        fn saturation_leaves_grays_alone(v in 0.0f32..=1.0, a in prop_oneof![Just(EditAction::SaturationUp), Just(EditAction::SaturationDown)]) {
            let img = RgbImage::filled(2, 2, [v; 3]);
            let out = apply_edit(&img, a);
            prop_assert!(out.data().iter().all(|c| (c - v).abs() < 1e-6));
        }

        #[test]
        fn channel_pairs_leave_third_channel(img in image(), i in 6usize..12) {
            let a = EditAction::ALL[i];
            let untouched = match a {
                EditAction::RedGreenDown | EditAction::RedGreenUp => 2,
                EditAction::GreenBlueDown | EditAction::GreenBlueUp => 0,
                _ => 1,
            };
            let out = apply_edit(&img, a);
            for (p, q) in img.pixels().zip(out.pixels()) {
                prop_assert_eq!(p[untouched], q[untouched]);
            }
        }

        #[test]
        fn hsv_round_trip(r in 0.0f64..=1.0, g in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let back = hsv_to_rgb(rgb_to_hsv([r, g, b]));
            for (x, y) in back.iter().zip([r, g, b]) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
