//! Episode environment: applies edit actions to an image and pays the drop
//! in mean CIELab distance to the target as reward.

use std::io::{Read, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actions::{apply_edit, EditAction, NUM_ACTIONS};
use crate::color::{mean_lab_distance_lab, srgb_to_lab, LabImage, RgbImage};
use crate::error::{Error, Result};
use crate::features::StateVector;

pub const DEFAULT_MAX_STEPS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub action_index: usize,
    pub action_name: String,
    pub q_value: Option<f32>,
    pub distance_after: Option<f64>,
}

impl TraceEntry {
    pub fn action(&self) -> Result<EditAction> {
        let a = EditAction::from_index(self.action_index)?;
        if a.name() != self.action_name {
            return Err(Error::format(
                "trace",
                "action_name",
                format!("`{}` does not match index {}", self.action_name, self.action_index),
            ));
        }
        Ok(a)
    }
}

/// The ordered, human-readable list of edits applied to an image.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionSequence {
    entries: Vec<TraceEntry>,
}

impl ActionSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, action: EditAction, q_value: Option<f32>, distance_after: Option<f64>) {
        self.entries.push(TraceEntry {
            step: self.entries.len(),
            action_index: action.index(),
            action_name: action.name().to_string(),
            q_value,
            distance_after,
        });
    }

    pub fn entries(&self) -> &[TraceEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn actions(&self) -> impl Iterator<Item = EditAction> + '_ {
        self.entries
            .iter()
            .map(|e| EditAction::from_index(e.action_index).expect("validated on construction"))
    }

    /// Replays the recorded edits on another image (e.g. the full-resolution original).
    pub fn replay(&self, img: &RgbImage) -> RgbImage {
        self.actions().fold(img.clone(), |acc, a| apply_edit(&acc, a))
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    /// Parses and validates a trace: steps count up from 0 and names match indices.
    pub fn read_json(r: impl Read) -> Result<Self> {
        let seq: ActionSequence = serde_json::from_reader(r)?;
        for (i, e) in seq.entries.iter().enumerate() {
            if e.step != i {
                return Err(Error::format("trace", "step", format!("entry {i} has step {}", e.step)));
            }
            e.action()?;
        }
        Ok(seq)
    }
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub state: Arc<StateVector>,
    pub action_index: usize,
    pub reward: f32,
    pub next_state: Arc<StateVector>,
    pub terminal: bool,
}

impl Transition {
    pub fn new(
        state: Arc<StateVector>,
        action_index: usize,
        reward: f32,
        next_state: Arc<StateVector>,
        terminal: bool,
    ) -> Result<Self> {
        if action_index >= NUM_ACTIONS {
            return Err(Error::param("action_index", format!("{action_index} out of range")));
        }
        if !reward.is_finite() {
            return Err(Error::param("reward", "must be finite"));
        }
        Ok(Self {
            state,
            action_index,
            reward,
            next_state,
            terminal,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub terminal: bool,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct Episode {
    current: RgbImage,
    current_lab: LabImage,
    target: RgbImage,
    target_lab: LabImage,
    step: usize,
    max_steps: usize,
    initial_distance: f64,
    last_distance: f64,
    trace: ActionSequence,
}

impl Episode {
    pub fn reset(input: RgbImage, target: RgbImage, max_steps: usize) -> Result<Self> {
        if !input.same_dims(&target) {
            return Err(Error::dims(
                "episode input vs target",
                format!("{}x{}", target.width(), target.height()),
                format!("{}x{}", input.width(), input.height()),
            ));
        }
        let current_lab = srgb_to_lab(&input);
        let target_lab = srgb_to_lab(&target);
        let d = mean_lab_distance_lab(&current_lab, &target_lab)?;
        Ok(Self {
            current: input,
            current_lab,
            target,
            target_lab,
            step: 0,
            max_steps,
            initial_distance: d,
            last_distance: d,
            trace: ActionSequence::new(),
        })
    }

    pub fn step(&mut self, action: EditAction) -> Result<StepOutcome> {
        self.step_with_q(action, None)
    }

    /// Applies `action`, recording `q_value` in the trace.
    pub fn step_with_q(&mut self, action: EditAction, q_value: Option<f32>) -> Result<StepOutcome> {
        if self.is_terminal() {
            return Err(Error::Protocol(format!(
                "step {} requested on an episode capped at {} steps",
                self.step, self.max_steps
            )));
        }
        self.current = apply_edit(&self.current, action);
        self.current_lab = srgb_to_lab(&self.current);
        let d = mean_lab_distance_lab(&self.current_lab, &self.target_lab)?;
        let reward = self.last_distance - d;
        self.last_distance = d;
        self.step += 1;
        self.trace.push(action, q_value, Some(d));
        Ok(StepOutcome {
            reward,
            terminal: self.is_terminal(),
            distance: d,
        })
    }

    pub fn is_terminal(&self) -> bool {
        self.step >= self.max_steps
    }

    pub fn current(&self) -> &RgbImage {
        &self.current
    }

    pub fn current_lab(&self) -> &LabImage {
        &self.current_lab
    }

    pub fn target(&self) -> &RgbImage {
        &self.target
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn initial_distance(&self) -> f64 {
        self.initial_distance
    }

    pub fn last_distance(&self) -> f64 {
        self.last_distance
    }

    pub fn trace(&self) -> &ActionSequence {
        &self.trace
    }

    pub fn into_parts(self) -> (RgbImage, ActionSequence) {
        (self.current, self.trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::color::mean_lab_distance;

    fn gradient(w: usize, h: usize) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| [x as f32 / w as f32, y as f32 / h as f32, 0.4])
    }

    #[test]
    fn reset_state() {
        let img = gradient(8, 8);
        let ep = Episode::reset(img.clone(), img.clone(), 5).unwrap();
        assert_eq!(ep.last_distance(), 0.0);
        assert!(ep.trace().is_empty());
        assert_eq!(ep.step_index(), 0);
        assert!(Episode::reset(gradient(8, 8), gradient(8, 4), 5).is_err());
    }

    #[test]
    fn no_op_action_earns_nothing() {
        let white = RgbImage::filled(4, 4, [1.0; 3]);
        let target = RgbImage::filled(4, 4, [0.5; 3]);
        let mut ep = Episode::reset(white, target, 3).unwrap();
        let out = ep.step(EditAction::BrightnessUp).unwrap();
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn landing_on_target_pays_full_distance() {
        let target = RgbImage::filled(4, 4, [0.5; 3]);
        let input = apply_edit(&target, EditAction::RedBlueDown);
        let mut ep = Episode::reset(input.clone(), apply_edit(&input, EditAction::BrightnessUp), 3).unwrap();
        let d0 = ep.last_distance();
        let out = ep.step(EditAction::BrightnessUp).unwrap();
        assert_eq!(out.distance, 0.0);
        assert_eq!(out.reward, d0);
    }

    #[test]
    fn terminal_exactly_at_cap() {
        let img = gradient(6, 6);
        let mut ep = Episode::reset(img.clone(), img, 2).unwrap();
        assert!(!ep.step(EditAction::ContrastUp).unwrap().terminal);
        assert!(ep.step(EditAction::ContrastUp).unwrap().terminal);
        assert!(matches!(ep.step(EditAction::ContrastUp), Err(Error::Protocol(_))));
    }

    #[test]
    fn stored_distance_matches_recomputation() {
        let target = gradient(10, 7);
        let input = apply_edit(&apply_edit(&target, EditAction::SaturationDown), EditAction::BrightnessDown);
        let mut ep = Episode::reset(input, target.clone(), 4).unwrap();
        for a in [EditAction::BrightnessUp, EditAction::GreenBlueUp, EditAction::ContrastDown] {
            let before = mean_lab_distance(ep.current(), &target).unwrap();
            let out = ep.step(a).unwrap();
            let after = mean_lab_distance(ep.current(), &target).unwrap();
            assert!((out.reward - (before - after)).abs() < 1e-6);
        }
    }

    #[test]
    fn trace_json_round_trip_and_validation() {
        let img = gradient(5, 5);
        let mut ep = Episode::reset(img.clone(), img, 4).unwrap();
        ep.step_with_q(EditAction::BrightnessUp, Some(0.5)).unwrap();
        ep.step_with_q(EditAction::RedGreenDown, Some(-0.25)).unwrap();
        let mut buf = Vec::new();
        ep.trace().write_json(&mut buf).unwrap();
        let parsed = ActionSequence::read_json(buf.as_slice()).unwrap();
        assert_eq!(&parsed, ep.trace());
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let first = &v.as_array().unwrap()[0];
        for key in ["step", "action_index", "action_name", "q_value", "distance_after"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }

        let bad = r#"[{"step":0,"action_index":3,"action_name":"brightness_up","q_value":null,"distance_after":null}]"#;
        assert!(ActionSequence::read_json(bad.as_bytes()).is_err());
        let bad = r#"[{"step":1,"action_index":5,"action_name":"brightness_up","q_value":null,"distance_after":null}]"#;
        assert!(ActionSequence::read_json(bad.as_bytes()).is_err());
    }

    #[test]
    fn transition_validation() {
        let img = gradient(4, 4);
        let s = Arc::new(
            crate::features::ContextProvider::Tiny
                .observe(&img, &srgb_to_lab(&img))
                .unwrap(),
        );
        assert!(Transition::new(s.clone(), 12, 0.0, s.clone(), false).is_err());
        assert!(Transition::new(s.clone(), 0, f32::NAN, s.clone(), false).is_err());
        assert!(Transition::new(s.clone(), 11, 1.0, s, true).is_ok());
    }
}
