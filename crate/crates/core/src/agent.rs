//! Action selection over Q-values and the greedy enhancement loop.

use rand::Rng;

use crate::actions::{apply_edit, EditAction, NUM_ACTIONS};
use crate::color::{mean_lab_distance_lab, srgb_to_lab, RgbImage};
use crate::env::{ActionSequence, DEFAULT_MAX_STEPS};
use crate::error::{Error, Result};
use crate::features::{ContextProvider, StateVector};
use crate::nn::MlpNetwork;

/// Working copies used for feature extraction are at most this wide/tall.
pub const WORKING_MAX_SIDE: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QValues(pub [f32; NUM_ACTIONS]);

impl QValues {
    pub fn get(&self, action: EditAction) -> f32 {
        self.0[action.index()]
    }

    /// Highest value; ties go to the lowest index.
    pub fn argmax(&self) -> (EditAction, f32) {
        let mut best = 0;
        for i in 1..NUM_ACTIONS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        (EditAction::ALL[best], self.0[best])
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Decision {
    Apply(EditAction),
    Stop,
}

pub fn q_values(net: &MlpNetwork, state: &StateVector) -> Result<QValues> {
    let out = net.forward(state)?;
    let arr: [f32; NUM_ACTIONS] = out
        .try_into()
        .map_err(|v: Vec<f32>| Error::dims("network output width", NUM_ACTIONS, v.len()))?;
    Ok(QValues(arr))
}

/// Best action if its value is strictly positive, otherwise stop.
pub fn select_greedy(q: &QValues) -> Decision {
    let (action, value) = q.argmax();
    if value > 0.0 {
        Decision::Apply(action)
    } else {
        Decision::Stop
    }
}

/// Uniform random action with probability `epsilon`, else the argmax. Never stops.
pub fn select_eps_greedy(q: &QValues, epsilon: f64, rng: &mut impl Rng) -> EditAction {
    if rng.random::<f64>() < epsilon {
        EditAction::ALL[rng.random_range(0..NUM_ACTIONS)]
    } else {
        q.argmax().0
    }
}

#[derive(Clone, Debug)]
pub struct EnhanceOptions<'a> {
    pub max_steps: usize,
    /// When given, every trace entry records the distance to this image
    /// (at working resolution).
    pub target: Option<&'a RgbImage>,
}

impl Default for EnhanceOptions<'_> {
    fn default() -> Self {
        Self {
            max_steps: DEFAULT_MAX_STEPS,
            target: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Enhanced {
    pub image: RgbImage,
    pub trace: ActionSequence,
}

/// Greedy enhancement: repeatedly pick the best action until no action has
/// positive value or `max_steps` is reached. Decisions are made on a copy no
/// larger than [`WORKING_MAX_SIDE`]; the chosen actions are then replayed on
/// the full-resolution input.
pub fn enhance(
    net: &MlpNetwork,
    input: &RgbImage,
    context: &ContextProvider,
    opts: &EnhanceOptions<'_>,
) -> Result<Enhanced> {
    let layout = context.layout();
    if net.input_dim() != layout.input_dim() {
        return Err(Error::dims("network input vs feature layout", layout.input_dim(), net.input_dim()));
    }
    let mut work = input.downsample_to_fit(WORKING_MAX_SIDE);
    let target_lab = match opts.target {
        Some(t) if !t.same_dims(input) => {
            return Err(Error::dims(
                "diagnostic target",
                format!("{}x{}", input.width(), input.height()),
                format!("{}x{}", t.width(), t.height()),
            ))
        }
        Some(t) => Some(srgb_to_lab(&t.downsample_to_fit(WORKING_MAX_SIDE))),
        None => None,
    };
    let mut trace = ActionSequence::new();
    let mut lab = srgb_to_lab(&work);
    for _ in 0..opts.max_steps {
        let state = context.observe(&work, &lab)?;
        let q = q_values(net, &state)?;
        let action = match select_greedy(&q) {
            Decision::Stop => break,
            Decision::Apply(a) => a,
        };
        work = apply_edit(&work, action);
        lab = srgb_to_lab(&work);
        let distance = match &target_lab {
            Some(t) => Some(mean_lab_distance_lab(&lab, t)?),
            None => None,
        };
        trace.push(action, Some(q.get(action)), distance);
    }
    let image = if work.same_dims(input) {
        work
    } else {
        trace.replay(input)
    };
    Ok(Enhanced { image, trace })
}
