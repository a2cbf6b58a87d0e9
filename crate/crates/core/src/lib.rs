//! Learned step-wise global color enhancement.
//!
//! An agent looks at an image (a color histogram plus a context descriptor),
//! scores twelve global edits with a Q-network, applies the best one, and
//! repeats until no edit is expected to help. Training needs only good
//! reference images: they are randomly distorted and the agent is rewarded
//! for every step that moves the distorted image back toward its reference.

pub mod actions;
pub mod agent;
pub mod color;
pub mod distort;
pub mod env;
pub mod error;
pub mod features;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod train;

pub use actions::{apply_edit, EditAction};
pub use agent::{enhance, EnhanceOptions, Enhanced};
pub use color::{mean_lab_distance, LabImage, RgbImage};
pub use env::{ActionSequence, Episode, Transition};
pub use error::{Error, Result};
pub use features::{ContextFeature, ContextProvider, StateLayout, StateVector};
pub use nn::{AdamState, MlpNetwork};
pub use train::{run_training, TrainConfig};
