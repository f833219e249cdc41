//! Physiological-signal deepfake detection.
//!
//! A two-branch convolutional attention network is first trained to regress
//! the frame-to-frame change of the blood-volume pulse, then its regression
//! head is replaced by a sigmoid classifier and only the last fc layer and the
//! new head are fine-tuned to tell real faces from swapped ones.

pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod preprocessing;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::{Parameter, Tensor};
