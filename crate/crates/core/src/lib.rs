//! Masked-reconstruction pre-training for continuous music acoustic frames.
//!
//! - [`dsp`]: PCM audio to 324-channel normalized frame sequences.
//! - [`masking`]: contiguous frame and channel masking.
//! - [`model`]: transformer encoder, reconstruction and task heads.
//! - [`training`]: Huber pre-training, finetuning, checkpoints.
//! - [`eval`]: accuracy, macro ROC-AUC / PR-AUC, stratified folds.

pub mod dsp;
pub mod error;
pub mod eval;
pub mod masking;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
