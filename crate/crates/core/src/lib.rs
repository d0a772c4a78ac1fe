//! Temporal face-anti-spoofing toolkit.
//!
//! The crate bundles everything needed to train and evaluate a small
//! video-sequence network for presentation-attack detection on a single
//! machine: a self-contained tensor/autodiff core, a trainable second-order
//! temporal filter, attention and pyramid-fusion blocks, Eulerian video
//! magnification preprocessing, landmark-based supervision targets, a
//! rectified-Adam + lookahead training loop with binary checkpoints, and the
//! APCER/BPCER/ACER evaluation protocol.

pub mod data;
pub mod diirf;
pub mod error;
pub mod evm;
pub mod fcam;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pyramid;
pub mod supervision;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
