//! Taste-EEG recognition pipeline.
//!
//! * [`tensor`]: dense tensors, reverse-mode differentiation and Adam.
//! * [`dsp`]: FIR filtering, downsampling and epoching of continuous recordings.
//! * [`tsrda`]: temporal/spatial reconstruction augmentation and the
//!   Gaussian-noise baseline.
//! * [`model`]: the temporal-spatial CNN with multi-view channel attention.
//! * [`training`]: split, dual-label loss, metrics, training and ablations.
//! * [`synth`]: synthetic class-separable EEG standing in for recorded data.
//! * [`eegb`]: the binary sample container used between pipeline stages.

pub mod dsp;
pub mod eegb;
pub mod error;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sample;
pub mod synth;
pub mod tensor;
pub mod training;
pub mod tsrda;

pub use error::{Error, Result};
pub use sample::{DualLabelSample, EegSample, Taste, N_CHANNELS, N_CLASSES, N_TIMEPOINTS};
