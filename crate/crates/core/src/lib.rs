//! Repulsive point process active sampling for P300 brain-computer interfaces.
//!
//! The crate is organised around five subsystems:
//!
//! * [`sampling`] – distances, mingling indices, vanilla and Dense Poisson-disk
//!   sampling over labeled feature points, and the empirical estimators
//!   (pair correlation, mini-batch gradient variance) used to check them.
//! * [`preprocessing`] – Butterworth band-pass, notch, decimation,
//!   winsorization and event-locked windowing of raw EEG.
//! * [`model`] – a small convolutional classifier with hand-written
//!   gradients, AdamW, and per-block freezing for fine-tuning.
//! * [`experiment`] – synthetic P300 data, subject-dependent / independent /
//!   adaptive splits, sampling-factor sweeps and the experiment runner.
//! * [`stats`] – Wilcoxon signed-rank test, Wolpaw bitrate and table
//!   aggregation.
//!
//! Everything that draws random numbers takes an explicit seed, so results
//! are reproducible bit-for-bit on one platform.

pub mod error;
pub mod experiment;
pub mod model;
pub mod preprocessing;
pub mod rng;
pub mod sampling;
pub mod stats;

pub use error::{Error, Result};
