//! Continuous EEG to labelled epochs: band-pass, notch, decimation,
//! winsorisation and event-locked windowing, in that order.

mod filter;
pub mod io;
mod stages;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{butter_bandpass, butter_lowpass, iir_notch, Biquad, Sos};
pub use stages::{
    bandpass, decimate, epoch_windows, notch, run_pipeline, winsorize, BandpassConfig, EpochConfig,
    PipelineConfig, PipelineOutput, StageRecord,
};

/// A continuous multichannel recording, one `Vec` per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct RawRecording {
    pub data: Vec<Vec<f64>>,
    pub rate_hz: f64,
    pub channel_names: Vec<String>,
    pub subject: String,
    pub session: u8,
}

impl RawRecording {
    pub fn new(
        data: Vec<Vec<f64>>,
        rate_hz: f64,
        subject: impl Into<String>,
        session: u8,
    ) -> Result<Self> {
        let names = (0..data.len()).map(|c| format!("ch{c}")).collect();
        let rec = Self {
            data,
            rate_hz,
            channel_names: names,
            subject: subject.into(),
            session,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz > 0.0 && self.rate_hz.is_finite()) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {}", self.rate_hz)));
        }
        if self.data.is_empty() || self.data[0].is_empty() {
            return Err(Error::invalid("recording needs at least one channel and one sample"));
        }
        let n = self.data[0].len();
        if self.data.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("channels differ in length"));
        }
        if self.channel_names.len() != self.data.len() {
            return Err(Error::invalid("channel name count does not match channel count"));
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        self.data.len()
    }

    pub fn samples(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    /// Same metadata, channels replaced by `f(channel)`.
    pub(crate) fn map_channels(&self, rate_hz: f64, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        Self {
            data: self.data.iter().map(|c| f(c)).collect(),
            rate_hz,
            channel_names: self.channel_names.clone(),
            subject: self.subject.clone(),
            session: self.session,
        }
    }
}

/// A stimulus flash. `onset_sample` counts samples at the raw recording's
/// rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StimulusEvent {
    pub onset_sample: usize,
    pub is_target: bool,
}

/// Identity of an epoch across the whole experiment.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpochKey {
    pub subject: String,
    pub session: u8,
    pub index: usize,
}

/// A `channels x samples` window, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub subject: String,
    pub session: u8,
    /// Position of the originating event within its session.
    pub index: usize,
    /// 1 for target (P300), 0 otherwise.
    pub label: usize,
    pub rate_hz: f64,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Epoch {
    pub fn samples(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.data.len() / self.channels
        }
    }

    pub fn window_ms(&self) -> f64 {
        self.samples() as f64 * 1000.0 / self.rate_hz
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let t = self.samples();
        &self.data[c * t..(c + 1) * t]
    }

    /// Channel-major flattened values.
    pub fn flatten(&self) -> &[f64] {
        &self.data
    }

    pub fn key(&self) -> EpochKey {
        EpochKey {
            subject: self.subject.clone(),
            session: self.session,
            index: self.index,
        }
    }
}
