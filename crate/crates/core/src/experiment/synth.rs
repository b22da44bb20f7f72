use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Provenance, SubjectDataset};
use crate::error::{Error, Result};
use crate::preprocessing::{Epoch, RawRecording, StimulusEvent};
use crate::rng;

const SUBJECT_TAG: u64 = 0x5b1;
const SESSION_TAG: u64 = 0x5e5;
const RAW_TAG: u64 = 0x7a3;

/// Oddball epochs: targets carry a Gaussian-shaped positive deflection,
/// strongest on the centre channel, over Gaussian background noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthP300Params {
    pub subjects: usize,
    pub channels: usize,
    pub rate_hz: f64,
    pub window_ms: f64,
    pub epochs_per_session: usize,
    pub target_rate: f64,
    pub erp_amplitude_uv: f64,
    pub erp_latency_ms: f64,
    /// Standard deviation of the deflection in time.
    pub erp_width_ms: f64,
    pub noise_std: f64,
    /// Lag-one autocorrelation of the background noise (0 = white).
    pub noise_ar1: f64,
    /// Each subject's latency is shifted by a uniform draw in +-this.
    pub subject_latency_jitter_ms: f64,
    /// Each subject's amplitude is scaled by 1 + a uniform draw in +-this.
    pub subject_amplitude_jitter: f64,
    pub seed: u64,
}

impl Default for SynthP300Params {
    fn default() -> Self {
        Self {
            subjects: 4,
            channels: 8,
            rate_hz: 32.0,
            window_ms: 1000.0,
            epochs_per_session: 600,
            target_rate: 1.0 / 6.0,
            erp_amplitude_uv: 3.0,
            erp_latency_ms: 300.0,
            erp_width_ms: 60.0,
            noise_std: 4.0,
            noise_ar1: 0.5,
            subject_latency_jitter_ms: 40.0,
            subject_amplitude_jitter: 0.3,
            seed: 0,
        }
    }
}

impl SynthP300Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_rate > 0.0 && self.target_rate < 1.0) {
            return Err(Error::invalid(format!("target rate must lie in (0, 1), got {}", self.target_rate)));
        }
        if self.subjects == 0 || self.channels == 0 || self.epochs_per_session == 0 {
            return Err(Error::invalid("subjects, channels and epochs per session must be positive"));
        }
        if !(self.rate_hz > 0.0) || self.samples() == 0 {
            return Err(Error::invalid("rate and window must give at least one sample"));
        }
        if !(self.noise_std >= 0.0) || !(self.erp_width_ms > 0.0) || !(-1.0 < self.noise_ar1 && self.noise_ar1 < 1.0) {
            return Err(Error::invalid("noise std must be >= 0, width > 0 and |ar1| < 1"));
        }
        if !(0.0..1.0).contains(&self.subject_amplitude_jitter) || !(self.subject_latency_jitter_ms >= 0.0) {
            return Err(Error::invalid("subject jitter out of range"));
        }
        Ok(())
    }

    pub fn samples(&self) -> usize {
        (self.window_ms / 1000.0 * self.rate_hz).round() as usize
    }

    pub fn center_channel(&self) -> usize {
        self.channels / 2
    }

    fn spatial_weight(&self, c: usize) -> f64 {
        let sigma = (self.channels as f64 / 4.0).max(1.0);
        let d = c as f64 - self.center_channel() as f64;
        (-d * d / (2.0 * sigma * sigma)).exp()
    }

    /// Latency shift (ms) and amplitude scale of subject `s` (0-based).
    fn subject_traits(&self, s: usize) -> (f64, f64) {
        let mut r = rng::seeded(rng::derive_seed(self.seed, &[SUBJECT_TAG, s as u64]));
        let shift = if self.subject_latency_jitter_ms > 0.0 {
            r.random_range(-self.subject_latency_jitter_ms..=self.subject_latency_jitter_ms)
        } else {
            0.0
        };
        let scale = if self.subject_amplitude_jitter > 0.0 {
            1.0 + r.random_range(-self.subject_amplitude_jitter..=self.subject_amplitude_jitter)
        } else {
            1.0
        };
        (shift, scale)
    }

    fn noise(&self, r: &mut rng::Rng, n: usize) -> Vec<f64> {
        if self.noise_std == 0.0 {
            return vec![0.0; n];
        }
        let a = self.noise_ar1;
        let innov = Normal::new(0.0, self.noise_std * (1.0 - a * a).sqrt()).expect("finite std");
        let mut x = Normal::new(0.0, self.noise_std).expect("finite std").sample(r);
        (0..n)
            .map(|i| {
                if i > 0 {
                    x = a * x + innov.sample(r);
                }
                x
            })
            .collect()
    }
}

pub fn subject_id(s: usize) -> String {
    format!("S{:02}", s + 1)
}

/// Four sessions per subject at `rate_hz`. With exact quota sampling each
/// session holds `round(target_rate * n)` targets at seeded positions.
pub fn generate_synthetic(params: &SynthP300Params) -> Result<Vec<SubjectDataset>> {
    params.validate()?;
    let t_len = params.samples();
    let n = params.epochs_per_session;
    let targets = ((params.target_rate * n as f64).round() as usize).min(n);
    let mut out = Vec::with_capacity(params.subjects);
    for s in 0..params.subjects {
        let (shift, scale) = params.subject_traits(s);
        let peak = ((params.erp_latency_ms + shift) * params.rate_hz / 1000.0).round();
        let width = params.erp_width_ms * params.rate_hz / 1000.0;
        let template: Vec<f64> = (0..params.channels)
            .flat_map(|c| {
                let w = params.spatial_weight(c);
                (0..t_len).map(move |t| {
                    let d = t as f64 - peak;
                    w * (-d * d / (2.0 * width * width)).exp()
                })
            })
            .map(|v| v * params.erp_amplitude_uv * scale)
            .collect();
        let subject = subject_id(s);
        let mut sessions = BTreeMap::new();
        for session in 1..=4u8 {
            let mut r = rng::seeded(rng::derive_seed(params.seed, &[SESSION_TAG, s as u64, session as u64]));
            let mut labels = vec![0usize; n];
            labels[..targets].iter_mut().for_each(|l| *l = 1);
            labels.shuffle(&mut r);
            let epochs = labels
                .into_iter()
                .enumerate()
                .map(|(index, label)| {
                    let mut data = Vec::with_capacity(params.channels * t_len);
                    for _ in 0..params.channels {
                        data.extend(params.noise(&mut r, t_len));
                    }
                    if label == 1 {
                        data.iter_mut().zip(&template).for_each(|(v, e)| *v += e);
                    }
                    Epoch {
                        subject: subject.clone(),
                        session,
                        index,
                        label,
                        rate_hz: params.rate_hz,
                        channels: params.channels,
                        data,
                    }
                })
                .collect();
            sessions.insert(session, epochs);
        }
        out.push(SubjectDataset {
            subject,
            sessions,
            provenance: Provenance::Synthetic,
        });
    }
    Ok(out)
}

/// A continuous recording at `raw_rate_hz` with one flash every
/// `interval_ms`, mains interference at `mains_hz` and a DC offset, for
/// exercising the preprocessing pipeline. Subject `s` is 0-based.
pub fn generate_raw_session(
    params: &SynthP300Params,
    s: usize,
    session: u8,
    raw_rate_hz: f64,
    interval_ms: f64,
    mains_hz: f64,
) -> Result<(RawRecording, Vec<StimulusEvent>)> {
    params.validate()?;
    if !(raw_rate_hz > 0.0) || !(interval_ms > 0.0) {
        return Err(Error::invalid("raw rate and stimulus interval must be positive"));
    }
    let n_events = params.epochs_per_session;
    let lead = (0.5 * raw_rate_hz).round() as usize;
    let step = interval_ms / 1000.0 * raw_rate_hz;
    let tail = ((params.window_ms / 1000.0 + 0.5) * raw_rate_hz).round() as usize;
    let total = lead + ((n_events - 1) as f64 * step).floor() as usize + tail;

    let mut r = rng::seeded(rng::derive_seed(params.seed, &[RAW_TAG, s as u64, session as u64]));
    let targets = ((params.target_rate * n_events as f64).round() as usize).min(n_events);
    let mut flags = vec![false; n_events];
    flags[..targets].iter_mut().for_each(|f| *f = true);
    flags.shuffle(&mut r);
    let events: Vec<StimulusEvent> = flags
        .iter()
        .enumerate()
        .map(|(i, &is_target)| StimulusEvent {
            onset_sample: lead + (i as f64 * step).floor() as usize,
            is_target,
        })
        .collect();

    let (shift, scale) = params.subject_traits(s);
    let latency = (params.erp_latency_ms + shift) / 1000.0 * raw_rate_hz;
    let width = params.erp_width_ms / 1000.0 * raw_rate_hz;
    let reach = (4.0 * width).ceil() as usize;
    let raw_noise = SynthP300Params {
        noise_ar1: 0.0,
        ..params.clone()
    };
    let mut data = Vec::with_capacity(params.channels);
    for c in 0..params.channels {
        let w = params.spatial_weight(c) * params.erp_amplitude_uv * scale;
        let phase: f64 = r.random_range(0.0..std::f64::consts::TAU);
        let mut x = raw_noise.noise(&mut r, total);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / raw_rate_hz;
            *v += 20.0 + 5.0 * (std::f64::consts::TAU * mains_hz * t + phase).sin();
        }
        for ev in events.iter().filter(|e| e.is_target) {
            let centre = ev.onset_sample as f64 + latency;
            let lo = (centre - reach as f64).max(0.0) as usize;
            let hi = ((centre + reach as f64) as usize).min(total - 1);
            for (i, v) in x.iter_mut().enumerate().take(hi + 1).skip(lo) {
                let d = i as f64 - centre;
                *v += w * (-d * d / (2.0 * width * width)).exp();
            }
        }
        data.push(x);
    }
    let rec = RawRecording::new(data, raw_rate_hz, subject_id(s), session)?;
    Ok((rec, events))
}
