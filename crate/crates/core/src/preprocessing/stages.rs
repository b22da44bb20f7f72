use serde::{Deserialize, Serialize};

use super::filter::{butter_bandpass, butter_lowpass, iir_notch};
use super::{Epoch, RawRecording, StimulusEvent};
use crate::error::{Error, Result, ResultExt};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BandpassConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
}

impl Default for BandpassConfig {
    fn default() -> Self {
        Self {
            low_hz: 1.0,
            high_hz: 15.0,
            order: 6,
        }
    }
}

/// Zero-phase Butterworth band-pass, per channel.
pub fn bandpass(rec: &RawRecording, cfg: &BandpassConfig) -> Result<RawRecording> {
    rec.validate()?;
    let sos = butter_bandpass(cfg.order, cfg.low_hz, cfg.high_hz, rec.rate_hz)?;
    Ok(rec.map_channels(rec.rate_hz, |c| sos.filtfilt(c)))
}

/// Zero-phase notch at `center_hz`, per channel.
pub fn notch(rec: &RawRecording, center_hz: f64, quality: f64) -> Result<RawRecording> {
    rec.validate()?;
    let sos = iir_notch(center_hz, quality, rec.rate_hz)?;
    Ok(rec.map_channels(rec.rate_hz, |c| sos.filtfilt(c)))
}

/// Order of the anti-alias low-pass used by [`decimate`].
const ANTI_ALIAS_ORDER: usize = 8;

/// Anti-alias low-pass at `0.4 * target_hz`, then keep every
/// `rate / target`-th sample starting with the first.
pub fn decimate(rec: &RawRecording, target_hz: f64) -> Result<RawRecording> {
    rec.validate()?;
    if !(target_hz > 0.0) {
        return Err(Error::invalid(format!("target rate must be positive, got {target_hz}")));
    }
    let ratio = rec.rate_hz / target_hz;
    let factor = ratio.round();
    if factor < 1.0 || (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::invalid(format!(
            "decimation from {} Hz to {target_hz} Hz needs an integer factor, got {ratio}",
            rec.rate_hz
        )));
    }
    let factor = factor as usize;
    if factor == 1 {
        return Ok(rec.map_channels(target_hz, <[f64]>::to_vec));
    }
    let sos = butter_lowpass(ANTI_ALIAS_ORDER, 0.4 * target_hz, rec.rate_hz)?;
    Ok(rec.map_channels(target_hz, |c| sos.filtfilt(c).into_iter().step_by(factor).collect()))
}

/// Clips every channel to its own `[lower_pct, upper_pct]` percentile range
/// (linear interpolation between order statistics).
pub fn winsorize(rec: &RawRecording, lower_pct: f64, upper_pct: f64) -> Result<RawRecording> {
    rec.validate()?;
    if !(0.0 <= lower_pct && lower_pct < upper_pct && upper_pct <= 100.0) {
        return Err(Error::invalid(format!(
            "percentiles must satisfy 0 <= lower < upper <= 100, got {lower_pct} and {upper_pct}"
        )));
    }
    Ok(rec.map_channels(rec.rate_hz, |c| {
        let lo = crate::sampling::quantile(c, lower_pct / 100.0);
        let hi = crate::sampling::quantile(c, upper_pct / 100.0);
        c.iter().map(|v| v.clamp(lo, hi)).collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochConfig {
    pub window_ms: f64,
    /// Nominal overlap of consecutive windows. Windows are cut at event
    /// onsets, so the realised overlap follows the event spacing; this value
    /// is only used to report the nominal stimulus interval.
    pub overlap_ms: f64,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self {
            window_ms: 1000.0,
            overlap_ms: 600.0,
        }
    }
}

impl EpochConfig {
    pub fn stimulus_interval_ms(&self) -> f64 {
        self.window_ms - self.overlap_ms
    }

    pub fn samples_at(&self, rate_hz: f64) -> usize {
        (self.window_ms / 1000.0 * rate_hz).round() as usize
    }
}

/// One epoch per event, starting at the event onset converted from
/// `event_rate_hz` to the recording's rate (floored). Events whose window
/// runs past the end of the recording are dropped.
pub fn epoch_windows(
    rec: &RawRecording,
    events: &[StimulusEvent],
    event_rate_hz: f64,
    cfg: &EpochConfig,
) -> Result<Vec<Epoch>> {
    rec.validate()?;
    if !(event_rate_hz > 0.0) {
        return Err(Error::invalid("event sampling rate must be positive"));
    }
    if events.windows(2).any(|w| w[1].onset_sample < w[0].onset_sample) {
        return Err(Error::invalid("events must be sorted by onset"));
    }
    let t = cfg.samples_at(rec.rate_hz);
    if t == 0 {
        return Err(Error::invalid(format!("window of {} ms is shorter than one sample", cfg.window_ms)));
    }
    let n = rec.samples();
    let mut out = Vec::new();
    for (index, ev) in events.iter().enumerate() {
        let start = (ev.onset_sample as f64 * rec.rate_hz / event_rate_hz).floor() as usize;
        if start + t > n {
            continue;
        }
        let mut data = Vec::with_capacity(rec.channels() * t);
        for c in &rec.data {
            data.extend_from_slice(&c[start..start + t]);
        }
        out.push(Epoch {
            subject: rec.subject.clone(),
            session: rec.session,
            index,
            label: usize::from(ev.is_target),
            rate_hz: rec.rate_hz,
            channels: rec.channels(),
            data,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub bandpass: BandpassConfig,
    /// Mains frequency: 50 Hz for European recordings, 60 Hz for the Americas.
    pub notch_hz: f64,
    pub notch_quality: f64,
    pub target_rate_hz: f64,
    pub winsor_lower_pct: f64,
    pub winsor_upper_pct: f64,
    pub epoch: EpochConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bandpass: BandpassConfig::default(),
            notch_hz: 50.0,
            notch_quality: 30.0,
            target_rate_hz: 32.0,
            winsor_lower_pct: 5.0,
            winsor_upper_pct: 95.0,
            epoch: EpochConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn with_mains(notch_hz: f64) -> Self {
        Self {
            notch_hz,
            ..Self::default()
        }
    }
}

/// Shape of the signal after one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: String,
    pub rate_hz: f64,
    pub channels: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub epochs: Vec<Epoch>,
    pub transcript: Vec<StageRecord>,
}

pub fn run_pipeline(
    rec: &RawRecording,
    events: &[StimulusEvent],
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let ctx = format!("subject {} session {}", rec.subject, rec.session);
    let mut transcript = Vec::new();
    let mut log = |stage: &str, r: &RawRecording| {
        transcript.push(StageRecord {
            stage: stage.to_string(),
            rate_hz: r.rate_hz,
            channels: r.channels(),
            samples: r.samples(),
        })
    };
    log("input", rec);
    let r = bandpass(rec, &cfg.bandpass).with_context(|| format!("{ctx}: bandpass"))?;
    log("bandpass", &r);
    let r = notch(&r, cfg.notch_hz, cfg.notch_quality).with_context(|| format!("{ctx}: notch"))?;
    log("notch", &r);
    let r = decimate(&r, cfg.target_rate_hz).with_context(|| format!("{ctx}: decimate"))?;
    log("decimate", &r);
    let r = winsorize(&r, cfg.winsor_lower_pct, cfg.winsor_upper_pct)
        .with_context(|| format!("{ctx}: winsorize"))?;
    log("winsorize", &r);
    let epochs = epoch_windows(&r, events, rec.rate_hz, &cfg.epoch).with_context(|| format!("{ctx}: epoch"))?;
    transcript.push(StageRecord {
        stage: "epoch".into(),
        rate_hz: r.rate_hz,
        channels: r.channels(),
        samples: epochs.len(),
    });
    Ok(PipelineOutput { epochs, transcript })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    fn rec(channels: Vec<Vec<f64>>, rate: f64) -> RawRecording {
        RawRecording::new(channels, rate, "S01", 1).unwrap()
    }

    /// Least-squares amplitude of a known-frequency sinusoid.
    fn amplitude(x: &[f64], freq: f64, rate: f64) -> f64 {
        let (mut s, mut c) = (0.0, 0.0);
        for (i, v) in x.iter().enumerate() {
            let w = 2.0 * PI * freq * i as f64 / rate;
            s += v * w.sin();
            c += v * w.cos();
        }
        2.0 * (s * s + c * c).sqrt() / x.len() as f64
    }

    #[test]
    fn bandpass_passes_8hz_and_blocks_dc() {
        let fs = 2048.0;
        let n = 20 * 2048;
        let r = rec(vec![sine(8.0, fs, n), vec![5.0; n]], fs);
        let out = bandpass(&r, &BandpassConfig::default()).unwrap();
        let mid = &out.data[0][4 * 2048..16 * 2048];
        let a = amplitude(mid, 8.0, fs);
        assert!((0.95..=1.05).contains(&a), "{a}");
        let dc_mid = &out.data[1][4 * 2048..16 * 2048];
        assert!(dc_mid.iter().all(|v| v.abs() < 5e-3));
    }

    #[test]
    fn notch_zero_in_zero_out() {
        let r = rec(vec![vec![0.0; 1000]], 500.0);
        let out = notch(&r, 50.0, 30.0).unwrap();
        assert!(out.data[0].iter().all(|&v| v == 0.0));
        assert!(notch(&r, 250.0, 30.0).is_err());
    }

    #[test]
    fn decimate_counts_and_constants() {
        let r = rec(vec![vec![2.0; 64 * 100]], 2048.0);
        let d = decimate(&r, 32.0).unwrap();
        assert_eq!(d.samples(), 100);
        assert_eq!(d.rate_hz, 32.0);
        assert!(d.data[0].iter().all(|v| (v - 2.0).abs() < 1e-6));
        let me = rec(vec![vec![0.0; 75 * 40]], 2400.0);
        assert_eq!(decimate(&me, 32.0).unwrap().samples(), 40);
        assert!(decimate(&rec(vec![vec![0.0; 100]], 1000.0), 32.0).is_err());
    }

    #[test]
    fn winsorize_clips_outlier_to_interpolated_percentile() {
        let mut x = vec![0.0; 10];
        x[9] = 1000.0;
        let out = winsorize(&rec(vec![x], 32.0), 5.0, 95.0).unwrap();
        // Sorted data: nine zeros then 1000; the 95th percentile sits at
        // position 8.55, i.e. 0.55 of the way from 0 to 1000.
        assert!((out.data[0][9] - 550.0).abs() < 1e-9);
        assert!(out.data[0][..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn winsorize_identity_and_idempotence() {
        // With 201 values both percentile positions land on order
        // statistics, the case in which clipping twice equals clipping once.
        let x: Vec<f64> = (0..201).map(|i| ((i * 37) % 101) as f64 - 50.0).collect();
        let r = rec(vec![x.clone()], 32.0);
        assert_eq!(winsorize(&r, 0.0, 100.0).unwrap().data[0], x);
        let once = winsorize(&r, 5.0, 95.0).unwrap();
        let twice = winsorize(&once, 5.0, 95.0).unwrap();
        assert_eq!(once, twice);
        assert!(winsorize(&r, 50.0, 50.0).is_err());
        // Between order statistics the interpolated limit moves inward.
        let mut y = vec![0.0; 10];
        y[9] = 1000.0;
        let first = winsorize(&rec(vec![y], 32.0), 5.0, 95.0).unwrap();
        let second = winsorize(&first, 5.0, 95.0).unwrap();
        assert!((second.data[0][9] - 302.5).abs() < 1e-9);
    }

    #[test]
    fn epochs_are_32_samples_and_drop_overruns() {
        let r = rec(vec![(0..320).map(f64::from).collect(), vec![0.0; 320]], 32.0);
        let events = [
            StimulusEvent { onset_sample: 0, is_target: true },
            StimulusEvent { onset_sample: 2048 * 5, is_target: false },
            StimulusEvent { onset_sample: 2048 * 9 + 64, is_target: true },
        ];
        let e = epoch_windows(&r, &events, 2048.0, &EpochConfig::default()).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].samples(), 32);
        assert_eq!(e[1].channel(0)[0], 160.0);
        assert_eq!((e[0].label, e[1].label), (1, 0));
        assert_eq!(e[1].index, 1);
        assert!((e[0].window_ms() - 1000.0).abs() < 1e-12);
    }

    #[test]
    fn short_recording_yields_nothing() {
        let r = rec(vec![vec![0.0; 20]], 32.0);
        let events = [StimulusEvent { onset_sample: 0, is_target: false }];
        assert!(epoch_windows(&r, &events, 32.0, &EpochConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn pipeline_transcript_follows_stage_order() {
        let fs = 2048.0;
        let n = 2048 * 6;
        let r = rec(vec![sine(5.0, fs, n), sine(3.0, fs, n)], fs);
        let events: Vec<_> = (0..10)
            .map(|i| StimulusEvent { onset_sample: i * 819, is_target: i % 6 == 0 })
            .collect();
        let out = run_pipeline(&r, &events, &PipelineConfig::default()).unwrap();
        let stages: Vec<&str> = out.transcript.iter().map(|s| s.stage.as_str()).collect();
        assert_eq!(stages, ["input", "bandpass", "notch", "decimate", "winsorize", "epoch"]);
        assert!(out.transcript.iter().all(|s| s.channels == 2));
        assert_eq!(out.transcript[3].samples, n / 64);
        assert_eq!(out.epochs.len(), 10);
        assert!(out.epochs.iter().all(|e| e.samples() == 32));
    }
}
