//! IIR filter design (Butterworth low/band-pass, second-order notch) and
//! zero-phase application of a cascade of second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// One second-order section, `a[0]` normalised to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + self.b[1] * z_inv + self.b[2] * z2) / (1.0 + self.a[1] * z_inv + self.a[2] * z2)
    }

    /// Transposed direct-form-II state that holds the output steady for a
    /// unit step input.
    fn step_state(&self) -> [f64; 2] {
        let gain = self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>();
        let z1 = self.b[2] - self.a[2] * gain;
        [self.b[1] - self.a[1] * gain + z1, z1]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

impl Sos {
    /// Complex frequency response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, rate_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / rate_hz);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        self.response(freq_hz, rate_hz).norm()
    }

    /// Causal filtering from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut state = vec![[0.0; 2]; self.sections.len()];
        self.filter_with_state(x, &mut state)
    }

    fn filter_with_state(&self, x: &[f64], state: &mut [[f64; 2]]) -> Vec<f64> {
        let mut y = x.to_vec();
        for (s, z) in self.sections.iter().zip(state.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in y.iter_mut() {
                let input = *v;
                let out = b0 * input + z[0];
                z[0] = b1 * input - a1 * out + z[1];
                z[1] = b2 * input - a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Per-section steady-state for a unit step through the whole cascade.
    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let zi = s.step_state();
                let out = [zi[0] * scale, zi[1] * scale];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    /// Forward-backward filtering with odd-extension padding and
    /// steady-state initial conditions. The result has zero phase and
    /// squared magnitude response.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let padlen = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        ext.extend((1..=padlen).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=padlen).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let zi = self.step_states();
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
        let mut y = self.filter_with_state(&ext, &mut state);
        y.reverse();
        let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * y[0], z[1] * y[0]]).collect();
        let mut y = self.filter_with_state(&y, &mut state);
        y.reverse();
        y.drain(..padlen);
        y.truncate(n);
        y
    }
}

/// Analog Butterworth prototype poles, cutoff 1 rad/s.
fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| Complex64::from_polar(1.0, PI * (2 * k + 1 + order) as f64 / (2 * order) as f64))
        .collect()
}

/// Pre-warped analog frequency for the bilinear transform.
fn prewarp(freq_hz: f64, rate_hz: f64) -> f64 {
    2.0 * rate_hz * (PI * freq_hz / rate_hz).tan()
}

/// Bilinear transform of an analog zero-pole-gain system. Zeros at
/// infinity land on `z = -1`.
fn bilinear(
    zeros: &[Complex64],
    poles: &[Complex64],
    gain: f64,
    rate_hz: f64,
) -> (Vec<Complex64>, Vec<Complex64>, f64) {
    let fs2 = 2.0 * rate_hz;
    let map = |s: &Complex64| (fs2 + s) / (fs2 - s);
    let mut zd: Vec<Complex64> = zeros.iter().map(map).collect();
    zd.extend(std::iter::repeat(Complex64::new(-1.0, 0.0)).take(poles.len() - zeros.len()));
    let pd = poles.iter().map(map).collect();
    let num: Complex64 = zeros.iter().map(|z| fs2 - z).product();
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    (zd, pd, gain * (num / den).re)
}

/// Groups digital poles into conjugate pairs and real zeros into
/// consecutive pairs. The overall gain goes into the first section.
fn zpk_to_sos(zeros: &[Complex64], poles: &[Complex64], gain: f64) -> Sos {
    const IM_TOL: f64 = 1e-12;
    let mut denominators = Vec::new();
    let mut real_poles = Vec::new();
    for p in poles {
        if p.im > IM_TOL {
            denominators.push([1.0, -2.0 * p.re, p.norm_sqr()]);
        } else if p.im.abs() <= IM_TOL {
            real_poles.push(p.re);
        }
    }
    real_poles.sort_by(f64::total_cmp);
    for pair in real_poles.chunks(2) {
        denominators.push(match pair {
            [p, q] => [1.0, -(p + q), p * q],
            [p] => [1.0, -p, 0.0],
            _ => unreachable!(),
        });
    }
    let real_zeros: Vec<f64> = zeros.iter().map(|z| z.re).collect();
    let mut numerators: Vec<[f64; 3]> = real_zeros
        .chunks(2)
        .map(|pair| match pair {
            [p, q] => [1.0, -(p + q), p * q],
            [p] => [1.0, -p, 0.0],
            _ => unreachable!(),
        })
        .collect();
    numerators.resize(denominators.len(), [1.0, 0.0, 0.0]);
    let mut sections: Vec<Biquad> = numerators
        .into_iter()
        .zip(denominators)
        .map(|(b, a)| Biquad { b, a })
        .collect();
    if let Some(first) = sections.first_mut() {
        first.b.iter_mut().for_each(|v| *v *= gain);
    }
    Sos { sections }
}

fn check_frequency(what: &str, freq_hz: f64, rate_hz: f64) -> Result<()> {
    if !(rate_hz > 0.0) || !rate_hz.is_finite() {
        return Err(Error::invalid(format!("sampling rate must be positive, got {rate_hz}")));
    }
    if !(freq_hz > 0.0 && freq_hz < rate_hz / 2.0) {
        return Err(Error::invalid(format!(
            "{what} {freq_hz} Hz must lie strictly between 0 and Nyquist ({} Hz)",
            rate_hz / 2.0
        )));
    }
    Ok(())
}

/// Digital Butterworth low-pass of the given order.
pub fn butter_lowpass(order: usize, cutoff_hz: f64, rate_hz: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::invalid("filter order must be at least 1"));
    }
    check_frequency("cutoff", cutoff_hz, rate_hz)?;
    let wc = prewarp(cutoff_hz, rate_hz);
    let poles: Vec<Complex64> = prototype_poles(order).into_iter().map(|p| p * wc).collect();
    let (z, p, k) = bilinear(&[], &poles, wc.powi(order as i32), rate_hz);
    Ok(zpk_to_sos(&z, &p, k))
}

/// Digital Butterworth band-pass whose low-pass prototype has the given
/// order (the band-pass itself has twice as many poles).
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, rate_hz: f64) -> Result<Sos> {
    if order == 0 {
        return Err(Error::invalid("filter order must be at least 1"));
    }
    check_frequency("low edge", low_hz, rate_hz)?;
    check_frequency("high edge", high_hz, rate_hz)?;
    if low_hz >= high_hz {
        return Err(Error::invalid(format!(
            "band edges must satisfy low < high, got {low_hz} and {high_hz}"
        )));
    }
    let wl = prewarp(low_hz, rate_hz);
    let wh = prewarp(high_hz, rate_hz);
    let bw = wh - wl;
    let w0_sq = wl * wh;
    let mut poles = Vec::with_capacity(2 * order);
    for p in prototype_poles(order) {
        let half = p * bw / 2.0;
        let disc = (half * half - w0_sq).sqrt();
        poles.push(half + disc);
        poles.push(half - disc);
    }
    let zeros = vec![Complex64::new(0.0, 0.0); order];
    let (mut z, p, k) = bilinear(&zeros, &poles, bw.powi(order as i32), rate_hz);
    // Interleave z = 1 and z = -1 so every section gets 1 - z^-2.
    z.sort_by(|a, b| b.re.total_cmp(&a.re));
    let (pos, neg) = z.split_at(order);
    let z: Vec<Complex64> = pos.iter().zip(neg).flat_map(|(a, b)| [*a, *b]).collect();
    Ok(zpk_to_sos(&z, &p, k))
}

/// Second-order IIR notch with -3 dB bandwidth `center_hz / quality`.
pub fn iir_notch(center_hz: f64, quality: f64, rate_hz: f64) -> Result<Sos> {
    check_frequency("notch centre", center_hz, rate_hz)?;
    if !(quality > 0.0) {
        return Err(Error::invalid(format!("quality factor must be positive, got {quality}")));
    }
    let w0 = 2.0 * PI * center_hz / rate_hz;
    let bw = w0 / quality;
    let beta = (bw / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    Ok(Sos {
        sections: vec![Biquad {
            b: [gain, -2.0 * gain * c, gain],
            a: [1.0, -2.0 * gain * c, 2.0 * gain - 1.0],
        }],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Magnitude of the analog Butterworth band-pass evaluated at the
    /// pre-warped frequency, which the bilinear design reproduces exactly.
    fn analytic_bandpass(order: usize, lo: f64, hi: f64, f: f64, fs: f64) -> f64 {
        let w = prewarp(f, fs);
        let (wl, wh) = (prewarp(lo, fs), prewarp(hi, fs));
        let x = (w * w - wl * wh) / (w * (wh - wl));
        (1.0 / (1.0 + x.powi(2 * order as i32))).sqrt()
    }

    fn analytic_lowpass(order: usize, fc: f64, f: f64, fs: f64) -> f64 {
        let x = prewarp(f, fs) / prewarp(fc, fs);
        (1.0 / (1.0 + x.powi(2 * order as i32))).sqrt()
    }

    #[test]
    fn bandpass_matches_analytic_magnitude() {
        for &fs in &[2048.0, 2400.0, 256.0] {
            let sos = butter_bandpass(6, 1.0, 15.0, fs).unwrap();
            assert_eq!(sos.sections.len(), 6);
            for &f in &[0.3, 1.0, 2.0, 8.0, 15.0, 20.0, 50.0] {
                let got = sos.magnitude(f, fs);
                let want = analytic_bandpass(6, 1.0, 15.0, f, fs);
                assert!((got - want).abs() < 1e-6 * want.max(1e-3), "fs {fs} f {f}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn lowpass_matches_analytic_magnitude() {
        let sos = butter_lowpass(8, 12.8, 2048.0).unwrap();
        assert_eq!(sos.sections.len(), 4);
        for &f in &[0.0, 5.0, 12.8, 16.0, 40.0] {
            let got = sos.magnitude(f, 2048.0);
            let want = analytic_lowpass(8, 12.8, f, 2048.0);
            assert!((got - want).abs() < 1e-7, "f {f}: {got} vs {want}");
        }
        let odd = butter_lowpass(3, 10.0, 100.0).unwrap();
        assert_eq!(odd.sections.len(), 2);
        assert!((odd.magnitude(10.0, 100.0) - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn notch_response() {
        let sos = iir_notch(50.0, 30.0, 2048.0).unwrap();
        assert!(sos.magnitude(50.0, 2048.0) < 1e-9);
        // Half-power points sit at centre +- bandwidth/2 (approximately, in Hz).
        let edge = sos.magnitude(50.0 + 50.0 / 60.0, 2048.0);
        assert!((edge - 0.5f64.sqrt()).abs() < 0.01, "{edge}");
        assert!((sos.magnitude(0.0, 2048.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_designs() {
        assert!(butter_bandpass(6, 15.0, 1.0, 2048.0).is_err());
        assert!(butter_bandpass(6, 1.0, 1024.0, 2048.0).is_err());
        assert!(butter_bandpass(0, 1.0, 15.0, 2048.0).is_err());
        assert!(butter_lowpass(4, 0.0, 100.0).is_err());
        assert!(iir_notch(60.0, 30.0, 100.0).is_err());
        assert!(iir_notch(50.0, 0.0, 1000.0).is_err());
    }

    #[test]
    fn filtfilt_has_zero_phase() {
        let sos = butter_lowpass(4, 20.0, 500.0).unwrap();
        let mut x = vec![0.0; 401];
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 - 200.0;
            *v = (-t * t / 50.0).exp();
        }
        let y = sos.filtfilt(&x);
        let peak = y.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert_eq!(peak, 200);
        for i in 0..200 {
            assert!((y[200 - i] - y[200 + i]).abs() < 1e-9);
        }
    }

    #[test]
    fn filtfilt_keeps_constants_through_lowpass() {
        let sos = butter_lowpass(8, 12.8, 2048.0).unwrap();
        let y = sos.filtfilt(&vec![3.25; 4096]);
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-6));
    }

    #[test]
    fn filtfilt_short_inputs() {
        let sos = butter_lowpass(2, 10.0, 100.0).unwrap();
        assert!(sos.filtfilt(&[]).is_empty());
        assert_eq!(sos.filtfilt(&[1.0]).len(), 1);
        assert_eq!(sos.filtfilt(&[1.0, 2.0, 3.0]).len(), 3);
    }

    #[test]
    fn causal_filter_impulse_matches_response() {
        // The DFT of a long impulse response recovers the frequency response.
        let sos = butter_lowpass(2, 10.0, 100.0).unwrap();
        let mut x = vec![0.0; 2000];
        x[0] = 1.0;
        let h = sos.filter(&x);
        let f = 7.0;
        let dft: Complex64 = h
            .iter()
            .enumerate()
            .map(|(n, v)| Complex64::from_polar(*v, -2.0 * PI * f * n as f64 / 100.0))
            .sum();
        assert!((dft - sos.response(f, 100.0)).norm() < 1e-9);
    }
}
