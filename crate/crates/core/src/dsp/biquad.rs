use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Notch,
}

/// Second-order IIR section in transposed direct form II.
///
/// Coefficients come from the bilinear transform with frequency prewarping, so
/// a lowpass or highpass with `q = 1/√2` is exactly −3 dB at `freq_hz` and a
/// notch has a true zero at its centre.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSection {
    pub kind: FilterKind,
    pub freq_hz: f64,
    pub q: f64,
    pub sample_rate_hz: f64,
    b: [f64; 3],
    a: [f64; 2],
    s1: f64,
    s2: f64,
}

pub fn design_filter(
    kind: FilterKind,
    freq_hz: f64,
    q: f64,
    sample_rate_hz: f64,
) -> Result<FilterSection> {
    let nyquist = sample_rate_hz / 2.0;
    if !(freq_hz > 0.0 && freq_hz < nyquist) {
        return Err(Error::FilterDesign(format!(
            "{kind:?} frequency {freq_hz} Hz must lie in (0, {nyquist}) Hz"
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::FilterDesign(format!(
            "quality factor must be positive, got {q}"
        )));
    }
    let w0 = TAU * freq_hz / sample_rate_hz;
    let (sin, cos) = w0.sin_cos();
    let alpha = sin / (2.0 * q);
    let b = match kind {
        FilterKind::Lowpass => [(1.0 - cos) / 2.0, 1.0 - cos, (1.0 - cos) / 2.0],
        FilterKind::Highpass => [(1.0 + cos) / 2.0, -(1.0 + cos), (1.0 + cos) / 2.0],
        FilterKind::Notch => [1.0, -2.0 * cos, 1.0],
    };
    let a0 = 1.0 + alpha;
    Ok(FilterSection {
        kind,
        freq_hz,
        q,
        sample_rate_hz,
        b: [b[0] / a0, b[1] / a0, b[2] / a0],
        a: [-2.0 * cos / a0, (1.0 - alpha) / a0],
        s1: 0.0,
        s2: 0.0,
    })
}

impl FilterSection {
    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s1;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
        self.s2 = self.b[2] * x - self.a[1] * y;
        y
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    /// Preloads the state so that a constant input `x` passes without a
    /// start-up transient.
    pub fn prime(&mut self, x: f64) {
        let dc = self.dc_gain();
        let y = dc * x;
        self.s2 = self.b[2] * x - self.a[1] * y;
        self.s1 = self.b[1] * x - self.a[0] * y + self.s2;
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -TAU * freq_hz / self.sample_rate_hz);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }

    pub fn magnitude_db(&self, freq_hz: f64) -> f64 {
        20.0 * self.response(freq_hz).norm().log10()
    }

    pub fn poles(&self) -> [Complex64; 2] {
        let (a1, a2) = (self.a[0], self.a[1]);
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        [(-a1 + disc) / 2.0, (-a1 - disc) / 2.0]
    }

    pub fn pole_radius(&self) -> f64 {
        self.poles().iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radius() < 1.0
    }

    /// Normalized coefficients `([b0, b1, b2], [a1, a2])` with `a0 = 1`.
    pub fn coefficients(&self) -> ([f64; 3], [f64; 2]) {
        (self.b, self.a)
    }
}

/// Cascade of notches at `f0, 2·f0, …, n·f0`.
#[derive(Debug, Clone)]
pub struct NotchBank {
    pub fundamental_hz: f64,
    sections: Vec<FilterSection>,
    /// Harmonics requested but dropped for lying at or above Nyquist.
    pub truncated: usize,
}

impl NotchBank {
    pub const DEFAULT_Q: f64 = 30.0;

    pub fn new(fundamental_hz: f64, harmonics: usize, q: f64, sample_rate_hz: f64) -> Result<Self> {
        let nyquist = sample_rate_hz / 2.0;
        let mut sections = Vec::with_capacity(harmonics);
        let mut truncated = 0;
        for k in 1..=harmonics {
            let f = fundamental_hz * k as f64;
            if f >= nyquist {
                truncated += 1;
                continue;
            }
            sections.push(design_filter(FilterKind::Notch, f, q, sample_rate_hz)?);
        }
        if sections.is_empty() {
            return Err(Error::FilterDesign(format!(
                "no notch of {fundamental_hz} Hz fits below Nyquist"
            )));
        }
        Ok(Self {
            fundamental_hz,
            sections,
            truncated,
        })
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    pub fn sections(&self) -> &[FilterSection] {
        &self.sections
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |acc, s| s.process(acc))
    }

    pub fn prime(&mut self, x: f64) {
        for s in &mut self.sections {
            s.prime(x);
        }
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        self.sections.iter().map(|s| s.response(freq_hz)).product()
    }

    /// Joins another bank so both sets of notches run in one cascade.
    pub fn extend(&mut self, other: NotchBank) {
        self.sections.extend(other.sections);
        self.truncated += other.truncated;
    }

    pub fn run(&mut self, signal: &[f64]) -> Vec<f64> {
        signal.iter().map(|&x| self.process(x)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 100_000.0;

    #[test]
    fn notch_2khz() {
        let n = design_filter(FilterKind::Notch, 2000.0, 30.0, FS).unwrap();
        assert!(n.magnitude_db(2000.0) <= -40.0);
        assert!(n.magnitude_db(1000.0) >= -1.0);
        assert!(n.is_stable());
    }

    #[test]
    fn lowpass_minus_3db() {
        let f = design_filter(
            FilterKind::Lowpass,
            300.0,
            std::f64::consts::FRAC_1_SQRT_2,
            FS,
        )
        .unwrap();
        let mag = f.response(300.0).norm();
        assert!((mag / std::f64::consts::FRAC_1_SQRT_2 - 1.0).abs() < 0.05);
        assert!((f.dc_gain() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nyquist_guard() {
        assert!(matches!(
            design_filter(FilterKind::Lowpass, 60_000.0, 0.7, FS),
            Err(Error::FilterDesign(_))
        ));
        assert!(design_filter(FilterKind::Lowpass, 100.0, 0.0, FS).is_err());
    }

    #[test]
    fn notch_bank_truncates_above_nyquist() {
        let bank = NotchBank::new(15_000.0, 5, 30.0, FS).unwrap();
        assert_eq!(bank.len(), 3);
        assert_eq!(bank.truncated, 2);
    }

    fn tone_gain(bank: &mut NotchBank, f: f64) -> f64 {
        let n = 40_000;
        let out: Vec<f64> = (0..n)
            .map(|k| bank.process((TAU * f * k as f64 / FS).sin()))
            .collect();
        let tail = &out[n / 2..];
        (2.0 * tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt()
    }

    #[test]
    fn notch_bank_time_domain() {
        let mut bank = NotchBank::new(2000.0, 5, 30.0, FS).unwrap();
        assert!(tone_gain(&mut bank, 2000.0) < 0.01);
        let mut bank = NotchBank::new(2000.0, 5, 30.0, FS).unwrap();
        assert!(tone_gain(&mut bank, 4000.0) < 0.01);
        let mut bank = NotchBank::new(2000.0, 5, 30.0, FS).unwrap();
        let g = tone_gain(&mut bank, 500.0);
        assert!(20.0 * g.log10() > -1.0, "{g}");
    }

    #[test]
    fn prime_removes_transient() {
        let mut f = design_filter(FilterKind::Lowpass, 300.0, 0.5, FS).unwrap();
        f.prime(2.0);
        for _ in 0..10 {
            assert!((f.process(2.0) - 2.0).abs() < 1e-9);
        }
    }
}
