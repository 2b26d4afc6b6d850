use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::biquad::{design_filter, FilterKind, FilterSection};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiaConfig {
    pub reference_hz: f64,
    /// Reference phase offset (rad) relative to `sin(ω_r·t)`.
    pub reference_phase_rad: f64,
    /// AC-coupling corner (Hz).
    pub hpf_hz: f64,
    /// −3 dB corner of the post-mixer low-pass (Hz).
    pub lpf_hz: f64,
    /// Total low-pass order, built from critically damped pole pairs (even).
    pub lpf_order: usize,
    /// Length of the synchronous boxcar in reference periods (0 disables it).
    pub sync_periods: usize,
    pub sample_rate_hz: f64,
}

impl Default for LiaConfig {
    fn default() -> Self {
        Self {
            reference_hz: 2000.0,
            reference_phase_rad: 0.0,
            hpf_hz: 100.0,
            lpf_hz: 300.0,
            lpf_order: 2,
            sync_periods: 2,
            sample_rate_hz: crate::SAMPLE_RATE_HZ,
        }
    }
}

impl LiaConfig {
    pub fn with_lpf(mut self, lpf_hz: f64) -> Self {
        self.lpf_hz = lpf_hz;
        self
    }

    /// `1/(2π·f_lpf)`.
    pub fn time_constant(&self) -> f64 {
        1.0 / (TAU * self.lpf_hz)
    }

    pub fn sync_len(&self) -> usize {
        (self.sync_periods as f64 * self.sample_rate_hz / self.reference_hz).round() as usize
    }

    pub fn sync_window_s(&self) -> f64 {
        self.sync_len() as f64 / self.sample_rate_hz
    }

    /// Corner of each critically damped pair so the cascade is −3 dB at
    /// `lpf_hz`.
    fn pair_corner_hz(&self) -> f64 {
        let n = self.lpf_order as f64;
        self.lpf_hz / (2f64.powf(1.0 / n) - 1.0).sqrt()
    }

    /// Complex gain seen by the demodulated baseband for an input tone
    /// `delta_hz` away from the reference (low-pass times boxcar).
    pub fn baseband_response(&self, delta_hz: f64) -> Complex64 {
        let fs = self.sample_rate_hz;
        let wc = TAU * self.pair_corner_hz();
        let s = Complex64::new(0.0, TAU * delta_hz);
        let pairs = (self.lpf_order / 2) as i32;
        // analog prototype; prewarping makes the match exact at the corner
        let lpf = (Complex64::new(1.0, 0.0) + s / wc).powi(-2 * pairs);
        let n = self.sync_len();
        let sync = if n == 0 {
            Complex64::new(1.0, 0.0)
        } else {
            let w = TAU * delta_hz / fs;
            (0..n)
                .map(|k| Complex64::from_polar(1.0 / n as f64, -w * k as f64))
                .sum()
        };
        lpf * sync
    }

    pub fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate_hz / 2.0;
        if !(self.reference_hz > 0.0 && self.reference_hz < nyq) {
            return Err(Error::FilterDesign(format!(
                "reference {} Hz outside (0, {nyq})",
                self.reference_hz
            )));
        }
        if self.lpf_order == 0 || self.lpf_order % 2 != 0 {
            return Err(Error::FilterDesign(format!(
                "low-pass order must be even and positive, got {}",
                self.lpf_order
            )));
        }
        if self.hpf_hz >= self.reference_hz {
            return Err(Error::FilterDesign(
                "HPF corner must lie below the reference".into(),
            ));
        }
        Ok(())
    }
}

/// One demodulator output sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LiaOutput {
    /// `2·√(y_d² + y_q²)`, the amplitude of the reference-frequency component.
    pub amplitude: f64,
    pub phase: f64,
    pub y_d: f64,
    pub y_q: f64,
}

/// Running mean over a fixed window.
#[derive(Debug, Clone)]
struct Boxcar {
    buf: Vec<f64>,
    pos: usize,
    sum: f64,
}

impl Boxcar {
    fn new(len: usize) -> Self {
        Self {
            buf: vec![0.0; len],
            pos: 0,
            sum: 0.0,
        }
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let n = self.buf.len();
        if n == 0 {
            return x;
        }
        self.sum += x - self.buf[self.pos];
        self.buf[self.pos] = x;
        self.pos += 1;
        if self.pos == n {
            self.pos = 0;
            // resync the running sum to stop round-off drift
            self.sum = self.buf.iter().sum();
        }
        self.sum / n as f64
    }
}

/// The lock-in's post-mixer smoothing (boxcar and low-pass) applied to a
/// baseband signal, so it can be combined with a demodulated amplitude
/// without a lag mismatch.
#[derive(Debug, Clone)]
pub struct BasebandFilter {
    sync: Boxcar,
    lpf: Vec<FilterSection>,
}

impl BasebandFilter {
    pub fn new(cfg: &LiaConfig) -> Result<Self> {
        cfg.validate()?;
        let stage = || {
            design_filter(
                FilterKind::Lowpass,
                cfg.pair_corner_hz(),
                0.5,
                cfg.sample_rate_hz,
            )
        };
        let lpf = (0..cfg.lpf_order / 2)
            .map(|_| stage())
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            sync: Boxcar::new(cfg.sync_len()),
            lpf,
        })
    }

    /// Steady state at a constant input.
    pub fn prime(&mut self, x: f64) {
        self.sync.buf.iter_mut().for_each(|b| *b = x);
        self.sync.sum = x * self.sync.buf.len() as f64;
        self.lpf.iter_mut().for_each(|s| s.prime(x));
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let mut y = self.sync.process(x);
        for s in &mut self.lpf {
            y = s.process(y);
        }
        y
    }
}

/// Streaming quadrature lock-in: HPF → mix with sin/cos → boxcar → low-pass.
#[derive(Debug, Clone)]
pub struct LiaChannel {
    cfg: LiaConfig,
    hpf: [FilterSection; 1],
    lpf_d: Vec<FilterSection>,
    lpf_q: Vec<FilterSection>,
    sync_d: Boxcar,
    sync_q: Boxcar,
    tick: u64,
    last: LiaOutput,
}

impl LiaChannel {
    pub fn new(cfg: LiaConfig) -> Result<Self> {
        cfg.validate()?;
        let fs = cfg.sample_rate_hz;
        let hpf = design_filter(
            FilterKind::Highpass,
            cfg.hpf_hz,
            std::f64::consts::FRAC_1_SQRT_2,
            fs,
        )?;
        let corner = cfg.pair_corner_hz();
        let stage = || design_filter(FilterKind::Lowpass, corner, 0.5, fs);
        let pairs = cfg.lpf_order / 2;
        let lpf_d = (0..pairs).map(|_| stage()).collect::<Result<Vec<_>>>()?;
        let lpf_q = lpf_d.clone();
        let n = cfg.sync_len();
        Ok(Self {
            cfg,
            hpf: [hpf],
            lpf_d,
            lpf_q,
            sync_d: Boxcar::new(n),
            sync_q: Boxcar::new(n),
            tick: 0,
            last: LiaOutput::default(),
        })
    }

    pub fn config(&self) -> &LiaConfig {
        &self.cfg
    }

    /// Reference phase at the current tick, computed from the tick count to
    /// keep long runs coherent with the modulation source.
    #[inline]
    fn reference_angle(&self) -> f64 {
        let cycles = (self.tick as f64 * self.cfg.reference_hz / self.cfg.sample_rate_hz).fract();
        TAU * cycles + self.cfg.reference_phase_rad
    }

    /// Sets the tick counter so the reference lines up with an external
    /// oscillator that started at tick 0.
    pub fn set_tick(&mut self, tick: u64) {
        self.tick = tick;
    }

    /// Starts the AC-coupling filter from a DC level instead of zero.
    pub fn prime_dc(&mut self, level: f64) {
        self.hpf[0].prime(level);
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> LiaOutput {
        let xf = self.hpf[0].process(x);
        let (sin, cos) = self.reference_angle().sin_cos();
        self.tick += 1;
        let mut d = self.sync_d.process(xf * sin);
        let mut q = self.sync_q.process(xf * cos);
        for s in &mut self.lpf_d {
            d = s.process(d);
        }
        for s in &mut self.lpf_q {
            q = s.process(q);
        }
        self.last = LiaOutput {
            amplitude: 2.0 * d.hypot(q),
            phase: q.atan2(d),
            y_d: d,
            y_q: q,
        };
        self.last
    }

    pub fn last(&self) -> LiaOutput {
        self.last
    }

    pub fn run(&mut self, signal: &[f64]) -> Vec<LiaOutput> {
        signal.iter().map(|&x| self.step(x)).collect()
    }
}

/// Amplitude from demodulated DC components.
#[cfg(test)]
fn amplitude_from_quadratures(y_d: f64, y_q: f64) -> f64 {
    2.0 * (y_d * y_d + y_q * y_q).sqrt()
}
