use std::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{Domain, LinearSystem};
use crate::Result;

/// Loop figures of merit for an open loop `L = K·G` under unity negative
/// feedback.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityMetrics {
    /// `1/|L(jω₁₈₀)|`, +∞ without a phase crossover.
    pub gain_margin: f64,
    pub phase_crossover_rad_s: f64,
    /// Degrees, +∞ without a gain crossover.
    pub phase_margin_deg: f64,
    pub gain_crossover_rad_s: f64,
    /// `max |L/(1+L)|`, linear.
    pub closedloop_inf_norm: f64,
    pub peak_rad_s: f64,
    /// First −3 dB crossing of `|T|`.
    pub bandwidth_hz: f64,
    pub closedloop_stable: bool,
}

impl StabilityMetrics {
    pub fn gain_margin_db(&self) -> f64 {
        20.0 * self.gain_margin.log10()
    }

    pub fn closedloop_inf_norm_db(&self) -> f64 {
        20.0 * self.closedloop_inf_norm.log10()
    }
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Roots of `1 + L`, the closed-loop poles.
pub fn closed_loop_poles(l: &LinearSystem) -> Result<Vec<Complex64>> {
    Ok(l.feedback()?.poles)
}

fn default_band(l: &LinearSystem) -> (f64, f64) {
    match l.domain {
        Domain::Discrete { sample_rate_hz } => {
            (1e-2 * sample_rate_hz / 1e3, PI * sample_rate_hz * 0.9999)
        }
        Domain::Continuous => {
            let mags = l
                .zeros
                .iter()
                .chain(&l.poles)
                .map(|r| r.norm())
                .filter(|&m| m > 0.0);
            let (lo, hi) = mags.fold((f64::INFINITY, 0.0f64), |(lo, hi), m| {
                (lo.min(m), hi.max(m))
            });
            if hi == 0.0 {
                (1e-2, 1e7)
            } else {
                ((lo * 1e-3).min(1.0), hi * 1e3)
            }
        }
    }
}

pub fn stability_metrics(l: &LinearSystem) -> Result<StabilityMetrics> {
    let (lo, hi) = default_band(l);
    stability_metrics_on(l, lo, hi, 4000)
}

/// Metrics from an `n`-point log grid over `[lo, hi]` rad/s, with every
/// crossing and the closed-loop peak refined locally.
pub fn stability_metrics_on(
    l: &LinearSystem,
    lo: f64,
    hi: f64,
    n: usize,
) -> Result<StabilityMetrics> {
    let poles = closed_loop_poles(l)?;
    let closedloop_stable = match l.domain {
        Domain::Continuous => poles.iter().all(|p| p.re < 0.0),
        Domain::Discrete { .. } => poles.iter().all(|p| p.norm() < 1.0),
    };
    let ws = log_grid(lo, hi, n);
    let phase_turn = |w: f64| ((l.phase(w) + PI) / TAU).floor();
    let log_mag = |w: f64| l.response(w).norm().ln();
    let t_mag = |w: f64| {
        let v = l.response(w);
        (v / (1.0 + v)).norm()
    };

    let mut gain_margin = f64::INFINITY;
    let mut phase_crossover = f64::NAN;
    let mut phase_margin = f64::INFINITY;
    let mut gain_crossover = f64::NAN;
    for win in ws.windows(2) {
        let (a, b) = (win[0], win[1]);
        if phase_turn(a) != phase_turn(b) {
            // phase crosses −180° + k·360° inside (a, b)
            let k = phase_turn(a).max(phase_turn(b));
            let target = k * TAU - PI;
            let w = bisect(|w| l.phase(w) - target, a, b);
            let gm = 1.0 / l.response(w).norm();
            if gm < gain_margin {
                gain_margin = gm;
                phase_crossover = w;
            }
        }
        let (ma, mb) = (log_mag(a), log_mag(b));
        if (ma > 0.0) != (mb > 0.0) {
            let w = bisect(log_mag, a, b);
            let pm = (l.phase(w) + PI).rem_euclid(TAU);
            let pm = if pm > PI { pm - TAU } else { pm }.to_degrees();
            if pm < phase_margin {
                phase_margin = pm;
                gain_crossover = w;
            }
        }
    }

    let mags: Vec<f64> = ws.iter().map(|&w| t_mag(w)).collect();
    let imax = (0..n)
        .max_by(|&a, &b| mags[a].total_cmp(&mags[b]))
        .unwrap_or(0);
    let (peak_w, peak) = golden_max(
        &t_mag,
        ws[imax.saturating_sub(1)],
        ws[(imax + 1).min(n - 1)],
    );
    let (peak_w, peak) = if peak >= mags[imax] {
        (peak_w, peak)
    } else {
        (ws[imax], mags[imax])
    };

    let bandwidth = match (0..n).find(|&i| mags[i] < FRAC_1_SQRT_2) {
        Some(0) | None => 0.0,
        Some(i) => bisect(|w| t_mag(w) - FRAC_1_SQRT_2, ws[i - 1], ws[i]) / TAU,
    };

    Ok(StabilityMetrics {
        gain_margin,
        phase_crossover_rad_s: phase_crossover,
        phase_margin_deg: phase_margin,
        gain_crossover_rad_s: gain_crossover,
        closedloop_inf_norm: peak,
        peak_rad_s: peak_w,
        bandwidth_hz: bandwidth,
        closedloop_stable,
    })
}

/// Root of `f` in `[a, b]` by bisection in log-frequency.
fn bisect<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let fa0 = f(a);
    for _ in 0..60 {
        let m = (a * b).sqrt();
        if (f(m) > 0.0) == (fa0 > 0.0) {
            a = m;
        } else {
            b = m;
        }
        if b / a - 1.0 < 1e-12 {
            break;
        }
    }
    (a * b).sqrt()
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (a.ln(), b.ln());
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c.exp()), f(d.exp()));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d.exp());
        }
    }
    let w = ((a + b) / 2.0).exp();
    (w, f(w))
}
