//! Linear time-invariant systems in zero/pole/gain form.
//!
//! Continuous systems are built from physical blocks, mapped to discrete
//! time with the bilinear transform and then run sample by sample as a
//! cascade of second-order sections.

mod metrics;
mod plant;
pub mod poly;
mod sim;

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use metrics::{
    closed_loop_poles, log_grid, stability_metrics, stability_metrics_on, StabilityMetrics,
};
pub use plant::{PlantChain, PlantSpec};
pub use sim::Simulator;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "domain", rename_all = "snake_case")]
pub enum Domain {
    Continuous,
    Discrete { sample_rate_hz: f64 },
}

/// `H = k·Π(x − zᵢ)/Π(x − pᵢ)` with `x = s` or `x = z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub zeros: Vec<Complex64>,
    pub poles: Vec<Complex64>,
    pub gain: f64,
    pub domain: Domain,
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

impl LinearSystem {
    pub fn zpk(zeros: Vec<Complex64>, poles: Vec<Complex64>, gain: f64) -> Result<Self> {
        let sys = Self {
            zeros,
            poles,
            gain,
            domain: Domain::Continuous,
        };
        sys.check()?;
        Ok(sys)
    }

    pub fn static_gain(k: f64) -> Self {
        Self {
            zeros: vec![],
            poles: vec![],
            gain: k,
            domain: Domain::Continuous,
        }
    }

    /// `dc·ωc/(s + ωc)`
    pub fn first_order_lowpass(corner_hz: f64, dc: f64) -> Self {
        let wc = TAU * corner_hz;
        Self {
            zeros: vec![],
            poles: vec![c(-wc, 0.0)],
            gain: dc * wc,
            domain: Domain::Continuous,
        }
    }

    /// `dc·ω0²/(s² + 2ζω0·s + ω0²)`
    pub fn resonator(f0_hz: f64, zeta: f64, dc: f64) -> Self {
        let w0 = TAU * f0_hz;
        let re = -zeta * w0;
        let poles = if zeta < 1.0 {
            let im = w0 * (1.0 - zeta * zeta).sqrt();
            vec![c(re, im), c(re, -im)]
        } else {
            let d = w0 * (zeta * zeta - 1.0).sqrt();
            vec![c(re + d, 0.0), c(re - d, 0.0)]
        };
        Self {
            zeros: vec![],
            poles,
            gain: dc * w0 * w0,
            domain: Domain::Continuous,
        }
    }

    /// `ki/s`
    pub fn integrator(ki: f64) -> Self {
        Self {
            zeros: vec![],
            poles: vec![c(0.0, 0.0)],
            gain: ki,
            domain: Domain::Continuous,
        }
    }

    /// `ki·(1/s + 1/ωc) = (ki/ωc)·(s + ωc)/s`
    pub fn pi(ki: f64, wc: f64) -> Self {
        Self {
            zeros: vec![c(-wc, 0.0)],
            poles: vec![c(0.0, 0.0)],
            gain: ki / wc,
            domain: Domain::Continuous,
        }
    }

    /// Padé approximant of `e^{−sT}` of order 1 or 2.
    pub fn pade(delay_s: f64, order: usize) -> Result<Self> {
        if !(delay_s > 0.0) {
            return Ok(Self::static_gain(1.0));
        }
        let t = delay_s;
        let (zeros, poles, gain) = match order {
            1 => (vec![c(2.0 / t, 0.0)], vec![c(-2.0 / t, 0.0)], -1.0),
            2 => {
                let (re, im) = (3.0 / t, 3f64.sqrt() / t);
                (
                    vec![c(re, im), c(re, -im)],
                    vec![c(-re, im), c(-re, -im)],
                    1.0,
                )
            }
            _ => return Err(Error::Domain(format!("Padé order {order} not supported"))),
        };
        Ok(Self {
            zeros,
            poles,
            gain,
            domain: Domain::Continuous,
        })
    }

    /// Pure delay of `n` samples, `z⁻ⁿ`.
    pub fn delay_samples(n: usize, sample_rate_hz: f64) -> Self {
        Self {
            zeros: vec![],
            poles: vec![c(0.0, 0.0); n],
            gain: 1.0,
            domain: Domain::Discrete { sample_rate_hz },
        }
    }

    /// Builds from coefficient lists in descending powers.
    pub fn from_coefficients(num: &[f64], den: &[f64], domain: Domain) -> Result<Self> {
        let (num, den) = (poly::trim(num), poly::trim(den));
        if den.is_empty() {
            return Err(Error::Domain("denominator is zero".into()));
        }
        if num.is_empty() {
            return Ok(Self {
                zeros: vec![],
                poles: poly::roots(den),
                gain: 0.0,
                domain,
            });
        }
        if num.len() > den.len() {
            return Err(Error::Improper {
                num: num.len() - 1,
                den: den.len() - 1,
            });
        }
        let sys = Self {
            zeros: poly::roots(num),
            poles: poly::roots(den),
            gain: num[0] / den[0],
            domain,
        };
        Ok(sys)
    }

    /// `(num, den)` in descending powers with a monic denominator.
    pub fn coefficients(&self) -> (Vec<f64>, Vec<f64>) {
        (
            poly::from_roots(self.gain, &self.zeros),
            poly::from_roots(1.0, &self.poles),
        )
    }

    fn check(&self) -> Result<()> {
        if self.zeros.len() > self.poles.len() {
            return Err(Error::Improper {
                num: self.zeros.len(),
                den: self.poles.len(),
            });
        }
        if !self.gain.is_finite() || self.zeros.iter().chain(&self.poles).any(|r| !r.is_finite()) {
            return Err(Error::Domain("non-finite zero, pole or gain".into()));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.poles.len()
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.domain, Domain::Discrete { .. })
    }

    pub fn sample_rate_hz(&self) -> Option<f64> {
        match self.domain {
            Domain::Discrete { sample_rate_hz } => Some(sample_rate_hz),
            Domain::Continuous => None,
        }
    }

    pub fn is_stable(&self) -> bool {
        match self.domain {
            Domain::Continuous => self.poles.iter().all(|p| p.re < 0.0),
            Domain::Discrete { .. } => self.poles.iter().all(|p| p.norm() < 1.0),
        }
    }

    /// Cascade `self · other`.
    pub fn series(&self, other: &LinearSystem) -> Result<Self> {
        if self.domain != other.domain {
            return Err(Error::Domain(
                "cannot cascade systems from different domains".into(),
            ));
        }
        let mut zeros = self.zeros.clone();
        zeros.extend(&other.zeros);
        let mut poles = self.poles.clone();
        poles.extend(&other.poles);
        Ok(Self {
            zeros,
            poles,
            gain: self.gain * other.gain,
            domain: self.domain,
        })
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            gain: self.gain * k,
            ..self.clone()
        }
    }

    /// Unity negative feedback closure `T = L/(1 + L)`.
    pub fn feedback(&self) -> Result<Self> {
        let (num, den) = self.coefficients();
        let cl = poly::add(&den, &num);
        let lead = poly::trim(&cl).first().copied().unwrap_or(0.0);
        if lead == 0.0 {
            return Err(Error::Domain(
                "closed loop is ill-posed (1 + L(∞) = 0)".into(),
            ));
        }
        Ok(Self {
            zeros: self.zeros.clone(),
            poles: poly::roots(&cl),
            gain: self.gain / lead,
            domain: self.domain,
        })
    }

    /// Bilinear (Tustin) equivalent at `sample_rate_hz`.
    pub fn discretize(&self, sample_rate_hz: f64) -> Result<Self> {
        self.bilinear(sample_rate_hz, 2.0 * sample_rate_hz)
    }

    /// Bilinear map with frequency prewarping so the discrete response
    /// matches the continuous one exactly at `match_hz`.
    pub fn discretize_prewarped(&self, sample_rate_hz: f64, match_hz: f64) -> Result<Self> {
        let w = TAU * match_hz;
        if !(match_hz > 0.0 && match_hz < sample_rate_hz / 2.0) {
            return Err(Error::Domain(format!(
                "prewarp frequency {match_hz} Hz outside (0, fs/2)"
            )));
        }
        self.bilinear(sample_rate_hz, w / (w / (2.0 * sample_rate_hz)).tan())
    }

    fn bilinear(&self, sample_rate_hz: f64, k: f64) -> Result<Self> {
        if self.is_discrete() {
            return Err(Error::Domain("system is already discrete".into()));
        }
        self.check()?;
        if !(sample_rate_hz > 0.0) {
            return Err(Error::Domain(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        let map = |r: &Complex64| (k + r) / (k - r);
        let num: Complex64 = self.zeros.iter().map(|z| k - z).product();
        let den: Complex64 = self.poles.iter().map(|p| k - p).product();
        let mut zeros: Vec<_> = self.zeros.iter().map(map).collect();
        zeros.extend(std::iter::repeat(c(-1.0, 0.0)).take(self.poles.len() - self.zeros.len()));
        Ok(Self {
            zeros,
            poles: self.poles.iter().map(map).collect(),
            gain: self.gain * (num / den).re,
            domain: Domain::Discrete { sample_rate_hz },
        })
    }

    fn point(&self, w: f64) -> Complex64 {
        match self.domain {
            Domain::Continuous => c(0.0, w),
            Domain::Discrete { sample_rate_hz } => Complex64::from_polar(1.0, w / sample_rate_hz),
        }
    }

    /// `H(jω)` or `H(e^{jωT})` at angular frequency `w` (rad/s).
    pub fn response(&self, w: f64) -> Complex64 {
        let x = self.point(w);
        let num: Complex64 = self.zeros.iter().map(|z| x - z).product();
        let den: Complex64 = self.poles.iter().map(|p| x - p).product();
        self.gain * num / den
    }

    pub fn freq_response(&self, ws: &[f64]) -> Vec<Complex64> {
        ws.iter().map(|&w| self.response(w)).collect()
    }

    pub fn magnitude_db(&self, w: f64) -> f64 {
        20.0 * self.response(w).norm().log10()
    }

    /// Continuous phase in radians, free of ±2π jumps.
    pub fn phase(&self, w: f64) -> f64 {
        let x = self.point(w);
        let term = |r: &Complex64| -> f64 {
            match self.domain {
                Domain::Continuous => {
                    let v = x - r;
                    if r.re > 0.0 {
                        PI + (-v).arg()
                    } else {
                        v.arg()
                    }
                }
                Domain::Discrete { .. } => {
                    if r.norm() <= 1.0 {
                        x.arg() + (1.0 - r / x).arg()
                    } else {
                        (-r).arg() + (1.0 - x / r).arg()
                    }
                }
            }
        };
        let base = if self.gain < 0.0 { -PI } else { 0.0 };
        base + self.zeros.iter().map(term).sum::<f64>() - self.poles.iter().map(term).sum::<f64>()
    }

    pub fn dc_gain(&self) -> f64 {
        let x = match self.domain {
            Domain::Continuous => c(0.0, 0.0),
            Domain::Discrete { .. } => c(1.0, 0.0),
        };
        let num: Complex64 = self.zeros.iter().map(|z| x - z).product();
        let den: Complex64 = self.poles.iter().map(|p| x - p).product();
        if den.norm() == 0.0 {
            return if num.norm() == 0.0 {
                f64::NAN
            } else {
                f64::INFINITY * self.gain.signum()
            };
        }
        (self.gain * num / den).re
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 100_000.0;

    #[test]
    fn static_gain_discretizes_to_itself() {
        let d = LinearSystem::static_gain(13.5).discretize(FS).unwrap();
        assert_eq!(d.gain, 13.5);
        assert!((d.response(1234.0) - c(13.5, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn lowpass_corner_after_discretization() {
        let d = LinearSystem::first_order_lowpass(1100.0, 1.0)
            .discretize(FS)
            .unwrap();
        let db = d.magnitude_db(TAU * 1100.0);
        assert!((db + 3.0103).abs() < 0.1, "{db}");
        assert!((d.dc_gain() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_pole_maps_outside_unit_circle() {
        let s = LinearSystem::zpk(vec![], vec![c(100.0, 0.0)], 1.0).unwrap();
        let d = s.discretize(FS).unwrap();
        assert!(d.poles[0].norm() > 1.0);
        assert!(!d.is_stable());
    }

    #[test]
    fn prewarp_matches_at_target() {
        let s = LinearSystem::resonator(8000.0, 0.05, 1.0);
        let d = s.discretize_prewarped(FS, 8000.0).unwrap();
        let w = TAU * 8000.0;
        assert!((d.response(w) - s.response(w)).norm() < 1e-9 * s.response(w).norm());
        assert!((d.dc_gain() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn discrete_matches_continuous_below_twentieth_of_fs() {
        let s = LinearSystem::first_order_lowpass(1100.0, 1.0)
            .series(&LinearSystem::resonator(8000.0, 0.05, 13.5))
            .unwrap();
        let d = s.discretize(FS).unwrap();
        for w in log_grid(1.0, TAU * FS / 20.0, 200) {
            assert!((d.magnitude_db(w) - s.magnitude_db(w)).abs() < 0.2);
        }
    }

    #[test]
    fn improper_rejected() {
        let e = LinearSystem::from_coefficients(&[1.0, 0.0, 0.0], &[1.0, 1.0], Domain::Continuous);
        assert!(matches!(e, Err(Error::Improper { .. })));
        let s = LinearSystem {
            zeros: vec![c(-1.0, 0.0)],
            poles: vec![],
            gain: 1.0,
            domain: Domain::Continuous,
        };
        assert!(s.discretize(FS).is_err());
    }

    #[test]
    fn pi_high_frequency_asymptote() {
        let k = LinearSystem::pi(1.625e4, 1e4);
        assert!((k.response(1e9).norm() - 1.625).abs() < 1e-3);
        assert!((k.response(1e9).norm() - 1.625e4 / 1e4).abs() < 1e-3);
    }

    #[test]
    fn gain_has_zero_phase() {
        let g = LinearSystem::static_gain(13.5);
        for w in [1.0, 1e3, 1e6] {
            assert!((g.response(w) - c(13.5, 0.0)).norm() < 1e-12);
            assert_eq!(g.phase(w), 0.0);
        }
    }

    #[test]
    fn phase_is_continuous_through_resonance() {
        let sys = LinearSystem::resonator(8000.0, 0.05, 1.0)
            .series(&LinearSystem::pade(1e-4, 2).unwrap())
            .unwrap();
        let ws = log_grid(10.0, 1e6, 4000);
        let mut prev = sys.phase(ws[0]);
        for &w in &ws[1..] {
            let p = sys.phase(w);
            assert!((p - prev).abs() < 0.3, "jump at {w}");
            let wrapped = (p - sys.response(w).arg()).rem_euclid(TAU);
            assert!(wrapped < 1e-9 || (TAU - wrapped) < 1e-9);
            prev = p;
        }
    }

    #[test]
    fn coefficient_roundtrip() {
        let s = LinearSystem::resonator(8000.0, 0.05, 2.0);
        let (n, d) = s.coefficients();
        let back = LinearSystem::from_coefficients(&n, &d, Domain::Continuous).unwrap();
        for w in [10.0, 5e4, 1e5] {
            let (a, b) = (s.response(w), back.response(w));
            assert!((a - b).norm() < 1e-9 * a.norm());
        }
    }

    #[test]
    fn feedback_of_integrator() {
        let t = LinearSystem::integrator(100.0).feedback().unwrap();
        assert_eq!(t.poles.len(), 1);
        assert!((t.poles[0] - c(-100.0, 0.0)).norm() < 1e-9);
        assert!((t.dc_gain() - 1.0).abs() < 1e-12);
    }
}
