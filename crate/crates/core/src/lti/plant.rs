use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::LinearSystem;
use crate::dsp::LiaConfig;
use crate::junction::FeedbackMode;
use crate::{Error, Result};

/// Physical parameters of the z-axis signal chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub hv_gain: f64,
    pub hv_pole_hz: f64,
    pub piezo_resonance_hz: f64,
    pub piezo_damping: f64,
    pub piezo_nm_per_v: f64,
    pub preamp_gain_v_per_na: f64,
    pub preamp_bandwidth_hz: f64,
    /// Scale from controller units to DAC volts.
    pub dac_v_per_unit: f64,
    /// Samples between measurement and the controller acting on it.
    pub loop_delay_samples: usize,
    pub sample_rate_hz: f64,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self {
            hv_gain: 13.5,
            hv_pole_hz: 50_000.0,
            piezo_resonance_hz: 8_000.0,
            piezo_damping: 0.05,
            piezo_nm_per_v: 1.0,
            preamp_gain_v_per_na: 1.0,
            preamp_bandwidth_hz: 1_100.0,
            dac_v_per_unit: 1e-4,
            loop_delay_samples: 1,
            sample_rate_hz: crate::SAMPLE_RATE_HZ,
        }
    }
}

impl PlantSpec {
    pub fn validate(&self) -> Result<()> {
        let nyq = self.sample_rate_hz / 2.0;
        let positive = [
            ("hv_gain", self.hv_gain),
            ("piezo_nm_per_v", self.piezo_nm_per_v),
            ("preamp_gain_v_per_na", self.preamp_gain_v_per_na),
            ("dac_v_per_unit", self.dac_v_per_unit),
            ("piezo_damping", self.piezo_damping),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Domain(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.hv_pole_hz > 0.0 && self.hv_pole_hz.is_finite()) {
            return Err(Error::Domain(format!(
                "hv_pole_hz must be positive, got {}",
                self.hv_pole_hz
            )));
        }
        for (name, f) in [
            ("piezo_resonance_hz", self.piezo_resonance_hz),
            ("preamp_bandwidth_hz", self.preamp_bandwidth_hz),
        ] {
            if !(f > 0.0 && f < nyq) {
                return Err(Error::Domain(format!(
                    "{name} = {f} must lie in (0, {nyq}) Hz"
                )));
            }
        }
        Ok(())
    }

    /// Envelope delay of a carrier at `carrier_hz` through the preamp pole.
    pub fn preamp_envelope_delay_s(&self, carrier_hz: f64) -> f64 {
        let wp = TAU * self.preamp_bandwidth_hz;
        let r = carrier_hz / self.preamp_bandwidth_hz;
        1.0 / wp / (1.0 + r * r)
    }

    /// Effective transport delay of the gradient measurement path.
    pub fn didz_delay_s(&self, lia: &LiaConfig) -> f64 {
        self.loop_delay_samples as f64 / self.sample_rate_hz
            + lia.sync_window_s() / 2.0
            + self.preamp_envelope_delay_s(lia.reference_hz)
    }

    /// Small-signal model from controller output to the regulated log
    /// signal, linearized at a site with decay rate `κ0·√φ`.
    ///
    /// Gradient mode: `dac·κ√φ·G_h·G_p·LPF_lia·Padé₂(T_d)`, seventh order.
    /// Current mode: `dac·κ√φ·G_h·G_p·G_A·Padé₁(T_s)`.
    pub fn linear_model(
        &self,
        mode: FeedbackMode,
        decay_rate: f64,
        lia: &LiaConfig,
    ) -> Result<LinearSystem> {
        self.validate()?;
        let chain = PlantChain::new(self);
        let actuator = chain
            .hv
            .series(&chain.piezo)?
            .scaled(self.dac_v_per_unit * decay_rate);
        match mode {
            FeedbackMode::ConstantDidz => {
                lia.validate()?;
                let corner = lia.lpf_hz / (2f64.powf(1.0 / lia.lpf_order as f64) - 1.0).sqrt();
                let mut sys = actuator;
                for _ in 0..lia.lpf_order {
                    sys = sys.series(&LinearSystem::first_order_lowpass(corner, 1.0))?;
                }
                sys.series(&LinearSystem::pade(self.didz_delay_s(lia), 2)?)
            }
            FeedbackMode::ConstantCurrent => {
                let delay = self.loop_delay_samples as f64 / self.sample_rate_hz;
                actuator
                    .series(&LinearSystem::first_order_lowpass(
                        self.preamp_bandwidth_hz,
                        1.0,
                    ))?
                    .series(&LinearSystem::pade(delay, 1)?)
            }
        }
    }
}

/// Continuous blocks of the signal chain, in signal order
/// `u → HV → piezo → junction → preamp`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantChain {
    /// V/V
    pub hv: LinearSystem,
    /// nm/V
    pub piezo: LinearSystem,
    /// V/nA
    pub preamp: LinearSystem,
}

impl PlantChain {
    pub fn new(spec: &PlantSpec) -> Self {
        Self {
            hv: LinearSystem::first_order_lowpass(spec.hv_pole_hz, spec.hv_gain),
            piezo: LinearSystem::resonator(
                spec.piezo_resonance_hz,
                spec.piezo_damping,
                spec.piezo_nm_per_v,
            ),
            preamp: LinearSystem::first_order_lowpass(
                spec.preamp_bandwidth_hz,
                spec.preamp_gain_v_per_na,
            ),
        }
    }

    /// Bilinear equivalents; the resonance is prewarped so the discrete
    /// piezo rings at the configured frequency.
    pub fn discretize(&self, sample_rate_hz: f64) -> Result<Self> {
        let f0 = self.piezo.poles.first().map_or(0.0, |p| p.norm() / TAU);
        let piezo = if f0 > 0.0 && f0 < sample_rate_hz / 2.0 {
            self.piezo.discretize_prewarped(sample_rate_hz, f0)?
        } else {
            self.piezo.discretize(sample_rate_hz)?
        };
        Ok(Self {
            hv: self.hv.discretize(sample_rate_hz)?,
            piezo,
            preamp: self.preamp.discretize(sample_rate_hz)?,
        })
    }

    /// `|G_h·G_p|` at `freq_hz`, nm of tip motion per DAC volt.
    pub fn actuator_gain(&self, freq_hz: f64) -> f64 {
        let w = TAU * freq_hz;
        (self.hv.response(w) * self.piezo.response(w)).norm()
    }

    /// `|G_A(jω)|/G_A(0)`
    pub fn preamp_relative_gain(&self, freq_hz: f64) -> f64 {
        self.preamp.response(TAU * freq_hz).norm() / self.preamp.dc_gain()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::stability_metrics;

    #[test]
    fn composition_dc_gains() {
        let chain = PlantChain::new(&PlantSpec::default());
        assert!((chain.hv.dc_gain() - 13.5).abs() < 1e-12);
        assert!((chain.piezo.dc_gain() - 1.0).abs() < 1e-12);
        assert!((chain.preamp.dc_gain() - 1.0).abs() < 1e-12);
        let d = chain.discretize(1e5).unwrap();
        assert!((d.hv.dc_gain() - 13.5).abs() < 1e-9);
        assert!((d.piezo.dc_gain() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn default_didz_plant_is_seventh_order() {
        let g = PlantSpec::default()
            .linear_model(
                FeedbackMode::ConstantDidz,
                10.25 * 4.5f64.sqrt(),
                &LiaConfig::default(),
            )
            .unwrap();
        assert_eq!(g.order(), 7);
        assert!(g.is_stable());
    }

    #[test]
    fn nominal_gains_are_stable_with_enough_bandwidth() {
        let g = PlantSpec::default()
            .linear_model(
                FeedbackMode::ConstantDidz,
                10.25 * 4.5f64.sqrt(),
                &LiaConfig::default(),
            )
            .unwrap();
        let l = LinearSystem::pi(1.625e4, 1e4).series(&g).unwrap();
        let m = stability_metrics(&l).unwrap();
        assert!(m.closedloop_stable);
        assert!(m.bandwidth_hz >= 35.0, "{m:?}");
        assert!(m.gain_margin > 1.0);
    }

    #[test]
    fn envelope_delay_value() {
        let d = PlantSpec::default().preamp_envelope_delay_s(2000.0);
        assert!((d - 33.6e-6).abs() < 0.5e-6, "{d}");
    }
}
