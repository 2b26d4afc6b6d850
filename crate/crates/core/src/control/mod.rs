//! Closed-loop z control in constant-current and constant-gradient modes.

mod pi;
mod procedures;
mod runner;

use serde::{Deserialize, Serialize};

use crate::dsp::LiaConfig;
use crate::junction::{FeedbackMode, JunctionParams};
use crate::lti::PlantSpec;
use crate::{Error, Result};

pub use pi::PiController;
pub use procedures::{
    coarse_approach, switchover, ApproachConfig, ApproachReport, SwitchoverReport,
};
pub use runner::{LoopRecord, LoopState};

/// Sinusoidal injection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Modulation {
    pub amplitude_v: f64,
    pub freq_hz: f64,
    pub enabled: bool,
}

impl Modulation {
    pub fn z_default() -> Self {
        Self {
            amplitude_v: 0.8e-3,
            freq_hz: 2000.0,
            enabled: true,
        }
    }

    pub fn bias_default() -> Self {
        Self {
            amplitude_v: 0.05,
            freq_hz: 700.0,
            enabled: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub mode: FeedbackMode,
    /// ln-domain set-point of the regulated signal.
    pub setpoint: f64,
    pub ki: f64,
    pub omega_c: f64,
    pub plant: PlantSpec,
    pub junction: JunctionParams,
    /// z dither added to the controller output.
    pub z_mod: Modulation,
    /// Bias dither for conductivity spectroscopy.
    pub bias_mod: Modulation,
    pub lia: LiaConfig,
    pub notch_harmonics: usize,
    pub notch_q: f64,
    /// Full stroke of the fine piezo; the controller saturates at its ends.
    pub piezo_range_nm: f64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self::for_mode(FeedbackMode::ConstantCurrent)
    }
}

impl LoopConfig {
    /// Defaults with the usual set-point for `mode`: 0.5 nA or 0.25 nA/nm.
    pub fn for_mode(mode: FeedbackMode) -> Self {
        let junction = JunctionParams::default();
        let r = junction.gain_v_per_na;
        let (setpoint, z_mod) = match mode {
            FeedbackMode::ConstantCurrent => (
                (r * 0.5f64).ln(),
                Modulation {
                    enabled: false,
                    ..Modulation::z_default()
                },
            ),
            FeedbackMode::ConstantDidz => ((r * 0.25f64).ln(), Modulation::z_default()),
        };
        Self {
            mode,
            setpoint,
            ki: 1.625e4,
            omega_c: 1e4,
            plant: PlantSpec::default(),
            junction,
            z_mod,
            bias_mod: Modulation::bias_default(),
            lia: LiaConfig::default(),
            notch_harmonics: 5,
            notch_q: crate::dsp::NotchBank::DEFAULT_Q,
            piezo_range_nm: 10.0,
        }
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.plant.sample_rate_hz
    }

    /// Controller output limits that keep the piezo inside its stroke.
    pub fn controller_limit(&self) -> f64 {
        let p = &self.plant;
        0.5 * self.piezo_range_nm / (p.dac_v_per_unit * p.hv_gain * p.piezo_nm_per_v)
    }

    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.junction.validate()?;
        if !(self.ki > 0.0 && self.ki.is_finite()) {
            return Err(Error::Config(format!(
                "ki must be positive, got {}",
                self.ki
            )));
        }
        if !(self.omega_c > 0.0) {
            return Err(Error::Config(format!(
                "omega_c must be positive, got {}",
                self.omega_c
            )));
        }
        if !self.setpoint.is_finite() {
            return Err(Error::Config("set-point must be finite".into()));
        }
        if !(self.piezo_range_nm > 0.0) {
            return Err(Error::Config("piezo range must be positive".into()));
        }
        if self.mode == FeedbackMode::ConstantDidz && !self.z_mod.enabled {
            return Err(Error::Config(
                "gradient mode needs the z modulation enabled".into(),
            ));
        }
        let fs = self.sample_rate_hz();
        if (self.lia.sample_rate_hz - fs).abs() > 1e-9 {
            return Err(Error::Config("lock-in and loop sample rates differ".into()));
        }
        if self.z_mod.enabled && self.bias_mod.enabled {
            let (fz, fb) = (self.z_mod.freq_hz, self.bias_mod.freq_hz);
            if (fz - fb).abs() <= self.lia.lpf_hz || fb <= self.lia.lpf_hz {
                return Err(Error::Config(format!(
                    "modulation frequencies {fz} Hz and {fb} Hz collide within the {} Hz lock-in band",
                    self.lia.lpf_hz
                )));
            }
        }
        Ok(())
    }
}
