//! Tunneling junction model.
//!
//! The current through the junction is `i = f(σ, V_b)·exp(−κ0·√φ·δ)` where
//! `δ = z_t − h` is the tip-sample gap. Taking logarithms makes both the
//! current and its z-gradient affine in `δ`, which is what lets a linear PI
//! controller regulate the gap.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Decay constant in nm⁻¹·eV^(-1/2) (1.025 Å⁻¹·eV^(-1/2) rescaled to nm).
pub const DEFAULT_KAPPA0: f64 = 10.25;

/// Smallest current (nA) the preamplifier can resolve; logs are floored here.
pub const DEFAULT_MIN_CURRENT_NA: f64 = 1e-6;

/// Which quantity the feedback loop holds constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    /// Regulates `ln(R·|i|)`.
    #[default]
    ConstantCurrent,
    /// Regulates `ln(R·|di/dz|)` measured with a z-dither and lock-in.
    ConstantDidz,
}

impl FeedbackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackMode::ConstantCurrent => "constant_current",
            FeedbackMode::ConstantDidz => "constant_didz",
        }
    }
}

/// Bias/conductivity prefactor `f(σ, V_b)`.
#[derive(Debug, Clone, Copy)]
pub enum BiasModel {
    /// `f = σ·V_b`.
    Ohmic,
    /// User-supplied prefactor.
    Custom(fn(f64, f64) -> f64),
}

impl BiasModel {
    pub fn prefactor(&self, sigma: f64, bias_v: f64) -> f64 {
        match self {
            BiasModel::Ohmic => sigma * bias_v,
            BiasModel::Custom(f) => f(sigma, bias_v),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct JunctionParams {
    /// nm⁻¹·eV^(-1/2)
    pub kappa0: f64,
    /// Preamplifier transimpedance R (V/nA).
    pub gain_v_per_na: f64,
    pub bias_v: f64,
    pub min_current_na: f64,
    pub bias_model: BiasModel,
}

impl Default for JunctionParams {
    fn default() -> Self {
        Self {
            kappa0: DEFAULT_KAPPA0,
            gain_v_per_na: 1.0,
            bias_v: -2.5,
            min_current_na: DEFAULT_MIN_CURRENT_NA,
            bias_model: BiasModel::Ohmic,
        }
    }
}

impl JunctionParams {
    pub fn with_bias(mut self, bias_v: f64) -> Self {
        self.bias_v = bias_v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa0 > 0.0 && self.kappa0.is_finite()) {
            return Err(Error::Domain(format!(
                "kappa0 must be positive, got {}",
                self.kappa0
            )));
        }
        if !(self.gain_v_per_na > 0.0 && self.gain_v_per_na.is_finite()) {
            return Err(Error::Domain(format!(
                "preamp gain must be positive, got {}",
                self.gain_v_per_na
            )));
        }
        if self.bias_v == 0.0 || !self.bias_v.is_finite() {
            return Err(Error::Domain("bias must be finite and non-zero".into()));
        }
        Ok(())
    }

    /// `κ0·√φ`, the slope of `ln|i|` against the gap (nm⁻¹).
    pub fn decay_rate(&self, phi_ev: f64) -> f64 {
        self.kappa0 * phi_ev.sqrt()
    }

    pub fn prefactor(&self, sigma: f64) -> f64 {
        self.bias_model.prefactor(sigma, self.bias_v)
    }
}

/// Instantaneous tip/sample configuration at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TipSampleState {
    /// Tip height (nm).
    pub z_t: f64,
    /// Local topography (nm).
    pub h: f64,
    /// Local conductivity (nA/V).
    pub sigma: f64,
    /// Local barrier height (eV).
    pub phi: f64,
}

impl TipSampleState {
    pub fn new(z_t: f64, h: f64, sigma: f64, phi: f64) -> Self {
        Self { z_t, h, sigma, phi }
    }

    /// State with an explicit gap and `h = 0`.
    pub fn at_gap(delta: f64, sigma: f64, phi: f64) -> Self {
        Self {
            z_t: delta,
            h: 0.0,
            sigma,
            phi,
        }
    }

    pub fn gap(&self) -> f64 {
        self.z_t - self.h
    }

    fn check(&self) -> Result<f64> {
        let fields = [self.z_t, self.h, self.sigma, self.phi];
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite junction state {self:?}")));
        }
        if self.phi <= 0.0 {
            return Err(Error::Domain(format!(
                "barrier height must be positive, got {}",
                self.phi
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::Domain(format!(
                "conductivity must be positive, got {}",
                self.sigma
            )));
        }
        let delta = self.gap();
        if delta < 0.0 {
            return Err(Error::TipCrash {
                gap_nm: delta,
                time_s: f64::NAN,
            });
        }
        Ok(delta)
    }
}

/// Tunneling current in nA. The sign follows the bias.
pub fn tunneling_current(state: &TipSampleState, p: &JunctionParams) -> Result<f64> {
    let delta = state.check()?;
    Ok(p.prefactor(state.sigma) * (-p.decay_rate(state.phi) * delta).exp())
}

/// `ln(R·|i|)` with `|i|` floored at the minimum detectable current.
pub fn log_current(i_na: f64, p: &JunctionParams) -> f64 {
    (p.gain_v_per_na * i_na.abs().max(p.min_current_na)).ln()
}

/// Analytic z-gradient of the current, `di/dz = −κ0·√φ·i` (nA/nm).
pub fn didz_analytic(state: &TipSampleState, p: &JunctionParams) -> Result<f64> {
    let i = tunneling_current(state, p)?;
    Ok(-p.decay_rate(state.phi) * i)
}

/// Gap at which a loop in `mode` settles for the given ln-domain set-point
/// over a site with conductivity `sigma` and barrier height `phi`.
pub fn steady_state_gap(
    setpoint: f64,
    mode: FeedbackMode,
    sigma: f64,
    phi: f64,
    p: &JunctionParams,
) -> Result<f64> {
    if !(phi > 0.0) || !setpoint.is_finite() {
        return Err(Error::Domain(format!(
            "bad inputs setpoint={setpoint} phi={phi}"
        )));
    }
    let rate = p.decay_rate(phi);
    let scale = match mode {
        FeedbackMode::ConstantCurrent => p.gain_v_per_na * p.prefactor(sigma).abs(),
        FeedbackMode::ConstantDidz => rate * p.gain_v_per_na * p.prefactor(sigma).abs(),
    };
    if !(scale > 0.0) {
        return Err(Error::InfeasibleSetpoint(format!(
            "log argument {scale} is not positive"
        )));
    }
    let delta = (scale.ln() - setpoint) / rate;
    if delta < 0.0 {
        return Err(Error::InfeasibleSetpoint(format!(
            "set-point {setpoint} needs negative gap {delta:.4} nm"
        )));
    }
    Ok(delta)
}
