use serde::{Deserialize, Serialize};

use super::{LoopConfig, LoopRecord, LoopState};
use crate::junction::FeedbackMode;
use crate::surface::SurfaceMap;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachConfig {
    /// Gap with the piezo at mid-stroke before the first sweep.
    pub start_gap_nm: f64,
    /// Coarse step as a fraction of the piezo stroke.
    pub coarse_step_fraction: f64,
    pub threshold_na: f64,
    pub max_steps: usize,
    /// Extension increment of each fine sweep.
    pub sweep_step_nm: f64,
}

impl Default for ApproachConfig {
    fn default() -> Self {
        Self {
            start_gap_nm: 50.0,
            coarse_step_fraction: 0.9,
            threshold_na: 0.1,
            max_steps: 20,
            sweep_step_nm: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproachReport {
    pub coarse_steps: usize,
    pub z_base_nm: f64,
    pub detection_extension_nm: f64,
    pub detection_gap_nm: f64,
}

/// Alternates full fine-piezo sweeps with coarse steps until the current
/// crosses `threshold_na`, then hands over to the regulating loop.
pub fn coarse_approach(
    cfg: LoopConfig,
    surface: &SurfaceMap,
    x_nm: f64,
    y_nm: f64,
    ac: &ApproachConfig,
) -> Result<(LoopState, ApproachReport)> {
    cfg.validate()?;
    if !(ac.sweep_step_nm > 0.0 && ac.coarse_step_fraction > 0.0) {
        return Err(Error::Config("approach steps must be positive".into()));
    }
    let site = surface.sample(x_nm, y_nm)?;
    let jp = &cfg.junction;
    let half = cfg.piezo_range_nm / 2.0;
    let coarse = ac.coarse_step_fraction * cfg.piezo_range_nm;
    let mut z_base = site.h + ac.start_gap_nm;
    let n_sweep = (cfg.piezo_range_nm / ac.sweep_step_nm).ceil() as usize;
    for steps in 0..=ac.max_steps {
        for k in 0..=n_sweep {
            let ext = (-half + k as f64 * ac.sweep_step_nm).min(half);
            let gap = z_base - ext - site.h;
            if gap < 0.0 {
                return Err(Error::ApproachFailure(format!(
                    "gap closed after {steps} coarse steps without current above {} nA",
                    ac.threshold_na
                )));
            }
            let i = (jp.prefactor(site.sigma) * (-jp.decay_rate(site.phi) * gap).exp()).abs();
            if i >= ac.threshold_na {
                let state =
                    LoopState::engaged(cfg, surface, x_nm, y_nm, z_base).map_err(|e| match e {
                        Error::InfeasibleSetpoint(m) => Error::ApproachFailure(m),
                        other => other,
                    })?;
                let report = ApproachReport {
                    coarse_steps: steps,
                    z_base_nm: z_base,
                    detection_extension_nm: ext,
                    detection_gap_nm: gap,
                };
                return Ok((state, report));
            }
        }
        // retract fully, then move the coarse stage in
        z_base -= coarse;
    }
    Err(Error::ApproachFailure(format!(
        "no tunneling after {} coarse steps",
        ac.max_steps
    )))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchoverReport {
    pub from: FeedbackMode,
    pub to: FeedbackMode,
    pub new_setpoint: f64,
    /// Relative std of the measured amplitude during the settle check.
    pub settle_rel_std: f64,
    pub capture_start_s: f64,
    pub capture_end_s: f64,
    /// Settle-check and capture records, in order.
    pub records: Vec<LoopRecord>,
}

/// Window of the lock-in settle check.
pub const SETTLE_WINDOW_S: f64 = 0.1;
/// Largest relative std of the amplitude accepted as settled.
pub const SETTLE_REL_STD: f64 = 0.01;

/// Changes the regulated quantity without a bump: checks that the new
/// signal is steady, averages it for `capture_s`, installs the mean as the
/// set-point and keeps the integrator.
pub fn switchover(
    state: &mut LoopState,
    surface: &SurfaceMap,
    to: FeedbackMode,
    capture_s: f64,
) -> Result<SwitchoverReport> {
    let from = state.mode();
    if from == to {
        return Err(Error::SwitchoverRefused(format!(
            "already in {}",
            to.as_str()
        )));
    }
    if !state.config().z_mod.enabled {
        return Err(Error::SwitchoverRefused(
            "z modulation is off; no gradient signal".into(),
        ));
    }
    let amplitude = |r: &LoopRecord| match to {
        FeedbackMode::ConstantDidz => r.lia_amp_v,
        FeedbackMode::ConstantCurrent => r.ln_ri.exp(),
    };
    let signal = |r: &LoopRecord| match to {
        FeedbackMode::ConstantDidz => r.ln_rdidz,
        FeedbackMode::ConstantCurrent => r.ln_ri,
    };

    let mut records = state.run_collect(surface, SETTLE_WINDOW_S)?;
    let amps: Vec<f64> = records.iter().map(amplitude).collect();
    let mean = amps.iter().sum::<f64>() / amps.len() as f64;
    let var = amps.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / amps.len() as f64;
    let rel_std = var.sqrt() / mean.abs();
    if !(rel_std < SETTLE_REL_STD) {
        return Err(Error::SwitchoverRefused(format!(
            "lock-in not settled: relative std {rel_std:.4} over {SETTLE_WINDOW_S} s"
        )));
    }

    state.set_capture(true);
    let capture_start_s = state.time_s();
    let mut sum = 0.0;
    let mut n = 0usize;
    let captured = state.run(surface, capture_s, |r| {
        sum += signal(r);
        n += 1;
        records.push(*r);
    });
    state.set_capture(false);
    captured?;
    if n == 0 {
        return Err(Error::SwitchoverRefused("capture window is empty".into()));
    }
    let new_setpoint = sum / n as f64;
    state.install_mode(to, new_setpoint);
    Ok(SwitchoverReport {
        from,
        to,
        new_setpoint,
        settle_rel_std: rel_std,
        capture_start_s,
        capture_end_s: state.time_s(),
        records,
    })
}
