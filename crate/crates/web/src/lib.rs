//! Browser bindings. Each op has a plain Rust entry point returning a
//! serializable result and a `wasm_bindgen` wrapper returning JSON.

use serde::Serialize;
use stm_didz::dsp::{LiaChannel, LiaConfig};
use stm_didz::junction::{steady_state_gap, FeedbackMode, JunctionParams};
use stm_didz::lti::{log_grid, PlantSpec};
use stm_didz::sysid::{pi_tuning_region, TuningCriteria};
use stm_didz::{Result, SAMPLE_RATE_HZ};
use wasm_bindgen::prelude::*;

/// Settled gap over a hydrogenated site and a dangling bond.
#[derive(Debug, Clone, Serialize)]
pub struct ModeGaps {
    pub mode: &'static str,
    pub gap_h_nm: f64,
    pub gap_db_nm: f64,
    /// Apparent height of the dangling bond relative to hydrogen.
    pub apparent_height_nm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapComparison {
    pub modes: Vec<ModeGaps>,
    /// Gap ratio H/DB in current mode over the same in gradient mode.
    pub current_over_didz: f64,
}

/// Both feedback modes are locked to the same hydrogen gap, then moved over
/// a site with conductivity and barrier scaled by the given ratios.
pub fn gap_comparison(
    phi_h_ev: f64,
    gap_h_nm: f64,
    sigma_ratio: f64,
    phi_ratio: f64,
) -> Result<GapComparison> {
    let p = JunctionParams::default();
    let sigma_h = 1.0e4;
    let (sigma_db, phi_db) = (sigma_h * sigma_ratio, phi_h_ev * phi_ratio);
    let mut modes = Vec::new();
    for mode in [FeedbackMode::ConstantCurrent, FeedbackMode::ConstantDidz] {
        let rate = p.decay_rate(phi_h_ev);
        let scale = p.gain_v_per_na * p.prefactor(sigma_h).abs();
        let sp = match mode {
            FeedbackMode::ConstantCurrent => scale.ln() - rate * gap_h_nm,
            FeedbackMode::ConstantDidz => (rate * scale).ln() - rate * gap_h_nm,
        };
        let h = steady_state_gap(sp, mode, sigma_h, phi_h_ev, &p)?;
        let db = steady_state_gap(sp, mode, sigma_db, phi_db, &p)?;
        modes.push(ModeGaps {
            mode: mode.as_str(),
            gap_h_nm: h,
            gap_db_nm: db,
            apparent_height_nm: h - db,
        });
    }
    let current_over_didz = modes[0].apparent_height_nm / modes[1].apparent_height_nm;
    Ok(GapComparison {
        modes,
        current_over_didz,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LiaTrace {
    pub t_s: Vec<f64>,
    pub input: Vec<f64>,
    pub amplitude: Vec<f64>,
    pub phase_rad: Vec<f64>,
}

/// Demodulates a carrier whose amplitude steps from `a0` to `a1` halfway
/// through, on top of a DC level and a second harmonic.
pub fn lia_demo(
    reference_hz: f64,
    lpf_hz: f64,
    a0: f64,
    a1: f64,
    duration_s: f64,
    points: usize,
) -> Result<LiaTrace> {
    let cfg = LiaConfig {
        reference_hz,
        ..LiaConfig::default()
    }
    .with_lpf(lpf_hz);
    let mut lia = LiaChannel::new(cfg)?;
    let n = (duration_s * SAMPLE_RATE_HZ).round().max(1.0) as usize;
    let every = (n / points.max(1)).max(1);
    let mut out = LiaTrace {
        t_s: Vec::new(),
        input: Vec::new(),
        amplitude: Vec::new(),
        phase_rad: Vec::new(),
    };
    let w = std::f64::consts::TAU * reference_hz;
    for k in 0..n {
        let t = k as f64 / SAMPLE_RATE_HZ;
        let a = if k < n / 2 { a0 } else { a1 };
        let x = 1.0 + a * (w * t).sin() + 0.3 * a * (2.0 * w * t).sin();
        let y = lia.step(x);
        if k % every == 0 {
            out.t_s.push(t);
            out.input.push(x);
            out.amplitude.push(y.amplitude);
            out.phase_rad.push(y.phase);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TuningMap {
    pub omega_c: Vec<f64>,
    pub ki: Vec<f64>,
    /// Row-major over `omega_c`, then `ki`.
    pub feasible: Vec<bool>,
    pub bandwidth_hz: Vec<f64>,
    pub recommended: Option<(f64, f64)>,
}

/// Feasible PI gains for the default gradient-mode plant model.
pub fn tuning_region(
    n_omega_c: usize,
    n_ki: usize,
    min_bandwidth_hz: f64,
    max_inf_norm_db: f64,
) -> Result<TuningMap> {
    let p = JunctionParams::default();
    let g = PlantSpec::default().linear_model(
        FeedbackMode::ConstantDidz,
        p.decay_rate(4.5),
        &LiaConfig::default(),
    )?;
    let wc = log_grid(1.0e2, 1.0e5, n_omega_c.max(2));
    let ki = log_grid(1.0e3, 1.0e5, n_ki.max(2));
    let crit = TuningCriteria {
        min_bandwidth_hz,
        max_inf_norm_db,
        grid_points: 400,
    };
    let r = pi_tuning_region(&g, &wc, &ki, &crit)?;
    Ok(TuningMap {
        feasible: r.points.iter().map(|q| q.feasible).collect(),
        bandwidth_hz: r.points.iter().map(|q| q.bandwidth_hz).collect(),
        recommended: r.recommended,
        omega_c: wc,
        ki,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e.to_string()))
        .and_then(|v| serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string())))
}

#[wasm_bindgen(js_name = gapComparison)]
pub fn gap_comparison_js(
    phi_h_ev: f64,
    gap_h_nm: f64,
    sigma_ratio: f64,
    phi_ratio: f64,
) -> std::result::Result<String, JsValue> {
    to_js(gap_comparison(phi_h_ev, gap_h_nm, sigma_ratio, phi_ratio))
}

#[wasm_bindgen(js_name = liaDemo)]
pub fn lia_demo_js(
    reference_hz: f64,
    lpf_hz: f64,
    a0: f64,
    a1: f64,
    duration_s: f64,
    points: usize,
) -> std::result::Result<String, JsValue> {
    to_js(lia_demo(reference_hz, lpf_hz, a0, a1, duration_s, points))
}

#[wasm_bindgen(js_name = tuningRegion)]
pub fn tuning_region_js(
    n_omega_c: usize,
    n_ki: usize,
    min_bandwidth_hz: f64,
    max_inf_norm_db: f64,
) -> std::result::Result<String, JsValue> {
    to_js(tuning_region(n_omega_c, n_ki, min_bandwidth_hz, max_inf_norm_db))
}
