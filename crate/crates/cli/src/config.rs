//! Flat, typed key-value run configuration (TOML syntax). Every physical
//! quantity carries its unit in the key name.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stm_didz::control::{ApproachConfig, LoopConfig};
use stm_didz::imaging::{DoseModel, LithoRegime};
use stm_didz::junction::FeedbackMode;
use stm_didz::lti::PlantSpec;
use stm_didz::surface::SurfaceSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternKind {
    Spiral,
    Dots,
    Line,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: Option<u32>,
    pub seed: u64,
    pub output_dir: String,

    pub surface_extent_x_nm: Option<f64>,
    pub surface_extent_y_nm: Option<f64>,
    pub surface_phi_h_ev: f64,
    pub surface_sigma_h_na_per_v: f64,
    pub surface_db_sigma_factor: f64,
    pub surface_db_phi_factor: f64,
    pub surface_corrugation_nm: f64,
    pub surface_step_height_nm: f64,
    pub surface_step_edges_x_nm: Vec<f64>,
    pub surface_alternate_rows: bool,
    pub surface_initial_db_fraction: f64,

    pub bias_v: f64,
    pub preamp_gain_v_per_na: f64,
    pub preamp_bandwidth_hz: f64,
    pub hv_gain: f64,
    pub hv_pole_hz: f64,
    pub piezo_resonance_hz: f64,
    pub piezo_damping: f64,
    pub piezo_nm_per_v: f64,
    pub piezo_range_nm: f64,
    pub dac_v_per_unit: f64,
    pub loop_delay_samples: usize,

    pub loop_mode: FeedbackMode,
    pub loop_current_setpoint_na: f64,
    pub loop_didz_setpoint_na_per_nm: f64,
    pub loop_ki: f64,
    pub loop_omega_c_rad_per_s: f64,
    pub z_mod_amplitude_v: f64,
    pub z_mod_freq_hz: f64,
    pub bias_mod_amplitude_v: f64,
    pub bias_mod_freq_hz: f64,
    pub lia_lpf_hz: f64,
    pub lia_lpf_order: usize,

    pub approach_start_gap_nm: f64,
    pub approach_threshold_na: f64,
    pub approach_max_steps: usize,

    pub scan_origin_x_nm: f64,
    pub scan_origin_y_nm: f64,
    pub scan_width_nm: f64,
    pub scan_height_nm: f64,
    pub scan_pixels_x: usize,
    pub scan_pixels_y: usize,
    pub scan_speed_nm_per_s: f64,
    pub scan_settle_s: f64,
    pub scan_spectroscopy: bool,

    pub switchover_x_nm: f64,
    pub switchover_y_nm: f64,
    pub switchover_at_s: f64,
    pub switchover_capture_s: f64,
    pub switchover_hold_s: f64,
    pub switchover_round_trip: bool,
    pub switchover_decimate: usize,

    pub sysid_freq_min_hz: f64,
    pub sysid_freq_max_hz: f64,
    pub sysid_points: usize,
    pub sysid_averages: usize,
    pub sysid_cycles: usize,
    pub sysid_setpoint_amplitude: f64,
    pub sysid_output_amplitude: f64,
    pub sysid_fit_order: usize,
    pub sysid_noise_std: f64,

    pub tune_model_file: Option<String>,
    pub tune_omega_c_min_rad_per_s: f64,
    pub tune_omega_c_max_rad_per_s: f64,
    pub tune_omega_c_points: usize,
    pub tune_ki_min: f64,
    pub tune_ki_max: f64,
    pub tune_ki_points: usize,
    pub tune_min_bandwidth_hz: f64,
    pub tune_max_inf_norm_db: f64,

    pub litho_pattern: PatternKind,
    pub litho_regime: LithoRegime,
    pub litho_bias_v: f64,
    pub litho_setpoint_na_per_nm: f64,
    pub litho_speed_nm_per_s: f64,
    pub litho_transit_speed_nm_per_s: f64,
    pub litho_start_row: f64,
    pub litho_start_dimer: f64,
    pub litho_spiral_loops: usize,
    pub litho_spiral_pitch_rows: f64,
    pub litho_line_length_dimers: f64,
    pub litho_dots_per_side: usize,
    pub litho_dot_spacing_rows: f64,
    pub litho_dot_spacing_dimers: f64,
    pub litho_eta_knots_v: Vec<f64>,
    pub litho_eta_knots_yield: Vec<f64>,
    pub litho_ap_sigma_nm: f64,
    pub litho_fe_sigma_nm: f64,
    pub litho_image_pixels: usize,
    pub litho_image_speed_nm_per_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = SurfaceSpec::default();
        let p = PlantSpec::default();
        let l = LoopConfig::default();
        let a = ApproachConfig::default();
        let d = DoseModel::default();
        Self {
            schema_version: None,
            seed: 0,
            output_dir: "out".into(),
            surface_extent_x_nm: None,
            surface_extent_y_nm: None,
            surface_phi_h_ev: s.phi_h_ev,
            surface_sigma_h_na_per_v: s.sigma_h_na_per_v,
            surface_db_sigma_factor: s.db_sigma_factor,
            surface_db_phi_factor: s.db_phi_factor,
            surface_corrugation_nm: s.lattice.corrugation_amplitude_nm,
            surface_step_height_nm: s.lattice.step_height_nm,
            surface_step_edges_x_nm: Vec::new(),
            surface_alternate_rows: false,
            surface_initial_db_fraction: 0.0,
            bias_v: l.junction.bias_v,
            preamp_gain_v_per_na: p.preamp_gain_v_per_na,
            preamp_bandwidth_hz: p.preamp_bandwidth_hz,
            hv_gain: p.hv_gain,
            hv_pole_hz: p.hv_pole_hz,
            piezo_resonance_hz: p.piezo_resonance_hz,
            piezo_damping: p.piezo_damping,
            piezo_nm_per_v: p.piezo_nm_per_v,
            piezo_range_nm: l.piezo_range_nm,
            dac_v_per_unit: p.dac_v_per_unit,
            loop_delay_samples: p.loop_delay_samples,
            loop_mode: FeedbackMode::ConstantCurrent,
            loop_current_setpoint_na: 0.5,
            loop_didz_setpoint_na_per_nm: 0.25,
            loop_ki: l.ki,
            loop_omega_c_rad_per_s: l.omega_c,
            z_mod_amplitude_v: l.z_mod.amplitude_v,
            z_mod_freq_hz: l.z_mod.freq_hz,
            bias_mod_amplitude_v: l.bias_mod.amplitude_v,
            bias_mod_freq_hz: l.bias_mod.freq_hz,
            lia_lpf_hz: l.lia.lpf_hz,
            lia_lpf_order: l.lia.lpf_order,
            approach_start_gap_nm: a.start_gap_nm,
            approach_threshold_na: a.threshold_na,
            approach_max_steps: a.max_steps,
            scan_origin_x_nm: 0.0,
            scan_origin_y_nm: 0.0,
            scan_width_nm: 48.0,
            scan_height_nm: 48.0,
            scan_pixels_x: 512,
            scan_pixels_y: 512,
            scan_speed_nm_per_s: 100.0,
            scan_settle_s: 0.02,
            scan_spectroscopy: false,
            switchover_x_nm: 1.0,
            switchover_y_nm: 1.0,
            switchover_at_s: 0.2,
            switchover_capture_s: 1.0,
            switchover_hold_s: 0.3,
            switchover_round_trip: true,
            switchover_decimate: 10,
            sysid_freq_min_hz: 5.0,
            sysid_freq_max_hz: 1500.0,
            sysid_points: 30,
            sysid_averages: 4,
            sysid_cycles: 8,
            sysid_setpoint_amplitude: 0.02,
            sysid_output_amplitude: 1.0,
            sysid_fit_order: 7,
            sysid_noise_std: 0.0,
            tune_model_file: None,
            tune_omega_c_min_rad_per_s: 2e3,
            tune_omega_c_max_rad_per_s: 5e4,
            tune_omega_c_points: 10,
            tune_ki_min: 1e3,
            tune_ki_max: 1e6,
            tune_ki_points: 24,
            tune_min_bandwidth_hz: 35.0,
            tune_max_inf_norm_db: 3.0,
            litho_pattern: PatternKind::Spiral,
            litho_regime: LithoRegime::AtomicallyPrecise,
            litho_bias_v: 4.0,
            litho_setpoint_na_per_nm: 4.0,
            litho_speed_nm_per_s: 10.0,
            litho_transit_speed_nm_per_s: 100.0,
            litho_start_row: 15.0,
            litho_start_dimer: 30.0,
            litho_spiral_loops: 3,
            litho_spiral_pitch_rows: 3.0,
            litho_line_length_dimers: 30.0,
            litho_dots_per_side: 3,
            litho_dot_spacing_rows: 4.0,
            litho_dot_spacing_dimers: 8.0,
            litho_eta_knots_v: d.eta_knots.iter().map(|k| k.0).collect(),
            litho_eta_knots_yield: d.eta_knots.iter().map(|k| k.1).collect(),
            litho_ap_sigma_nm: d.ap_sigma_nm,
            litho_fe_sigma_nm: d.fe_sigma_nm,
            litho_image_pixels: 96,
            litho_image_speed_nm_per_s: 200.0,
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError(e.to_string()))?;
        match cfg.schema_version {
            None => return Err(ConfigError("missing required key `schema_version`".into())),
            Some(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(ConfigError(format!(
                    "key `schema_version`: unsupported version {v}, expected {SCHEMA_VERSION}"
                )))
            }
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let need = |key: &str, v: Option<f64>| match v {
            Some(v) if v > 0.0 && v.is_finite() => Ok(()),
            Some(v) => Err(ConfigError(format!("key `{key}`: must be positive, got {v}"))),
            None => Err(ConfigError(format!("missing required key `{key}` (surface spec)"))),
        };
        need("surface_extent_x_nm", self.surface_extent_x_nm)?;
        need("surface_extent_y_nm", self.surface_extent_y_nm)?;
        if self.litho_eta_knots_v.len() != self.litho_eta_knots_yield.len() {
            return Err(ConfigError(
                "keys `litho_eta_knots_v` and `litho_eta_knots_yield` must have the same length".into(),
            ));
        }
        if self.litho_eta_knots_v.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError("key `litho_eta_knots_v`: must be increasing".into()));
        }
        if self.litho_eta_knots_yield.iter().any(|&y| !(y > 0.0)) {
            return Err(ConfigError("key `litho_eta_knots_yield`: yields must be positive".into()));
        }
        if self.switchover_decimate == 0 {
            return Err(ConfigError("key `switchover_decimate`: must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn surface_spec(&self) -> SurfaceSpec {
        let mut s = SurfaceSpec::default();
        s.extent_x_nm = self.surface_extent_x_nm.unwrap_or(0.0);
        s.extent_y_nm = self.surface_extent_y_nm.unwrap_or(0.0);
        s.phi_h_ev = self.surface_phi_h_ev;
        s.sigma_h_na_per_v = self.surface_sigma_h_na_per_v;
        s.db_sigma_factor = self.surface_db_sigma_factor;
        s.db_phi_factor = self.surface_db_phi_factor;
        s.lattice.corrugation_amplitude_nm = self.surface_corrugation_nm;
        s.lattice.step_height_nm = self.surface_step_height_nm;
        s.step_edges_x_nm = self.surface_step_edges_x_nm.clone();
        s.alternate_row_orientation = self.surface_alternate_rows;
        s.initial_db_fraction = self.surface_initial_db_fraction;
        s.seed = self.seed;
        s
    }

    pub fn plant_spec(&self) -> PlantSpec {
        PlantSpec {
            hv_gain: self.hv_gain,
            hv_pole_hz: self.hv_pole_hz,
            piezo_resonance_hz: self.piezo_resonance_hz,
            piezo_damping: self.piezo_damping,
            piezo_nm_per_v: self.piezo_nm_per_v,
            preamp_gain_v_per_na: self.preamp_gain_v_per_na,
            preamp_bandwidth_hz: self.preamp_bandwidth_hz,
            dac_v_per_unit: self.dac_v_per_unit,
            loop_delay_samples: self.loop_delay_samples,
            ..PlantSpec::default()
        }
    }

    /// Physical set-point for `mode`: nA or nA/nm.
    pub fn setpoint(&self, mode: FeedbackMode) -> f64 {
        match mode {
            FeedbackMode::ConstantCurrent => self.loop_current_setpoint_na,
            FeedbackMode::ConstantDidz => self.loop_didz_setpoint_na_per_nm,
        }
    }

    pub fn loop_config(&self, mode: FeedbackMode) -> LoopConfig {
        let mut c = LoopConfig::for_mode(mode);
        c.plant = self.plant_spec();
        c.junction.bias_v = self.bias_v;
        c.junction.gain_v_per_na = self.preamp_gain_v_per_na;
        c.setpoint = (c.junction.gain_v_per_na * self.setpoint(mode)).ln();
        c.ki = self.loop_ki;
        c.omega_c = self.loop_omega_c_rad_per_s;
        c.z_mod.amplitude_v = self.z_mod_amplitude_v;
        c.z_mod.freq_hz = self.z_mod_freq_hz;
        c.bias_mod.amplitude_v = self.bias_mod_amplitude_v;
        c.bias_mod.freq_hz = self.bias_mod_freq_hz;
        c.lia.lpf_hz = self.lia_lpf_hz;
        c.lia.lpf_order = self.lia_lpf_order;
        c.piezo_range_nm = self.piezo_range_nm;
        c
    }

    pub fn approach_config(&self) -> ApproachConfig {
        ApproachConfig {
            start_gap_nm: self.approach_start_gap_nm,
            threshold_na: self.approach_threshold_na,
            max_steps: self.approach_max_steps,
            ..ApproachConfig::default()
        }
    }

    pub fn dose_model(&self) -> DoseModel {
        DoseModel {
            eta_knots: self.litho_eta_knots_v.iter().copied().zip(self.litho_eta_knots_yield.iter().copied()).collect(),
            ap_sigma_nm: self.litho_ap_sigma_nm,
            fe_sigma_nm: self.litho_fe_sigma_nm,
            ..DoseModel::default()
        }
    }
}
