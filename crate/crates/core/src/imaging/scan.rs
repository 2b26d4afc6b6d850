use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Image;
use crate::control::{LoopRecord, LoopState};
use crate::dsp::BasebandFilter;
use crate::junction::FeedbackMode;
use crate::surface::SurfaceMap;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    pub origin_x_nm: f64,
    pub origin_y_nm: f64,
    pub width_nm: f64,
    pub height_nm: f64,
    pub pixels_x: usize,
    pub pixels_y: usize,
    pub speed_nm_s: f64,
    pub retrace_speed_nm_s: f64,
    pub bias_v: f64,
    pub mode: FeedbackMode,
    /// nA in current mode, nA/nm in gradient mode.
    pub setpoint: f64,
    /// Pause at the first pixel before recording.
    pub settle_s: f64,
    /// Terrace conductivity used to anchor the reconstructed conductivity map.
    pub reference_sigma_na_per_v: f64,
    /// Keep every loop record of the trace lines.
    pub keep_raw: bool,
}

impl ScanConfig {
    pub fn square(
        extent_nm: f64,
        pixels: usize,
        speed_nm_s: f64,
        mode: FeedbackMode,
        setpoint: f64,
    ) -> Self {
        Self {
            origin_x_nm: 0.0,
            origin_y_nm: 0.0,
            width_nm: extent_nm,
            height_nm: extent_nm,
            pixels_x: pixels,
            pixels_y: pixels,
            speed_nm_s,
            retrace_speed_nm_s: speed_nm_s,
            bias_v: -2.5,
            mode,
            setpoint,
            settle_s: 0.02,
            reference_sigma_na_per_v: 1.0e4,
            keep_raw: false,
        }
    }

    pub fn dwell_s(&self) -> f64 {
        self.width_nm / (self.speed_nm_s * self.pixels_x as f64)
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.width_nm)
            && pos(self.height_nm)
            && pos(self.speed_nm_s)
            && pos(self.retrace_speed_nm_s))
        {
            return Err(Error::Config(
                "scan size and speeds must be positive".into(),
            ));
        }
        if self.pixels_x < 2 || self.pixels_y < 2 {
            return Err(Error::Config("scan needs at least 2×2 pixels".into()));
        }
        if !(self.setpoint > 0.0) {
            return Err(Error::Config(format!(
                "set-point must be positive, got {}",
                self.setpoint
            )));
        }
        if !(self.settle_s >= 0.0) {
            return Err(Error::Config("settle time must be non-negative".into()));
        }
        let min = 10.0 / sample_rate_hz;
        if self.dwell_s() < min {
            return Err(Error::Config(format!(
                "pixel dwell {:.3e} s is below {min:.3e} s (10 loop ticks); slow down or use fewer pixels",
                self.dwell_s()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFailure {
    pub x_nm: f64,
    pub y_nm: f64,
    pub time_s: f64,
    pub message: String,
    pub crash: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanMetadata {
    /// SHA-256 of the scan and loop configuration.
    pub config_hash: String,
    pub mode: FeedbackMode,
    pub setpoint: f64,
    pub bias_v: f64,
    pub speed_nm_s: f64,
    pub dwell_s: f64,
    pub ticks: u64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    /// Tip height from the controller output (nm); protrusions are bright.
    pub topography: Image,
    /// Dither-free current magnitude (nA).
    pub current: Image,
    /// Gradient `|di/dz|` (nA/nm), with the z dither on.
    pub didz: Option<Image>,
    /// Barrier height (eV), with the z dither on.
    pub lbh: Option<Image>,
    /// `di/dV` (nA/V), with the bias dither on.
    pub didv: Option<Image>,
    /// Reconstructed conductivity (nA/V), with both dithers on.
    pub conductivity: Option<Image>,
    pub metadata: ScanMetadata,
    pub failure: Option<ScanFailure>,
    pub raw: Vec<LoopRecord>,
}

/// Hash of the full configuration; `Debug` prints floats exactly.
fn config_hash(cfg: &ScanConfig, state: &LoopState) -> String {
    let mut h = Sha256::new();
    h.update(format!("{cfg:?}").as_bytes());
    h.update(format!("{:?}", state.config()).as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Moves the tip in a straight line at `speed`, regulating all the way.
pub(crate) fn travel(
    state: &mut LoopState,
    surface: &SurfaceMap,
    to: (f64, f64),
    speed_nm_s: f64,
    mut sink: impl FnMut(&LoopRecord),
) -> Result<()> {
    let from = state.position();
    let dist = ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt();
    let fs = state.config().sample_rate_hz();
    let n = (dist / speed_nm_s * fs).ceil() as usize;
    for k in 1..=n {
        let t = k as f64 / n as f64;
        state.set_position(from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1));
        sink(&state.step(surface)?);
    }
    state.set_position(to.0, to.1);
    Ok(())
}

#[derive(Default, Clone, Copy)]
struct Acc {
    n: f64,
    z: f64,
    i: f64,
    didz: f64,
    dlni_dz: f64,
    didv: f64,
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Raster scan with the fast axis along x: each line is traced left to
/// right while recording, then retraced without recording.
pub fn raster_scan(
    surface: &SurfaceMap,
    state: &mut LoopState,
    cfg: &ScanConfig,
) -> Result<ScanResult> {
    let fs = state.config().sample_rate_hz();
    cfg.validate(fs)?;
    if state.mode() != cfg.mode {
        return Err(Error::Config(format!(
            "loop regulates {} but the scan asks for {}",
            state.mode().as_str(),
            cfg.mode.as_str()
        )));
    }
    let (x0, y0) = (cfg.origin_x_nm, cfg.origin_y_nm);
    let (x1, y1) = (x0 + cfg.width_nm, y0 + cfg.height_nm);
    if !(surface.contains(x0, y0) && surface.contains(x1, y1)) {
        return Err(Error::OutOfExtent { x_nm: x1, y_nm: y1 });
    }
    let jp = state.config().junction;
    let (zm, bm) = (state.config().z_mod, state.config().bias_mod);
    let r = jp.gain_v_per_na;
    state.set_bias(cfg.bias_v)?;
    state.set_setpoint((r * cfg.setpoint).ln());

    let (px, py) = (
        cfg.width_nm / cfg.pixels_x as f64,
        cfg.height_nm / cfg.pixels_y as f64,
    );
    let line_y = |iy: usize| y0 + (iy as f64 + 0.5) * py;
    let mut acc = vec![Acc::default(); cfg.pixels_x * cfg.pixels_y];
    let mut raw = Vec::new();
    let t_start = state.time_s();
    let tick_start = state.ticks();
    let didv_scale = 1.0 / (state.preamp_gain_at_bias() * bm.amplitude_v);
    // current smoothed like the gradient so their ratio has no edge spikes
    let mut i_lp = BasebandFilter::new(&state.config().lia)?;
    i_lp.prime(state.last().ln_ri.exp() / r);

    let mut scan = || -> Result<()> {
        travel(
            state,
            surface,
            (x0, line_y(0)),
            cfg.retrace_speed_nm_s,
            |rec| {
                i_lp.process(rec.ln_ri.exp() / r);
            },
        )?;
        state.run(surface, cfg.settle_s, |rec| {
            i_lp.process(rec.ln_ri.exp() / r);
        })?;
        let n = (cfg.width_nm / cfg.speed_nm_s * fs).round() as usize;
        for iy in 0..cfg.pixels_y {
            let y = line_y(iy);
            if iy > 0 {
                // retrace, stepping to the next line on the way back
                travel(state, surface, (x0, y), cfg.retrace_speed_nm_s, |rec| {
                    i_lp.process(rec.ln_ri.exp() / r);
                })?;
            }
            for k in 0..n {
                let frac = (k as f64 + 0.5) / n as f64;
                state.set_position(x0 + frac * cfg.width_nm, y);
                let rec = state.step(surface)?;
                let ix = ((frac * cfg.pixels_x as f64) as usize).min(cfg.pixels_x - 1);
                let a = &mut acc[iy * cfg.pixels_x + ix];
                let i = rec.ln_ri.exp() / r;
                let i_smooth = i_lp.process(i);
                a.n += 1.0;
                a.z += state.commanded_height(rec.u);
                a.i += i;
                if zm.enabled {
                    a.didz += rec.didz_na_per_nm;
                    a.dlni_dz += rec.didz_na_per_nm / i_smooth;
                }
                if bm.enabled {
                    a.didv += rec.bias_lia_amp_v * didv_scale;
                }
                if cfg.keep_raw {
                    raw.push(rec);
                }
            }
        }
        Ok(())
    };
    let failure = scan().err().map(|e| {
        let (x, y) = state.position();
        ScanFailure {
            x_nm: x,
            y_nm: y,
            time_s: state.time_s(),
            crash: e.is_crash(),
            message: e.to_string(),
        }
    });

    let img = || Image::new(cfg.pixels_x, cfg.pixels_y, (x0, y0), (px, py));
    let fill = |f: &dyn Fn(&Acc) -> f64| {
        let mut im = img();
        for (d, a) in im.data.iter_mut().zip(&acc) {
            *d = if a.n > 0.0 { f(a) / a.n } else { f64::NAN };
        }
        im
    };
    let topography = fill(&|a| a.z);
    let current = fill(&|a| a.i);
    let (didz, lbh) = if zm.enabled {
        let k2 = jp.kappa0 * jp.kappa0;
        (
            Some(fill(&|a| a.didz)),
            Some(fill(&|a| a.dlni_dz)).map(|g| g.map(|v| v * v / k2)),
        )
    } else {
        (None, None)
    };
    let didv = bm.enabled.then(|| fill(&|a| a.didv));
    let conductivity = match (&lbh, &didv) {
        (Some(lbh), Some(didv)) => {
            // anchor the gap at the typical pixel, taken as clean terrace
            let (z_ref, i_ref, phi_ref) = (
                median(&topography.data),
                median(&current.data),
                median(&lbh.data),
            );
            let delta_ref = (cfg.reference_sigma_na_per_v * cfg.bias_v.abs() / i_ref).ln()
                / (jp.kappa0 * phi_ref.sqrt());
            let mut im = img();
            for k in 0..im.data.len() {
                let delta = delta_ref + topography.data[k] - z_ref;
                im.data[k] = didv.data[k] * (jp.kappa0 * lbh.data[k].sqrt() * delta).exp();
            }
            Some(im)
        }
        _ => None,
    };
    let metadata = ScanMetadata {
        config_hash: config_hash(cfg, state),
        mode: cfg.mode,
        setpoint: cfg.setpoint,
        bias_v: cfg.bias_v,
        speed_nm_s: cfg.speed_nm_s,
        dwell_s: cfg.dwell_s(),
        ticks: state.ticks() - tick_start,
        duration_s: state.time_s() - t_start,
    };
    Ok(ScanResult {
        topography,
        current,
        didz,
        lbh,
        didv,
        conductivity,
        metadata,
        failure,
        raw,
    })
}

/// Barrier-height and conductivity images recorded together with topography.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroscopicMaps {
    pub topography: Image,
    pub lbh: Image,
    pub didv: Image,
    pub conductivity: Image,
    pub scan: ScanResult,
}

/// Constant-current scan with the z dither (barrier height) and the bias
/// dither (conductivity) on at once.
pub fn spectroscopic_maps(
    surface: &SurfaceMap,
    state: &mut LoopState,
    cfg: &ScanConfig,
) -> Result<SpectroscopicMaps> {
    if cfg.mode != FeedbackMode::ConstantCurrent {
        return Err(Error::Config(
            "spectroscopic maps are recorded in constant-current mode".into(),
        ));
    }
    let c = state.config();
    if !(c.z_mod.enabled && c.bias_mod.enabled) {
        return Err(Error::Config(
            "spectroscopic maps need both the z and the bias modulation".into(),
        ));
    }
    let scan = raster_scan(surface, state, cfg)?;
    let missing = || Error::Config("modulation images missing".into());
    Ok(SpectroscopicMaps {
        topography: scan.topography.clone(),
        lbh: scan.lbh.clone().ok_or_else(missing)?,
        didv: scan.didv.clone().ok_or_else(missing)?,
        conductivity: scan.conductivity.clone().ok_or_else(missing)?,
        scan,
    })
}
