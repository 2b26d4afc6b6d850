//! Closed-loop frequency-response identification.
//!
//! Sinusoids are injected at the set-point (`r_e`) or at the controller
//! output (`r_u`) of a running loop. `U` is the controller output and `Y` the
//! measurement the controller sees, so with `S = 1/(1 + KG)`:
//!
//! * `r_e → U = K·S`, `r_e → Y = KG·S`, hence `G = Y_e/U_e`;
//! * `r_u → U = −KG·S`, `r_u → Y = G·S`, hence `K = Y_e/Y_u`.

mod fit;
mod tuning;

use std::f64::consts::TAU;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{LoopState, PiController};
use crate::dsp::LiaConfig;
use crate::junction::FeedbackMode;
use crate::lti::{log_grid, LinearSystem, PlantSpec, Simulator};
use crate::surface::SurfaceMap;
use crate::{Error, Result};

pub use fit::{fit_rational_model, FitOptions, FitResult};
pub use tuning::{
    pi_tuning_region, simulate_linear_loop, TuningCriteria, TuningPoint, TuningRegion, TuningRow,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    Setpoint,
    ControllerOutput,
}

/// A closed loop that accepts exogenous inputs one tick at a time.
pub trait FrfTarget: Clone {
    fn sample_rate_hz(&self) -> f64;
    /// `(ki, ωc)` of the running controller.
    fn controller(&self) -> (f64, f64);
    /// Advances one tick and returns `(U, Y)`.
    fn step(&mut self, r_e: f64, r_u: f64) -> Result<(f64, f64)>;
}

/// Discrete linear loop: bilinear plant, one-sample measurement delay and a
/// trapezoidal PI, all in deviation variables around the set-point.
#[derive(Debug, Clone)]
pub struct LinearLoop {
    model: LinearSystem,
    plant: Simulator,
    pi: PiController,
    sample_rate_hz: f64,
    y_prev: f64,
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl LinearLoop {
    /// `plant` is continuous and excludes the one-sample delay that the
    /// loop adds itself.
    pub fn new(plant: &LinearSystem, ki: f64, omega_c: f64, sample_rate_hz: f64) -> Result<Self> {
        let d = plant.discretize(sample_rate_hz)?;
        Ok(Self {
            plant: Simulator::new(&d)?,
            model: d.series(&LinearSystem::delay_samples(1, sample_rate_hz))?,
            pi: PiController::unbounded(ki, omega_c),
            sample_rate_hz,
            y_prev: 0.0,
            noise: None,
        })
    }

    /// Loop around the small-signal model of `spec`, returned together with
    /// the continuous truth model (which includes the sample delay).
    pub fn from_spec(
        spec: &PlantSpec,
        mode: FeedbackMode,
        decay_rate: f64,
        lia: &LiaConfig,
        ki: f64,
        omega_c: f64,
    ) -> Result<(Self, LinearSystem)> {
        if spec.loop_delay_samples == 0 {
            return Err(Error::Sysid(
                "the loop needs at least one sample of delay".into(),
            ));
        }
        let truth = spec.linear_model(mode, decay_rate, lia)?;
        let inner = PlantSpec {
            loop_delay_samples: spec.loop_delay_samples - 1,
            ..*spec
        };
        let plant = inner.linear_model(mode, decay_rate, lia)?;
        Ok((Self::new(&plant, ki, omega_c, spec.sample_rate_hz)?, truth))
    }

    /// Exact discrete transfer function from `U` to `Y`.
    pub fn plant_model(&self) -> &LinearSystem {
        &self.model
    }

    /// Same plant at rest with a new controller.
    pub fn with_gains(&self, ki: f64, omega_c: f64) -> Self {
        let mut plant = self.plant.clone();
        plant.reset();
        Self {
            plant,
            pi: PiController::unbounded(ki, omega_c),
            y_prev: 0.0,
            ..self.clone()
        }
    }

    /// Adds white Gaussian noise of `std` to the measurement.
    pub fn with_noise(mut self, std: f64, seed: u64) -> Result<Self> {
        let n = Normal::new(0.0, std).map_err(|e| Error::Sysid(e.to_string()))?;
        self.noise = Some((n, ChaCha8Rng::seed_from_u64(seed)));
        Ok(self)
    }
}

impl FrfTarget for LinearLoop {
    fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    fn controller(&self) -> (f64, f64) {
        (self.pi.ki, self.pi.omega_c)
    }

    #[inline]
    fn step(&mut self, r_e: f64, r_u: f64) -> Result<(f64, f64)> {
        let seen = self.y_prev;
        let u = self.pi.step(r_e - seen, 1.0 / self.sample_rate_hz);
        let mut y = self.plant.step(u + r_u);
        if let Some((n, rng)) = &mut self.noise {
            y += n.sample(rng);
        }
        if !y.is_finite() {
            return Err(Error::Sysid("linear loop diverged".into()));
        }
        self.y_prev = y;
        Ok((u, seen))
    }
}

/// The full time-domain loop parked at one point of a surface.
#[derive(Debug, Clone)]
pub struct FullLoop<'a> {
    pub state: LoopState,
    pub surface: &'a SurfaceMap,
}

impl FrfTarget for FullLoop<'_> {
    fn sample_rate_hz(&self) -> f64 {
        self.state.config().sample_rate_hz()
    }

    fn controller(&self) -> (f64, f64) {
        let c = self.state.controller();
        (c.ki, c.omega_c)
    }

    fn step(&mut self, r_e: f64, r_u: f64) -> Result<(f64, f64)> {
        let seen = self.state.measured() - self.state.setpoint();
        self.state.set_injection(r_e, r_u);
        let rec = self.state.step(self.surface)?;
        Ok((rec.u, seen))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrfConfig {
    pub freqs_hz: Vec<f64>,
    /// ln units at the set-point, controller units at the output.
    pub amplitude: f64,
    /// Periods per averaging block.
    pub cycles: usize,
    pub averages: usize,
    /// Transient discarded before the first block (at least two periods).
    pub settle_s: f64,
}

impl FrfConfig {
    /// 5–1500 Hz, log spaced.
    pub fn default_grid(n: usize) -> Vec<f64> {
        log_grid(5.0, 1500.0, n)
    }

    pub fn new(injection: Injection) -> Self {
        let amplitude = match injection {
            Injection::Setpoint => 0.02,
            Injection::ControllerOutput => 1.0,
        };
        Self {
            freqs_hz: Self::default_grid(30),
            amplitude,
            cycles: 8,
            averages: 4,
            settle_s: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrfPoint {
    pub freq_hz: f64,
    /// Response of `U` to the injection.
    pub u: Complex64,
    /// Response of `Y` to the injection.
    pub y: Complex64,
    /// Std of the block estimates of `Y/U`.
    pub ratio_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrfDataset {
    pub injection: Injection,
    pub amplitude: f64,
    pub averages: usize,
    pub cycles: usize,
    pub ki: f64,
    pub omega_c: f64,
    pub points: Vec<FrfPoint>,
    /// Set when the loop failed part-way; `points` holds what was measured.
    pub failure: Option<String>,
}

/// Single-bin DFT over an integer number of periods.
fn correlate(x: &[f64], w: f64) -> Complex64 {
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(k, &v)| Complex64::from_polar(v, -w * k as f64))
        .sum::<Complex64>()
        * (2.0 / n)
}

pub fn run_frf_experiment<T: FrfTarget>(
    target: &T,
    cfg: &FrfConfig,
    injection: Injection,
) -> Result<FrfDataset> {
    if cfg.amplitude == 0.0 || !cfg.amplitude.is_finite() {
        return Err(Error::Sysid("injection amplitude must be non-zero".into()));
    }
    if cfg.cycles == 0 || cfg.averages == 0 {
        return Err(Error::Sysid("cycles and averages must be positive".into()));
    }
    let fs = target.sample_rate_hz();
    let (ki, omega_c) = target.controller();
    let mut ds = FrfDataset {
        injection,
        amplitude: cfg.amplitude,
        averages: cfg.averages,
        cycles: cfg.cycles,
        ki,
        omega_c,
        points: Vec::with_capacity(cfg.freqs_hz.len()),
        failure: None,
    };
    for &f_req in &cfg.freqs_hz {
        if !(f_req > 0.0 && f_req < fs / 2.0) {
            return Err(Error::Sysid(format!(
                "frequency {f_req} Hz outside (0, fs/2)"
            )));
        }
        // snap so each block spans a whole number of samples
        let n = (cfg.cycles as f64 * fs / f_req).round() as usize;
        let f = cfg.cycles as f64 * fs / n as f64;
        let w = TAU * f / fs;
        let settle = ((cfg.settle_s * fs).max(2.0 * fs / f)).ceil() as usize;
        let mut lp = target.clone();
        let mut k = 0usize;
        let mut tick = |lp: &mut T| -> Result<(f64, f64, f64)> {
            let r = cfg.amplitude * (w * k as f64).sin();
            k += 1;
            let (re, ru) = match injection {
                Injection::Setpoint => (r, 0.0),
                Injection::ControllerOutput => (0.0, r),
            };
            let (u, y) = lp.step(re, ru)?;
            Ok((r, u, y))
        };
        let measured: Result<FrfPoint> = (|| {
            for _ in 0..settle {
                tick(&mut lp)?;
            }
            let (mut su, mut sy) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
            let mut ratios = Vec::with_capacity(cfg.averages);
            let (mut rb, mut ub, mut yb) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
            for _ in 0..cfg.averages {
                for i in 0..n {
                    let (r, u, y) = tick(&mut lp)?;
                    rb[i] = r;
                    ub[i] = u;
                    yb[i] = y;
                }
                let rr = correlate(&rb, w);
                let (cu, cy) = (correlate(&ub, w) / rr, correlate(&yb, w) / rr);
                su += cu;
                sy += cy;
                ratios.push(cy / cu);
            }
            let m = cfg.averages as f64;
            let mean_ratio = ratios.iter().sum::<Complex64>() / m;
            let ratio_std = (ratios
                .iter()
                .map(|r| (r - mean_ratio).norm_sqr())
                .sum::<f64>()
                / m)
                .sqrt();
            Ok(FrfPoint {
                freq_hz: f,
                u: su / m,
                y: sy / m,
                ratio_std,
            })
        })();
        match measured {
            Ok(p) => ds.points.push(p),
            Err(e) => {
                ds.failure = Some(format!("at {f:.3} Hz: {e}"));
                break;
            }
        }
    }
    Ok(ds)
}

/// Complex FRF samples of one transfer function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrfEstimate {
    pub freqs_hz: Vec<f64>,
    pub values: Vec<Complex64>,
    /// Frequencies dropped because the divisor vanished.
    pub dropped_hz: Vec<f64>,
    pub averages: usize,
}

impl FrfEstimate {
    pub fn points(&self) -> impl Iterator<Item = (f64, Complex64)> + '_ {
        self.freqs_hz
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }
}

const DIVISOR_FLOOR: f64 = 1e-9;

fn ratio_estimate(
    freqs: &[f64],
    num: &[Complex64],
    den: &[Complex64],
    averages: usize,
) -> FrfEstimate {
    let scale = den.iter().map(|d| d.norm()).fold(0.0, f64::max);
    let mut est = FrfEstimate {
        freqs_hz: vec![],
        values: vec![],
        dropped_hz: vec![],
        averages,
    };
    for ((&f, n), d) in freqs.iter().zip(num).zip(den) {
        if d.norm() <= DIVISOR_FLOOR * scale || !(n / d).is_finite() {
            est.dropped_hz.push(f);
        } else {
            est.freqs_hz.push(f);
            est.values.push(n / d);
        }
    }
    est
}

/// `G = G_reY/G_reU`.
pub fn estimate_plant(ds: &FrfDataset) -> Result<FrfEstimate> {
    if ds.injection != Injection::Setpoint {
        return Err(Error::Sysid(
            "plant estimate needs set-point injection".into(),
        ));
    }
    let f: Vec<f64> = ds.points.iter().map(|p| p.freq_hz).collect();
    let y: Vec<Complex64> = ds.points.iter().map(|p| p.y).collect();
    let u: Vec<Complex64> = ds.points.iter().map(|p| p.u).collect();
    Ok(ratio_estimate(&f, &y, &u, ds.averages))
}

/// `K = G_reY/G_ruY`.
pub fn estimate_controller(ds_e: &FrfDataset, ds_u: &FrfDataset) -> Result<FrfEstimate> {
    if ds_e.injection != Injection::Setpoint || ds_u.injection != Injection::ControllerOutput {
        return Err(Error::Sysid(
            "controller estimate needs one dataset per injection point".into(),
        ));
    }
    if ds_e.ki != ds_u.ki || ds_e.omega_c != ds_u.omega_c {
        return Err(Error::Sysid(format!(
            "controller changed between experiments: ({}, {}) vs ({}, {})",
            ds_e.ki, ds_e.omega_c, ds_u.ki, ds_u.omega_c
        )));
    }
    if ds_e.points.len() != ds_u.points.len()
        || ds_e
            .points
            .iter()
            .zip(&ds_u.points)
            .any(|(a, b)| (a.freq_hz - b.freq_hz).abs() > 1e-9 * a.freq_hz)
    {
        return Err(Error::Sysid(
            "datasets use different frequency grids".into(),
        ));
    }
    let f: Vec<f64> = ds_e.points.iter().map(|p| p.freq_hz).collect();
    let ye: Vec<Complex64> = ds_e.points.iter().map(|p| p.y).collect();
    let yu: Vec<Complex64> = ds_u.points.iter().map(|p| p.y).collect();
    Ok(ratio_estimate(
        &f,
        &ye,
        &yu,
        ds_e.averages.min(ds_u.averages),
    ))
}

/// Magnitude (dB) and phase (deg) differences between an estimate and a
/// model, with phase folded into ±180°.
pub fn compare(est: &FrfEstimate, model: &LinearSystem) -> (f64, f64) {
    est.points().fold((0.0f64, 0.0f64), |(db, deg), (f, v)| {
        let m = model.response(TAU * f);
        let r = v / m;
        (
            db.max((20.0 * r.norm().log10()).abs()),
            deg.max(r.arg().to_degrees().abs()),
        )
    })
}
