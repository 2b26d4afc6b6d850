use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use super::{LoopConfig, PiController};
use crate::dsp::{log_amp, LiaChannel, LiaConfig, NotchBank};
use crate::junction::{steady_state_gap, FeedbackMode};
use crate::lti::{PlantChain, Simulator};
use crate::surface::SurfaceMap;
use crate::{Error, Result};

/// Every signal of one loop tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LoopRecord {
    pub t_s: f64,
    pub x_nm: f64,
    pub y_nm: f64,
    /// Controller output (controller units).
    pub u: f64,
    pub z_t_nm: f64,
    pub h_nm: f64,
    pub delta_nm: f64,
    pub i_na: f64,
    pub ln_ri: f64,
    /// First-harmonic amplitude at the z modulation frequency (V).
    pub lia_amp_v: f64,
    pub ln_rdidz: f64,
    /// Gradient estimate `|di/dz|` (nA/nm).
    pub didz_na_per_nm: f64,
    /// First-harmonic amplitude at the bias modulation frequency (V).
    pub bias_lia_amp_v: f64,
    pub error: f64,
    pub mode: FeedbackMode,
    /// Set while a switchover is averaging its new reference.
    pub capture: bool,
}

/// Oscillator phase at tick `n`, computed from the tick count so long runs
/// stay coherent with the lock-in reference.
#[inline]
fn osc(n: u64, f: f64, fs: f64) -> f64 {
    (TAU * (n as f64 * f / fs).fract()).sin()
}

/// Complete mutable state of one closed-loop run.
#[derive(Debug, Clone)]
pub struct LoopState {
    cfg: LoopConfig,
    pi: PiController,
    hv: Simulator,
    piezo: Simulator,
    preamp: Simulator,
    /// Removes both dithers from the current channel.
    current_notch: Option<NotchBank>,
    /// Removes the bias dither ahead of the gradient lock-in.
    z_lia_notch: Option<NotchBank>,
    /// Removes the z dither ahead of the bias lock-in.
    bias_lia_notch: Option<NotchBank>,
    z_lia: LiaChannel,
    bias_lia: LiaChannel,
    mode: FeedbackMode,
    setpoint: f64,
    tick: u64,
    z_base: f64,
    x_nm: f64,
    y_nm: f64,
    measured: f64,
    swing_nm: f64,
    preamp_z: f64,
    preamp_bias: f64,
    hold: bool,
    capture: bool,
    inject_e: f64,
    inject_u: f64,
    last: LoopRecord,
}

fn bank(f0: f64, n: usize, q: f64, fs: f64) -> Result<NotchBank> {
    NotchBank::new(f0, n, q, fs)
}

impl LoopState {
    /// Loop already regulating at `(x, y)`, with the coarse stage placed so
    /// the piezo sits at mid-stroke.
    pub fn new(cfg: LoopConfig, surface: &SurfaceMap, x_nm: f64, y_nm: f64) -> Result<Self> {
        cfg.validate()?;
        let s = surface.sample(x_nm, y_nm)?;
        let gap = steady_state_gap(cfg.setpoint, cfg.mode, s.sigma, s.phi, &cfg.junction)?;
        Self::engaged(cfg, surface, x_nm, y_nm, s.h + gap)
    }

    /// Loop regulating at `(x, y)` with the coarse stage at `z_base_nm`. The
    /// integrator is preset to the extension that gives the set-point gap.
    pub fn engaged(
        cfg: LoopConfig,
        surface: &SurfaceMap,
        x_nm: f64,
        y_nm: f64,
        z_base_nm: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let fs = cfg.sample_rate_hz();
        let p = cfg.plant;
        let s = surface.sample(x_nm, y_nm)?;
        let gap = steady_state_gap(cfg.setpoint, cfg.mode, s.sigma, s.phi, &cfg.junction)?;
        let extension = z_base_nm - s.h - gap;
        let nm_per_unit = p.dac_v_per_unit * p.hv_gain * p.piezo_nm_per_v;
        let u0 = extension / nm_per_unit;
        let limit = cfg.controller_limit();
        if u0.abs() > limit {
            return Err(Error::InfeasibleSetpoint(format!(
                "set-point needs {extension:.3} nm of extension, outside the ±{:.3} nm stroke",
                cfg.piezo_range_nm / 2.0
            )));
        }

        let chain = PlantChain::new(&p).discretize(fs)?;
        let mut hv = Simulator::new(&chain.hv)?;
        let mut piezo = Simulator::new(&chain.piezo)?;
        let mut preamp = Simulator::new(&chain.preamp)?;
        let mut pi = PiController::new(cfg.ki, cfg.omega_c, -limit, limit);
        pi.set_output(u0);
        let x0 = piezo.prime(hv.prime(p.dac_v_per_unit * u0)?)?;
        let i0 = cfg.junction.prefactor(s.sigma)
            * (-cfg.junction.decay_rate(s.phi) * (z_base_nm - x0 - s.h)).exp();
        let v0 = preamp.prime(i0)?;

        let (zm, bm) = (cfg.z_mod, cfg.bias_mod);
        let z_bank = |n| bank(zm.freq_hz, n, cfg.notch_q, fs);
        let b_bank = || bank(bm.freq_hz, 1, cfg.notch_q, fs);
        let mut current_notch = match (zm.enabled, bm.enabled) {
            (false, false) => None,
            (true, false) => Some(z_bank(cfg.notch_harmonics)?),
            (false, true) => Some(b_bank()?),
            (true, true) => {
                let mut b = z_bank(cfg.notch_harmonics)?;
                b.extend(b_bank()?);
                Some(b)
            }
        };
        let mut z_lia_notch = if bm.enabled { Some(b_bank()?) } else { None };
        let mut bias_lia_notch = if zm.enabled && bm.enabled {
            Some(z_bank(cfg.notch_harmonics)?)
        } else {
            None
        };
        for b in [&mut current_notch, &mut z_lia_notch, &mut bias_lia_notch]
            .into_iter()
            .flatten()
        {
            b.prime(v0);
        }
        let z_cfg = LiaConfig {
            reference_hz: zm.freq_hz,
            sample_rate_hz: fs,
            ..cfg.lia
        };
        let b_cfg = LiaConfig {
            reference_hz: bm.freq_hz,
            sample_rate_hz: fs,
            ..cfg.lia
        };
        let mut z_lia = LiaChannel::new(z_cfg)?;
        let mut bias_lia = LiaChannel::new(b_cfg)?;
        z_lia.prime_dc(v0);
        bias_lia.prime_dc(v0);

        let wz = TAU * zm.freq_hz;
        let swing_nm = zm.amplitude_v * (chain.hv.response(wz) * chain.piezo.response(wz)).norm();
        let preamp_z = chain.preamp.response(wz).norm();
        let preamp_bias = chain.preamp.response(TAU * bm.freq_hz).norm();

        let mut state = Self {
            mode: cfg.mode,
            setpoint: cfg.setpoint,
            cfg,
            pi,
            hv,
            piezo,
            preamp,
            current_notch,
            z_lia_notch,
            bias_lia_notch,
            z_lia,
            bias_lia,
            tick: 0,
            z_base: z_base_nm,
            x_nm,
            y_nm,
            measured: 0.0,
            swing_nm,
            preamp_z,
            preamp_bias,
            hold: false,
            capture: false,
            inject_e: 0.0,
            inject_u: 0.0,
            last: LoopRecord::default(),
        };
        state.measured = state.setpoint;
        state.warm_up(surface)?;
        Ok(state)
    }

    /// Runs with the controller frozen until the dither filters and lock-ins
    /// have settled.
    fn warm_up(&mut self, surface: &SurfaceMap) -> Result<()> {
        let (zm, bm) = (self.cfg.z_mod, self.cfg.bias_mod);
        if !zm.enabled && !bm.enabled {
            self.measured = self.regulated(&self.peek(surface)?);
            return Ok(());
        }
        let fs = self.cfg.sample_rate_hz();
        let mut secs = self.z_lia.config().sync_window_s() + 10.0 * self.cfg.lia.time_constant();
        for f in [zm, bm].iter().filter(|m| m.enabled).map(|m| m.freq_hz) {
            secs = secs.max(5.0 * self.cfg.notch_q / (std::f64::consts::PI * f));
        }
        self.hold = true;
        for _ in 0..(secs * fs).ceil() as u64 {
            self.step(surface)?;
        }
        self.hold = false;
        self.measured = self.regulated(&self.last);
        Ok(())
    }

    /// Junction record at the current position without advancing time.
    fn peek(&self, surface: &SurfaceMap) -> Result<LoopRecord> {
        let mut probe = self.clone();
        probe.hold = true;
        probe.step(surface)
    }

    fn regulated(&self, r: &LoopRecord) -> f64 {
        match self.mode {
            FeedbackMode::ConstantCurrent => r.ln_ri,
            FeedbackMode::ConstantDidz => r.ln_rdidz,
        }
    }

    /// Advances the loop by one sample.
    pub fn step(&mut self, surface: &SurfaceMap) -> Result<LoopRecord> {
        let fs = self.cfg.sample_rate_hz();
        let dt = 1.0 / fs;
        let t = self.tick as f64 * dt;
        let (zm, bm) = (self.cfg.z_mod, self.cfg.bias_mod);
        let p = &self.cfg.plant;
        let jp = &self.cfg.junction;

        let error = self.setpoint + self.inject_e - self.measured;
        let u = if self.hold {
            self.pi.hold_output()
        } else {
            self.pi.step(error, dt)
        };
        let mut volts = p.dac_v_per_unit * (u + self.inject_u);
        if zm.enabled {
            volts += zm.amplitude_v * osc(self.tick, zm.freq_hz, fs);
        }
        let extension = self.piezo.step(self.hv.step(volts));
        let z_t = self.z_base - extension;

        let site = surface.sample(self.x_nm, self.y_nm)?;
        let delta = z_t - site.h;
        let mut rec = LoopRecord {
            t_s: t,
            x_nm: self.x_nm,
            y_nm: self.y_nm,
            u,
            z_t_nm: z_t,
            h_nm: site.h,
            delta_nm: delta,
            error,
            mode: self.mode,
            capture: self.capture,
            ..LoopRecord::default()
        };
        if delta < 0.0 || !delta.is_finite() {
            self.last = rec;
            return Err(Error::TipCrash {
                gap_nm: delta,
                time_s: t,
            });
        }
        let mut bias = jp.bias_v;
        if bm.enabled {
            bias += bm.amplitude_v * osc(self.tick, bm.freq_hz, fs);
        }
        let i =
            jp.bias_model.prefactor(site.sigma, bias) * (-jp.decay_rate(site.phi) * delta).exp();
        let v = self.preamp.step(i);
        let floor = jp.gain_v_per_na * jp.min_current_na;

        let v_current = self.current_notch.as_mut().map_or(v, |n| n.process(v));
        rec.i_na = i;
        rec.ln_ri = log_amp(v_current, floor);
        if zm.enabled {
            let x = self.z_lia_notch.as_mut().map_or(v, |n| n.process(v));
            let amp = self.z_lia.step(x).amplitude;
            let didz = amp / (self.preamp_z * self.swing_nm);
            rec.lia_amp_v = amp;
            rec.didz_na_per_nm = didz;
            rec.ln_rdidz = log_amp(jp.gain_v_per_na * didz, floor);
        } else {
            rec.ln_rdidz = log_amp(0.0, floor);
        }
        if bm.enabled {
            let x = self.bias_lia_notch.as_mut().map_or(v, |n| n.process(v));
            rec.bias_lia_amp_v = self.bias_lia.step(x).amplitude;
        }
        self.measured = self.regulated(&rec);
        self.tick += 1;
        self.last = rec;
        Ok(rec)
    }

    /// Runs for `duration_s`, handing every record to `sink`.
    pub fn run<F: FnMut(&LoopRecord)>(
        &mut self,
        surface: &SurfaceMap,
        duration_s: f64,
        mut sink: F,
    ) -> Result<()> {
        let n = (duration_s * self.cfg.sample_rate_hz()).round() as u64;
        for _ in 0..n {
            let r = self.step(surface)?;
            sink(&r);
        }
        Ok(())
    }

    pub fn run_collect(
        &mut self,
        surface: &SurfaceMap,
        duration_s: f64,
    ) -> Result<Vec<LoopRecord>> {
        let mut out = Vec::with_capacity((duration_s * self.cfg.sample_rate_hz()) as usize + 1);
        self.run(surface, duration_s, |r| out.push(*r))?;
        Ok(out)
    }

    pub fn config(&self) -> &LoopConfig {
        &self.cfg
    }

    pub fn controller(&self) -> &PiController {
        &self.pi
    }

    pub fn mode(&self) -> FeedbackMode {
        self.mode
    }

    pub fn setpoint(&self) -> f64 {
        self.setpoint
    }

    pub fn set_setpoint(&mut self, setpoint: f64) {
        self.setpoint = setpoint;
        self.pi.forget_error();
    }

    /// Swaps the regulated signal without touching the integrator.
    pub(crate) fn install_mode(&mut self, mode: FeedbackMode, setpoint: f64) {
        self.mode = mode;
        self.setpoint = setpoint;
        self.measured = self.regulated(&self.last);
        self.pi.forget_error();
    }

    /// Exogenous signals added at the set-point (`r_e`) and at the
    /// controller output (`r_u`) on the next tick.
    pub fn set_injection(&mut self, r_e: f64, r_u: f64) {
        self.inject_e = r_e;
        self.inject_u = r_u;
    }

    /// Regulated signal the controller will see on the next tick.
    pub fn measured(&self) -> f64 {
        self.measured
    }

    pub(crate) fn set_capture(&mut self, on: bool) {
        self.capture = on;
    }

    /// Changes the DC sample bias; the loop re-regulates from there.
    pub fn set_bias(&mut self, bias_v: f64) -> Result<()> {
        if bias_v == 0.0 || !bias_v.is_finite() {
            return Err(Error::Config(format!(
                "bias must be finite and non-zero, got {bias_v}"
            )));
        }
        self.cfg.junction.bias_v = bias_v;
        Ok(())
    }

    /// Static tip displacement per controller unit (nm).
    pub fn nm_per_unit(&self) -> f64 {
        let p = &self.cfg.plant;
        p.dac_v_per_unit * p.hv_gain * p.piezo_nm_per_v
    }

    /// Tip height implied by the controller output alone (nm).
    pub fn commanded_height(&self, u: f64) -> f64 {
        self.z_base - self.nm_per_unit() * u
    }

    pub fn set_position(&mut self, x_nm: f64, y_nm: f64) {
        self.x_nm = x_nm;
        self.y_nm = y_nm;
    }

    pub fn position(&self) -> (f64, f64) {
        (self.x_nm, self.y_nm)
    }

    pub fn time_s(&self) -> f64 {
        self.tick as f64 / self.cfg.sample_rate_hz()
    }

    pub fn ticks(&self) -> u64 {
        self.tick
    }

    pub fn last(&self) -> &LoopRecord {
        &self.last
    }

    pub fn z_base(&self) -> f64 {
        self.z_base
    }

    /// Peak tip displacement produced by the z dither (nm).
    pub fn swing_nm(&self) -> f64 {
        self.swing_nm
    }

    /// `|G_A(jω_b)|`, preamp gain at the bias dither frequency (V/nA).
    pub fn preamp_gain_at_bias(&self) -> f64 {
        self.preamp_bias
    }

    pub fn preamp_gain_at_z(&self) -> f64 {
        self.preamp_z
    }
}
