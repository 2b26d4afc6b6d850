use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scan::travel;
use crate::control::{LoopRecord, LoopState};
use crate::junction::FeedbackMode;
use crate::surface::{LatticeSpec, SurfaceMap};
use crate::{Error, Result};

pub const ELEMENTARY_CHARGE_C: f64 = 1.602_176_634e-19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LithoRegime {
    /// Below 4.5 V: narrow, atomically sharp lines.
    AtomicallyPrecise,
    /// Above 7 V: wide lines with ragged edges.
    FieldEmission,
}

/// Position in lattice units: `x = row·row_pitch`, `y = dimer·dimer_pitch`.
/// Site centres sit at half-integers; integers are cell corners.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticePoint {
    pub row: f64,
    pub dimer: f64,
}

pub fn lattice_point(lat: &LatticeSpec, p: LatticePoint) -> (f64, f64) {
    (p.row * lat.row_pitch_nm, p.dimer * lat.dimer_pitch_nm)
}

/// Square spiral of `loops` turns starting at `center`, with successive
/// parallel legs `pitch_rows` dimer rows apart. The first leg runs along
/// the dimer rows.
pub fn square_spiral(center: LatticePoint, loops: usize, pitch_rows: f64) -> Vec<LatticePoint> {
    let (dr, dd) = (pitch_rows, 2.0 * pitch_rows);
    let dirs = [(0.0, dd), (dr, 0.0), (0.0, -dd), (-dr, 0.0)];
    let mut p = center;
    let mut out = vec![p];
    for leg in 0..4 * loops {
        let len = (leg / 2 + 1) as f64;
        let (a, b) = dirs[leg % 4];
        p = LatticePoint {
            row: p.row + a * len,
            dimer: p.dimer + b * len,
        };
        out.push(p);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LithoPattern {
    /// Tip path through the vertices at the job speed.
    Polyline(Vec<LatticePoint>),
    /// Stationary exposures, each lasting one row pitch of travel time.
    Dots(Vec<LatticePoint>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LithoJob {
    pub pattern: LithoPattern,
    pub bias_v: f64,
    pub mode: FeedbackMode,
    /// nA in current mode, nA/nm in gradient mode.
    pub setpoint: f64,
    pub speed_nm_s: f64,
    pub regime: LithoRegime,
    /// Speed of moves between pattern elements, at imaging conditions.
    pub transit_speed_nm_s: f64,
    /// Regulation time after restoring imaging conditions.
    pub settle_s: f64,
    pub seed: u64,
}

impl LithoJob {
    pub fn new(
        pattern: LithoPattern,
        regime: LithoRegime,
        bias_v: f64,
        setpoint: f64,
        speed_nm_s: f64,
    ) -> Self {
        Self {
            pattern,
            bias_v,
            mode: FeedbackMode::ConstantDidz,
            setpoint,
            speed_nm_s,
            regime,
            transit_speed_nm_s: 100.0,
            settle_s: 0.01,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.regime {
            LithoRegime::AtomicallyPrecise if !(self.bias_v > 0.0 && self.bias_v < 4.5) => {
                return Err(Error::Config(format!(
                    "AP lithography needs 0 < bias < 4.5 V, got {}",
                    self.bias_v
                )))
            }
            LithoRegime::FieldEmission if !(self.bias_v > 7.0 && self.bias_v.is_finite()) => {
                return Err(Error::Config(format!(
                    "FE lithography needs bias > 7 V, got {}",
                    self.bias_v
                )))
            }
            _ => {}
        }
        if !(self.speed_nm_s > 0.0)
            || !(self.transit_speed_nm_s > 0.0 && self.transit_speed_nm_s.is_finite())
        {
            return Err(Error::Config("lithography speeds must be positive".into()));
        }
        if !(self.setpoint > 0.0 && self.setpoint.is_finite()) {
            return Err(Error::Config(
                "lithography set-point must be positive".into(),
            ));
        }
        let empty = match &self.pattern {
            LithoPattern::Polyline(v) => v.len() < 2,
            LithoPattern::Dots(v) => v.is_empty(),
        };
        if empty {
            return Err(Error::Config("lithography pattern is empty".into()));
        }
        Ok(())
    }
}

/// Depassivation statistics: `p = 1 − exp(−η(V)·D·w(d))` for a line dose
/// `D = I/(e·v)` passing at distance `d` from a site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseModel {
    /// `(bias V, yield per electron)` knots, interpolated in log yield.
    pub eta_knots: Vec<(f64, f64)>,
    pub ap_sigma_nm: f64,
    pub fe_sigma_nm: f64,
    /// Kernel support in standard deviations.
    pub cutoff_sigmas: f64,
}

impl Default for DoseModel {
    fn default() -> Self {
        // calibrated on the default lattice: 4 V / 4 nA/nm / 10 nm/s writes
        // two rows along the dimer rows and about three row pitches across
        // them, 3.5 V / 3 nA/nm dots hit both flanking sites with p ≈ 0.96,
        // and 8 V / 4 nA/nm / 1000 nm/s gives ≈ 4.5 nm FE lines
        Self {
            eta_knots: vec![
                (2.0, 1e-10),
                (3.0, 1e-8),
                (3.5, 1.6e-7),
                (4.5, 4.8e-6),
                (7.0, 1.2e-5),
                (10.0, 6e-5),
            ],
            ap_sigma_nm: 0.3,
            fe_sigma_nm: 2.0,
            cutoff_sigmas: 3.0,
        }
    }
}

impl DoseModel {
    /// Yield per electron at `bias_v`; zero for non-positive bias.
    pub fn eta(&self, bias_v: f64) -> f64 {
        let k = &self.eta_knots;
        if bias_v <= 0.0 || k.is_empty() {
            return 0.0;
        }
        if k.len() == 1 || bias_v >= k[k.len() - 1].0 {
            return k[k.len() - 1].1;
        }
        let seg = k.windows(2).position(|w| bias_v < w[1].0).unwrap_or(0);
        let ((v0, e0), (v1, e1)) = (k[seg], k[seg + 1]);
        // below the first knot the first segment is extrapolated
        let t = (bias_v - v0) / (v1 - v0);
        (e0.ln() + t * (e1.ln() - e0.ln())).exp()
    }

    pub fn sigma_nm(&self, regime: LithoRegime) -> f64 {
        match regime {
            LithoRegime::AtomicallyPrecise => self.ap_sigma_nm,
            LithoRegime::FieldEmission => self.fe_sigma_nm,
        }
    }

    pub fn reach_nm(&self, regime: LithoRegime) -> f64 {
        self.cutoff_sigmas * self.sigma_nm(regime)
    }

    /// Electrons per nm of path.
    pub fn line_dose(current_na: f64, speed_nm_s: f64) -> f64 {
        current_na.abs() * 1e-9 / (ELEMENTARY_CHARGE_C * speed_nm_s)
    }

    /// Line kernel `w(d)`: the fraction of a passing line dose landing on a
    /// site of area `site_area_nm2` at distance `d`.
    pub fn line_kernel(&self, d_nm: f64, regime: LithoRegime, site_area_nm2: f64) -> f64 {
        let s = self.sigma_nm(regime);
        if d_nm.abs() > self.cutoff_sigmas * s {
            return 0.0;
        }
        site_area_nm2 / ((TAU).sqrt() * s) * (-d_nm * d_nm / (2.0 * s * s)).exp()
    }

    /// Depassivation probability of a site `d_nm` from a straight pass.
    pub fn line_probability(
        &self,
        bias_v: f64,
        current_na: f64,
        speed_nm_s: f64,
        d_nm: f64,
        regime: LithoRegime,
        site_area_nm2: f64,
    ) -> f64 {
        let e = self.eta(bias_v)
            * Self::line_dose(current_na, speed_nm_s)
            * self.line_kernel(d_nm, regime, site_area_nm2);
        1.0 - (-e).exp()
    }

    /// Exposure of a site at distance `r` from a stationary tip emitting
    /// `electrons`.
    fn point_exposure(
        &self,
        eta: f64,
        electrons: f64,
        r2: f64,
        regime: LithoRegime,
        site_area_nm2: f64,
    ) -> f64 {
        let s = self.sigma_nm(regime);
        eta * electrons * site_area_nm2 * (-r2 / (2.0 * s * s)).exp() / (2.0 * PI * s * s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LithoEvent {
    pub site: usize,
    pub x_nm: f64,
    pub y_nm: f64,
    pub exposure: f64,
    pub probability: f64,
    pub depassivated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LithoReport {
    /// Every exposed site, in site order.
    pub events: Vec<LithoEvent>,
    pub depassivated: Vec<usize>,
    pub exposure_ticks: u64,
    pub mean_current_na: f64,
    pub duration_s: f64,
    /// Set when the job aborted; exposure up to that point was applied.
    pub failure: Option<String>,
}

struct Exposer<'a> {
    dose: &'a DoseModel,
    regime: LithoRegime,
    lat: LatticeSpec,
    rows: usize,
    dimers: usize,
    area: f64,
    dt: f64,
    exposure: Vec<f64>,
    ticks: u64,
    current_sum: f64,
}

impl Exposer<'_> {
    fn add(&mut self, rec: &LoopRecord, bias_v: f64) {
        let eta = self.dose.eta(bias_v);
        if eta == 0.0 {
            return;
        }
        let electrons = rec.i_na.abs() * 1e-9 * self.dt / ELEMENTARY_CHARGE_C;
        self.ticks += 1;
        self.current_sum += rec.i_na.abs();
        let reach = self.dose.reach_nm(self.regime);
        let (rp, dp) = (self.lat.row_pitch_nm, self.lat.dimer_pitch_nm);
        let r_lo = ((rec.x_nm - reach) / rp - 0.5).ceil().max(0.0) as usize;
        let r_hi = (((rec.x_nm + reach) / rp - 0.5).floor().max(-1.0) + 1.0) as usize;
        let d_lo = ((rec.y_nm - reach) / dp - 0.5).ceil().max(0.0) as usize;
        let d_hi = (((rec.y_nm + reach) / dp - 0.5).floor().max(-1.0) + 1.0) as usize;
        for j in d_lo..d_hi.min(self.dimers) {
            let dy = (j as f64 + 0.5) * dp - rec.y_nm;
            for i in r_lo..r_hi.min(self.rows) {
                let dx = (i as f64 + 0.5) * rp - rec.x_nm;
                let r2 = dx * dx + dy * dy;
                if r2 <= reach * reach {
                    self.exposure[j * self.rows + i] +=
                        self.dose
                            .point_exposure(eta, electrons, r2, self.regime, self.area);
                }
            }
        }
    }
}

/// Writes `job` with the running loop, then depassivates each exposed site
/// with probability `1 − exp(−exposure)`, drawn in site order from the job
/// seed. The loop returns to its imaging bias and set-point afterwards.
pub fn run_lithography(
    surface: &mut SurfaceMap,
    state: &mut LoopState,
    job: &LithoJob,
    dose: &DoseModel,
) -> Result<LithoReport> {
    job.validate()?;
    if state.mode() != job.mode {
        return Err(Error::Config(format!(
            "loop regulates {} but the job asks for {}",
            state.mode().as_str(),
            job.mode.as_str()
        )));
    }
    let lat = *surface.lattice();
    let points: Vec<(f64, f64)> = match &job.pattern {
        LithoPattern::Polyline(v) | LithoPattern::Dots(v) => {
            v.iter().map(|&p| lattice_point(&lat, p)).collect()
        }
    };
    if let Some(&(x, y)) = points.iter().find(|&&(x, y)| !surface.contains(x, y)) {
        return Err(Error::OutOfExtent { x_nm: x, y_nm: y });
    }

    let imaging = (state.config().junction.bias_v, state.setpoint());
    let litho_sp = (state.config().junction.gain_v_per_na * job.setpoint).ln();
    let fs = state.config().sample_rate_hz();
    let t0 = state.time_s();
    let mut ex = Exposer {
        dose,
        regime: job.regime,
        lat,
        rows: surface.rows(),
        dimers: surface.dimers_per_row(),
        area: lat.row_pitch_nm * lat.dimer_pitch_nm,
        dt: 1.0 / fs,
        exposure: vec![0.0; surface.site_count()],
        ticks: 0,
        current_sum: 0.0,
    };

    let write = |state: &mut LoopState, ex: &mut Exposer| -> Result<()> {
        let surf: &SurfaceMap = surface;
        let litho_on = |state: &mut LoopState| -> Result<()> {
            state.set_bias(job.bias_v)?;
            state.set_setpoint(litho_sp);
            Ok(())
        };
        let imaging_on = |state: &mut LoopState| -> Result<()> {
            state.set_bias(imaging.0)?;
            state.set_setpoint(imaging.1);
            state.run(surf, job.settle_s, |_| {})
        };
        let v = job.bias_v;
        match &job.pattern {
            LithoPattern::Polyline(_) => {
                travel(state, surf, points[0], job.transit_speed_nm_s, |_| {})?;
                litho_on(state)?;
                for &p in &points[1..] {
                    travel(state, surf, p, job.speed_nm_s, |r| ex.add(r, v))?;
                }
                imaging_on(state)?;
            }
            LithoPattern::Dots(_) => {
                let dwell = lat.row_pitch_nm / job.speed_nm_s;
                for &p in &points {
                    travel(state, surf, p, job.transit_speed_nm_s, |_| {})?;
                    litho_on(state)?;
                    state.run(surf, dwell, |r| ex.add(r, v))?;
                    imaging_on(state)?;
                }
            }
        }
        Ok(())
    };
    let failure = write(state, &mut ex).err().map(|e| e.to_string());
    if failure.is_some() {
        // best effort; the loop may be unusable after a crash
        let _ = state.set_bias(imaging.0);
        state.set_setpoint(imaging.1);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(job.seed);
    let mut events = Vec::new();
    let mut depassivated = Vec::new();
    for (site, &e) in ex.exposure.iter().enumerate() {
        if e <= 0.0 {
            continue;
        }
        let p = 1.0 - (-e).exp();
        let hit = rng.random::<f64>() < p;
        if hit && surface.depassivate_site(site)? == crate::surface::Depassivation::Depassivated {
            depassivated.push(site);
        }
        let (x_nm, y_nm) = surface.site_center(site);
        events.push(LithoEvent {
            site,
            x_nm,
            y_nm,
            exposure: e,
            probability: p,
            depassivated: hit,
        });
    }
    Ok(LithoReport {
        events,
        depassivated,
        exposure_ticks: ex.ticks,
        mean_current_na: if ex.ticks > 0 {
            ex.current_sum / ex.ticks as f64
        } else {
            0.0
        },
        duration_s: state.time_s() - t0,
        failure,
    })
}

/// Width (nm) of the dangling bonds written along the segment `a → b`,
/// counting bare sites within `reach_nm` of the path whose projection falls
/// inside the segment trimmed by `margin_nm`.
///
/// Segments along a lattice axis are measured per lattice slice: the mean
/// number of bare sites across the path times the pitch across it. Other
/// directions use the area-equivalent width, bare-site area per unit length.
pub fn line_width_nm(
    surface: &SurfaceMap,
    a: (f64, f64),
    b: (f64, f64),
    margin_nm: f64,
    reach_nm: f64,
) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len = (dx * dx + dy * dy).sqrt();
    let inner = len - 2.0 * margin_nm;
    if inner <= 0.0 {
        return 0.0;
    }
    let (ux, uy) = (dx / len, dy / len);
    let project = |(x, y): (f64, f64)| {
        let (px, py) = (x - a.0, y - a.1);
        (px * ux + py * uy, (px * uy - py * ux).abs())
    };
    let inside = |along: f64| along >= margin_nm && along <= len - margin_nm;
    let count = surface
        .dangling_bonds()
        .filter(|&idx| {
            let (along, across) = project(surface.site_center(idx));
            inside(along) && across <= reach_nm
        })
        .count();
    let lat = surface.lattice();
    let slices = |n: usize, pitch: f64, start: f64, dir: f64| {
        (0..n)
            .filter(|&k| inside(((k as f64 + 0.5) * pitch - start) * dir))
            .count()
    };
    let (n, across_pitch) = if dy.abs() < 1e-9 * len {
        (slices(surface.rows(), lat.row_pitch_nm, a.0, ux), lat.dimer_pitch_nm)
    } else if dx.abs() < 1e-9 * len {
        (slices(surface.dimers_per_row(), lat.dimer_pitch_nm, a.1, uy), lat.row_pitch_nm)
    } else {
        return count as f64 * lat.row_pitch_nm * lat.dimer_pitch_nm / inner;
    };
    if n == 0 {
        return 0.0;
    }
    count as f64 / n as f64 * across_pitch
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_speed_gives_no_dose() {
        let d = DoseModel::default();
        assert_eq!(DoseModel::line_dose(4.0, f64::INFINITY), 0.0);
        let p = d.line_probability(
            4.0,
            0.2,
            f64::INFINITY,
            0.0,
            LithoRegime::AtomicallyPrecise,
            0.295,
        );
        assert_eq!(p, 0.0);
    }

    #[test]
    fn yield_is_monotone_and_zero_at_negative_bias() {
        let d = DoseModel::default();
        assert_eq!(d.eta(-2.5), 0.0);
        let mut last = 0.0;
        for k in 1..120 {
            let e = d.eta(k as f64 * 0.1);
            assert!(e >= last, "{k}");
            last = e;
        }
        assert!((d.eta(4.5) - 4.8e-6).abs() < 1e-18);
    }

    #[test]
    fn ap_calibration_meets_linewidth_targets() {
        let d = DoseModel::default();
        let lat = LatticeSpec::default();
        let area = lat.row_pitch_nm * lat.dimer_pitch_nm;
        // loop current at 4 nA/nm on a 4.5 eV terrace
        let i = 4.0 / (10.25 * 4.5f64.sqrt());
        let ap =
            |d_nm| d.line_probability(4.0, i, 10.0, d_nm, LithoRegime::AtomicallyPrecise, area);
        // path on a row boundary: the flanking rows sit half a pitch away
        assert!(ap(0.5 * lat.row_pitch_nm) >= 0.9);
        assert!(ap(1.5 * lat.row_pitch_nm) < 0.05);
    }

    #[test]
    fn kernel_is_truncated() {
        let d = DoseModel::default();
        assert!(d.line_kernel(0.89, LithoRegime::AtomicallyPrecise, 0.3) > 0.0);
        assert_eq!(
            d.line_kernel(0.91, LithoRegime::AtomicallyPrecise, 0.3),
            0.0
        );
    }

    #[test]
    fn spiral_has_growing_legs() {
        let s = square_spiral(
            LatticePoint {
                row: 10.0,
                dimer: 20.0,
            },
            3,
            3.0,
        );
        assert_eq!(s.len(), 13);
        assert_eq!(
            s[1],
            LatticePoint {
                row: 10.0,
                dimer: 26.0
            }
        );
        assert_eq!(
            s[2],
            LatticePoint {
                row: 13.0,
                dimer: 26.0
            }
        );
        assert_eq!(
            s[3],
            LatticePoint {
                row: 13.0,
                dimer: 14.0
            }
        );
    }
}
