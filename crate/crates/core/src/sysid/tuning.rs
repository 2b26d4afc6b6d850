//! PI feasibility region over `(ωc, ki)`.

use serde::{Deserialize, Serialize};

use super::{FrfTarget, LinearLoop};
use crate::lti::{stability_metrics_on, LinearSystem, StabilityMetrics};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningCriteria {
    pub min_bandwidth_hz: f64,
    pub max_inf_norm_db: f64,
    /// Frequency grid points per metric evaluation.
    pub grid_points: usize,
}

impl Default for TuningCriteria {
    fn default() -> Self {
        Self {
            min_bandwidth_hz: 35.0,
            max_inf_norm_db: 3.0,
            grid_points: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningPoint {
    pub omega_c: f64,
    pub ki: f64,
    /// Gain margin of the full loop; `ki < GM` of the unit-gain loop
    /// is the same as this exceeding one.
    pub gain_margin: f64,
    pub bandwidth_hz: f64,
    pub inf_norm_db: f64,
    pub closedloop_stable: bool,
    pub feasible: bool,
}

/// Per-`ωc` limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningRow {
    pub omega_c: f64,
    /// Largest stable `ki`: the gain margin of `PI(1, ωc)·G`.
    pub ki_gain_margin: f64,
    /// Largest `ki` keeping the closed-loop peak under the threshold.
    pub ki_peak_max: Option<f64>,
    /// Half of `ki_peak_max`.
    pub recommended_ki: Option<f64>,
    /// Whether the recommended point meets every criterion.
    pub recommended_feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRegion {
    pub criteria: TuningCriteria,
    pub omega_c_grid: Vec<f64>,
    pub ki_grid: Vec<f64>,
    /// Row-major over `(ωc, ki)`.
    pub points: Vec<TuningPoint>,
    pub rows: Vec<TuningRow>,
    /// Feasible recommended `(ωc, ki)` with the widest bandwidth.
    pub recommended: Option<(f64, f64)>,
}

impl TuningRegion {
    pub fn feasible_count(&self) -> usize {
        self.points.iter().filter(|p| p.feasible).count()
    }

    pub fn point(&self, i_wc: usize, i_ki: usize) -> &TuningPoint {
        &self.points[i_wc * self.ki_grid.len() + i_ki]
    }
}

fn band(l: &LinearSystem) -> (f64, f64) {
    let hi = l
        .zeros
        .iter()
        .chain(&l.poles)
        .map(|r| r.norm())
        .fold(0.0f64, f64::max);
    (0.1, (hi * 100.0).max(1e7))
}

fn metrics(g: &LinearSystem, ki: f64, omega_c: f64, n: usize) -> Result<StabilityMetrics> {
    let l = LinearSystem::pi(ki, omega_c).series(g)?;
    let (lo, hi) = band(&l);
    stability_metrics_on(&l, lo, hi, n)
}

fn evaluate(g: &LinearSystem, ki: f64, omega_c: f64, c: &TuningCriteria) -> Result<TuningPoint> {
    let m = metrics(g, ki, omega_c, c.grid_points)?;
    let inf_norm_db = m.closedloop_inf_norm_db();
    let feasible = ki > 0.0
        && m.gain_margin > 1.0
        && m.closedloop_stable
        && m.bandwidth_hz >= c.min_bandwidth_hz
        && inf_norm_db < c.max_inf_norm_db;
    Ok(TuningPoint {
        omega_c,
        ki,
        gain_margin: m.gain_margin,
        bandwidth_hz: m.bandwidth_hz,
        inf_norm_db,
        closedloop_stable: m.closedloop_stable,
        feasible,
    })
}

fn peak_ok(p: &TuningPoint, c: &TuningCriteria) -> bool {
    p.closedloop_stable && p.gain_margin > 1.0 && p.inf_norm_db < c.max_inf_norm_db
}

fn row(g: &LinearSystem, omega_c: f64, c: &TuningCriteria) -> Result<TuningRow> {
    let ki_gain_margin = metrics(g, 1.0, omega_c, c.grid_points)?.gain_margin;
    // bisect in log ki between a clearly passing and a failing point
    let top = if ki_gain_margin.is_finite() {
        ki_gain_margin
    } else {
        1e12
    };
    let mut hi = top;
    let mut lo = top * 1e-6;
    let ki_peak_max = if !peak_ok(&evaluate(g, lo, omega_c, c)?, c) {
        None
    } else if peak_ok(&evaluate(g, hi, omega_c, c)?, c) {
        Some(hi)
    } else {
        for _ in 0..40 {
            let mid = (lo * hi).sqrt();
            if peak_ok(&evaluate(g, mid, omega_c, c)?, c) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(lo)
    };
    let recommended_ki = ki_peak_max.map(|k| k / 2.0);
    let recommended_feasible = match recommended_ki {
        Some(k) => evaluate(g, k, omega_c, c)?.feasible,
        None => false,
    };
    Ok(TuningRow {
        omega_c,
        ki_gain_margin,
        ki_peak_max,
        recommended_ki,
        recommended_feasible,
    })
}

/// Evaluates gain margin, bandwidth and closed-loop peak for `PI(ki, ωc)·G`
/// at every grid point. An empty feasible set is a valid result.
pub fn pi_tuning_region(
    g: &LinearSystem,
    omega_c_grid: &[f64],
    ki_grid: &[f64],
    criteria: &TuningCriteria,
) -> Result<TuningRegion> {
    if g.is_discrete() {
        return Err(Error::Sysid("tuning needs a continuous plant model".into()));
    }
    if !g.is_stable() {
        return Err(Error::Sysid("plant model is unstable".into()));
    }
    if omega_c_grid
        .iter()
        .chain(ki_grid)
        .any(|v| !(*v > 0.0 && v.is_finite()))
    {
        return Err(Error::Sysid("grid values must be positive".into()));
    }
    let mut points = Vec::with_capacity(omega_c_grid.len() * ki_grid.len());
    let mut rows = Vec::with_capacity(omega_c_grid.len());
    for &wc in omega_c_grid {
        for &ki in ki_grid {
            points.push(evaluate(g, ki, wc, criteria)?);
        }
        rows.push(row(g, wc, criteria)?);
    }
    let mut recommended: Option<(f64, f64, f64)> = None;
    for r in rows.iter().filter(|r| r.recommended_feasible) {
        let k = r.recommended_ki.unwrap_or_default();
        let bw = evaluate(g, k, r.omega_c, criteria)?.bandwidth_hz;
        if recommended.is_none_or(|(_, _, b)| bw > b) {
            recommended = Some((r.omega_c, k, bw));
        }
    }
    Ok(TuningRegion {
        criteria: *criteria,
        omega_c_grid: omega_c_grid.to_vec(),
        ki_grid: ki_grid.to_vec(),
        points,
        rows,
        recommended: recommended.map(|(w, k, _)| (w, k)),
    })
}

/// Runs a set-point step through the discrete linear loop for `duration_s`
/// and reports whether the error settled (finite and below a tenth of the
/// step over the last fifth).
pub fn simulate_linear_loop(loop_: &LinearLoop, duration_s: f64) -> bool {
    let mut lp = loop_.clone();
    let n = (duration_s * lp.sample_rate_hz()).round() as usize;
    let step = 0.01;
    let mut tail_max = 0.0f64;
    for k in 0..n {
        let Ok((_, y)) = lp.step(step, 0.0) else {
            return false;
        };
        let e = step - y;
        if !e.is_finite() || e.abs() > 1e6 * step {
            return false;
        }
        if k >= n - n / 5 {
            tail_max = tail_max.max(e.abs());
        }
    }
    tail_max < 0.1 * step
}
