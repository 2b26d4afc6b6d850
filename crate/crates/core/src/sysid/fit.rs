//! Rational model fitting by iterated pole relocation (vector fitting).

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::lti::{poly, LinearSystem};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub order: usize,
    pub iterations: usize,
    /// Weight each point by `1/|H|` so the error is relative (dB-like).
    pub relative_weighting: bool,
    /// Fit a direct term; off gives a strictly proper model.
    pub direct_term: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            order: 7,
            iterations: 30,
            relative_weighting: true,
            direct_term: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: LinearSystem,
    pub order: usize,
    pub iterations: usize,
    /// Largest magnitude error over the fit points.
    pub max_error_db: f64,
    pub max_error_deg: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
enum Pole {
    Real(f64),
    /// Upper member of a conjugate pair.
    Pair(Complex64),
}

impl Pole {
    fn width(self) -> usize {
        match self {
            Pole::Real(_) => 1,
            Pole::Pair(_) => 2,
        }
    }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Columns of the partial-fraction basis at `s`.
fn basis(poles: &[Pole], s: Complex64, out: &mut Vec<Complex64>) {
    out.clear();
    for &p in poles {
        match p {
            Pole::Real(a) => out.push(1.0 / (s - a)),
            Pole::Pair(a) => {
                let (u, v) = (1.0 / (s - a), 1.0 / (s - a.conj()));
                out.push(u + v);
                out.push(c(0.0, 1.0) * (u - v));
            }
        }
    }
}

fn initial_poles(order: usize, lo: f64, hi: f64) -> Vec<Pole> {
    let pairs = order / 2;
    let mut poles = Vec::with_capacity(pairs + 1);
    if pairs > 0 {
        let betas: Vec<f64> = if pairs == 1 {
            vec![(lo * hi).sqrt()]
        } else {
            (0..pairs)
                .map(|k| lo * (hi / lo).powf(k as f64 / (pairs - 1) as f64))
                .collect()
        };
        poles.extend(betas.into_iter().map(|b| Pole::Pair(c(-b / 100.0, b))));
    }
    if order % 2 == 1 {
        poles.push(Pole::Real(-(lo * hi).sqrt()));
    }
    poles
}

fn classify(eigs: &[Complex64]) -> Vec<Pole> {
    let mut out = Vec::new();
    for &e in eigs {
        // unstable poles are reflected into the left half-plane
        let e = c(-e.re.abs(), e.im);
        let e = if e.re == 0.0 {
            c(-1e-9 * e.norm().max(1e-9), e.im)
        } else {
            e
        };
        if e.im.abs() <= 1e-9 * e.norm() {
            out.push(Pole::Real(e.re));
        } else if e.im > 0.0 {
            out.push(Pole::Pair(e));
        }
    }
    out
}

/// Weighted real least squares; returns the solution and the numerical rank.
fn solve(rows: &[Vec<f64>], rhs: &[f64]) -> (DVector<f64>, usize) {
    let (m, n) = (rows.len(), rows[0].len());
    let mut a = DMatrix::from_fn(m, n, |i, j| rows[i][j]);
    // column scaling for conditioning
    let scale: Vec<f64> = (0..n)
        .map(|j| a.column(j).norm().max(f64::MIN_POSITIVE))
        .collect();
    for (j, s) in scale.iter().enumerate() {
        a.column_mut(j).scale_mut(1.0 / s);
    }
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let tol = smax * f64::EPSILON * m.max(n) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let b = DVector::from_column_slice(rhs);
    let mut x = svd.solve(&b, tol).unwrap_or_else(|_| DVector::zeros(n));
    for (j, s) in scale.iter().enumerate() {
        x[j] /= s;
    }
    (x, rank)
}

struct Problem<'a> {
    s: Vec<Complex64>,
    h: &'a [Complex64],
    w: Vec<f64>,
    direct: bool,
}

impl Problem<'_> {
    /// One pole-relocation step; near-singular directions are truncated.
    fn relocate(&self, poles: &[Pole]) -> Vec<Pole> {
        let n: usize = poles.iter().map(|p| p.width()).sum();
        let cols = 2 * n + usize::from(self.direct);
        let mut rows = Vec::with_capacity(2 * self.s.len());
        let mut rhs = Vec::with_capacity(2 * self.s.len());
        let mut phi = Vec::new();
        for ((&s, &h), &w) in self.s.iter().zip(self.h).zip(&self.w) {
            basis(poles, s, &mut phi);
            let mut row: Vec<Complex64> = phi.iter().map(|&p| p * w).collect();
            if self.direct {
                row.push(c(w, 0.0));
            }
            row.extend(phi.iter().map(|&p| -h * p * w));
            rows.push(row.iter().map(|v| v.re).collect());
            rows.push(row.iter().map(|v| v.im).collect());
            rhs.push((h * w).re);
            rhs.push((h * w).im);
        }
        let (x, _) = solve(&rows, &rhs);
        let sigma = &x.as_slice()[cols - n..];

        // zeros of σ(s) = 1 + Σ c̃·φ: eig(A − b·c̃ᵀ)
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut b = DVector::<f64>::zeros(n);
        let mut k = 0;
        for &p in poles {
            match p {
                Pole::Real(r) => {
                    a[(k, k)] = r;
                    b[k] = 1.0;
                    k += 1;
                }
                Pole::Pair(z) => {
                    a[(k, k)] = z.re;
                    a[(k, k + 1)] = z.im;
                    a[(k + 1, k)] = -z.im;
                    a[(k + 1, k + 1)] = z.re;
                    b[k] = 2.0;
                    k += 2;
                }
            }
        }
        let ct = DVector::from_column_slice(sigma);
        let m = a - &b * ct.transpose();
        let eigs: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
        classify(&eigs)
    }

    /// Residues and direct term for fixed poles, with the rank and column
    /// count of the problem.
    fn residues(&self, poles: &[Pole]) -> (Vec<Complex64>, f64, usize, usize) {
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs = Vec::new();
        let mut phi = Vec::new();
        for ((&s, &h), &w) in self.s.iter().zip(self.h).zip(&self.w) {
            basis(poles, s, &mut phi);
            let mut row: Vec<Complex64> = phi.iter().map(|&p| p * w).collect();
            if self.direct {
                row.push(c(w, 0.0));
            }
            rows.push(row.iter().map(|v| v.re).collect());
            rows.push(row.iter().map(|v| v.im).collect());
            rhs.push((h * w).re);
            rhs.push((h * w).im);
        }
        let cols = rows[0].len();
        let (x, rank) = solve(&rows, &rhs);
        let mut res = Vec::new();
        let mut k = 0;
        for &p in poles {
            match p {
                Pole::Real(_) => {
                    res.push(c(x[k], 0.0));
                    k += 1;
                }
                Pole::Pair(_) => {
                    res.push(c(x[k], x[k + 1]));
                    k += 2;
                }
            }
        }
        let d = if self.direct { x[k] } else { 0.0 };
        (res, d, rank, cols)
    }
}

/// Converts pole/residue form (in the normalized variable) to zeros, poles
/// and gain in `s`.
fn to_zpk(poles: &[Pole], res: &[Complex64], d: f64, w0: f64) -> Result<LinearSystem> {
    let mut all_poles = Vec::new();
    let mut terms: Vec<(Complex64, Complex64)> = Vec::new();
    for (&p, &r) in poles.iter().zip(res) {
        match p {
            Pole::Real(a) => {
                all_poles.push(c(a, 0.0));
                terms.push((c(a, 0.0), r));
            }
            Pole::Pair(a) => {
                all_poles.push(a);
                all_poles.push(a.conj());
                terms.push((a, r));
                terms.push((a.conj(), r.conj()));
            }
        }
    }
    let den = poly::from_roots(1.0, &all_poles);
    let mut num = den.iter().map(|v| v * d).collect::<Vec<f64>>();
    for (i, &(_, r)) in terms.iter().enumerate() {
        let others: Vec<Complex64> = terms
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, t)| t.0)
            .collect();
        // r·Π(s − a_j) expanded with complex arithmetic, real part kept
        let mut cpoly = vec![r];
        for &a in &others {
            let mut next = vec![c(0.0, 0.0); cpoly.len() + 1];
            for (k, &v) in cpoly.iter().enumerate() {
                next[k] += v;
                next[k + 1] -= v * a;
            }
            cpoly = next;
        }
        let re: Vec<f64> = cpoly.iter().map(|v| v.re).collect();
        num = poly::add(&num, &re);
    }
    let peak = num.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let first = num
        .iter()
        .position(|v| v.abs() > 1e-13 * peak)
        .unwrap_or(num.len());
    let num = &num[first..];
    if num.is_empty() {
        return LinearSystem::zpk(vec![], all_poles.iter().map(|p| p * w0).collect(), 0.0);
    }
    let zeros = poly::roots(num);
    let gain = num[0] * w0.powi(all_poles.len() as i32 - zeros.len() as i32);
    LinearSystem::zpk(
        zeros.iter().map(|z| z * w0).collect(),
        all_poles.iter().map(|p| p * w0).collect(),
        gain,
    )
}

fn errors(model: &LinearSystem, freqs_hz: &[f64], h: &[Complex64]) -> (f64, f64) {
    freqs_hz
        .iter()
        .zip(h)
        .fold((0.0f64, 0.0f64), |(db, deg), (&f, &v)| {
            let r = model.response(TAU * f) / v;
            (
                db.max((20.0 * r.norm().log10()).abs()),
                deg.max(r.arg().to_degrees().abs()),
            )
        })
}

/// Fits a stable continuous model of `opts.order` poles to FRF samples.
pub fn fit_rational_model(
    freqs_hz: &[f64],
    values: &[Complex64],
    opts: &FitOptions,
) -> Result<FitResult> {
    if freqs_hz.len() != values.len() {
        return Err(Error::Sysid("frequency and value counts differ".into()));
    }
    if opts.order == 0 {
        return Err(Error::Sysid("model order must be positive".into()));
    }
    if freqs_hz.len() < 2 * (opts.order + 1) {
        return Err(Error::Sysid(format!(
            "{} points cannot determine an order-{} model; need {}",
            freqs_hz.len(),
            opts.order,
            2 * (opts.order + 1)
        )));
    }
    if freqs_hz.iter().any(|f| !(*f > 0.0 && f.is_finite()))
        || values.iter().any(|v| !v.is_finite() || v.norm() == 0.0)
    {
        return Err(Error::Sysid(
            "FRF samples must be finite and non-zero at positive frequencies".into(),
        ));
    }
    let w0 = freqs_hz.iter().fold(0.0f64, |m, &f| m.max(f)) * TAU;
    let lo = freqs_hz.iter().fold(f64::MAX, |m, &f| m.min(f)) * TAU / w0;
    let lo = lo.min(0.5);
    let w = values
        .iter()
        .map(|v| {
            if opts.relative_weighting {
                1.0 / v.norm()
            } else {
                1.0
            }
        })
        .collect();
    let prob = Problem {
        s: freqs_hz.iter().map(|&f| c(0.0, TAU * f / w0)).collect(),
        h: values,
        w,
        direct: opts.direct_term,
    };

    let mut warnings = Vec::new();
    let mut order = opts.order;
    let (poles, res, d, iterations) = loop {
        let mut poles = initial_poles(order, lo, 1.0);
        let mut iterations = 0;
        while iterations < opts.iterations {
            let next = prob.relocate(&poles);
            iterations += 1;
            let moved = pole_shift(&poles, &next);
            poles = next;
            if moved < 1e-12 {
                break;
            }
        }
        let (res, d, rank, cols) = prob.residues(&poles);
        if rank < cols && order > 1 {
            order -= 1;
            warnings.push(format!(
                "rank-deficient fit ({rank} < {cols}); order reduced to {order}"
            ));
            continue;
        }
        break (poles, res, d, iterations);
    };
    let model = to_zpk(&poles, &res, d, w0)?;
    let (max_error_db, max_error_deg) = errors(&model, freqs_hz, values);
    Ok(FitResult {
        model,
        order,
        iterations,
        max_error_db,
        max_error_deg,
        warnings,
    })
}

fn flatten(p: &[Pole]) -> Vec<Complex64> {
    let mut v: Vec<Complex64> = p
        .iter()
        .flat_map(|&p| match p {
            Pole::Real(a) => vec![c(a, 0.0)],
            Pole::Pair(a) => vec![a, a.conj()],
        })
        .collect();
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    v
}

fn pole_shift(a: &[Pole], b: &[Pole]) -> f64 {
    let (a, b) = (flatten(a), flatten(b));
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y).norm() / x.norm().max(1e-12))
        .fold(0.0, f64::max)
}
