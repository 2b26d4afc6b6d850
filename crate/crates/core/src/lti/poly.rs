//! Real polynomials stored in descending powers.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Product of `(x − r)` over `roots`, times `k`. Conjugate pairs collapse to
/// real coefficients; any imaginary residue is dropped.
pub fn from_roots(k: f64, roots: &[Complex64]) -> Vec<f64> {
    let mut c = vec![Complex64::new(k, 0.0)];
    for &r in roots {
        let mut next = vec![Complex64::new(0.0, 0.0); c.len() + 1];
        for (i, &ci) in c.iter().enumerate() {
            next[i] += ci;
            next[i + 1] -= ci * r;
        }
        c = next;
    }
    c.into_iter().map(|v| v.re).collect()
}

pub fn eval(c: &[f64], x: Complex64) -> Complex64 {
    c.iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &v| acc * x + v)
}

/// Drops leading coefficients that are exactly zero.
pub fn trim(c: &[f64]) -> &[f64] {
    let first = c.iter().position(|&v| v != 0.0).unwrap_or(c.len());
    &c[first..]
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    let mut out = vec![0.0; n];
    for (i, &v) in a.iter().enumerate() {
        out[n - a.len() + i] += v;
    }
    for (i, &v) in b.iter().enumerate() {
        out[n - b.len() + i] += v;
    }
    out
}

/// Roots via the eigenvalues of the companion matrix. The variable is first
/// rescaled so the coefficients are balanced, which keeps high-order
/// continuous polynomials (coefficients spanning 10⁵⁰) well conditioned.
pub fn roots(c: &[f64]) -> Vec<Complex64> {
    let c = trim(c);
    if c.len() <= 1 {
        return Vec::new();
    }
    // strip roots at the origin
    let zeros_at_origin = c.iter().rev().take_while(|&&v| v == 0.0).count();
    let c = &c[..c.len() - zeros_at_origin];
    let n = c.len() - 1;
    let mut out = vec![Complex64::new(0.0, 0.0); zeros_at_origin];
    if n == 0 {
        return out;
    }
    let scale = (c[n] / c[0]).abs().powf(1.0 / n as f64);
    let scale = if scale.is_finite() && scale > 0.0 {
        scale
    } else {
        1.0
    };
    // p(scale·x) / (c0·scaleⁿ), monic in x
    let monic: Vec<f64> = (0..=n)
        .map(|i| c[i] / c[0] * scale.powi(-(i as i32)))
        .collect();
    let mut m = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = -monic[j + 1];
    }
    for i in 1..n {
        m[(i, i - 1)] = 1.0;
    }
    out.extend(
        m.complex_eigenvalues()
            .iter()
            .map(|&r| polish(c, r * scale)),
    );
    out
}

/// Two Newton steps on the unscaled polynomial.
fn polish(c: &[f64], mut r: Complex64) -> Complex64 {
    let d: Vec<f64> = {
        let n = c.len() - 1;
        c[..n]
            .iter()
            .enumerate()
            .map(|(i, &v)| v * (n - i) as f64)
            .collect()
    };
    for _ in 0..2 {
        let f = eval(c, r);
        let fp = eval(&d, r);
        if fp.norm() == 0.0 {
            break;
        }
        let next = r - f / fp;
        if !next.is_finite() || eval(c, next).norm() > f.norm() {
            break;
        }
        r = next;
    }
    r
}
