use num_complex::Complex64;

use super::LinearSystem;
use crate::{Error, Result};

/// One section `z^{-shift}·Π(1 − zᵢz⁻¹)/Π(1 − pᵢz⁻¹)` in transposed direct
/// form II.
#[derive(Debug, Clone)]
struct Section {
    b: [f64; 3],
    a: [f64; 2],
    s: [f64; 2],
}

impl Section {
    fn new(zeros: &[Complex64], poles: &[Complex64]) -> Self {
        let expand = |r: &[Complex64]| -> [f64; 3] {
            match r {
                [] => [1.0, 0.0, 0.0],
                [x] => [1.0, -x.re, 0.0],
                [x, y] => [1.0, -(x + y).re, (x * y).re],
                _ => unreachable!("sections hold at most two roots"),
            }
        };
        let den = expand(poles);
        let num = expand(zeros);
        let shift = poles.len().saturating_sub(zeros.len());
        let mut b = [0.0; 3];
        for i in 0..3 - shift {
            b[i + shift] = num[i];
        }
        Self {
            b,
            a: [den[1], den[2]],
            s: [0.0; 2],
        }
    }

    #[inline]
    fn process(&mut self, x: f64) -> f64 {
        let y = self.b[0] * x + self.s[0];
        self.s[0] = self.b[1] * x - self.a[0] * y + self.s[1];
        self.s[1] = self.b[2] * x - self.a[1] * y;
        y
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    fn prime(&mut self, x: f64) -> f64 {
        let y = self.dc_gain() * x;
        self.s[1] = self.b[2] * x - self.a[1] * y;
        self.s[0] = self.b[1] * x - self.a[0] * y + self.s[1];
        y
    }
}

/// Splits roots into conjugate pairs and leftover reals.
fn group(roots: &[Complex64]) -> (Vec<[Complex64; 2]>, Vec<Complex64>) {
    let tol = |r: &Complex64| 1e-9 * r.norm().max(1.0);
    let mut reals = Vec::new();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    for &r in roots {
        if r.im.abs() <= tol(&r) {
            reals.push(Complex64::new(r.re, 0.0));
        } else if r.im > 0.0 {
            upper.push(r);
        } else {
            lower.push(r);
        }
    }
    let mut pairs = Vec::new();
    for u in upper {
        let idx = lower
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - u.conj()).norm().total_cmp(&(b.1 - u.conj()).norm()))
            .map(|(i, _)| i);
        match idx {
            Some(i) => {
                let l = lower.swap_remove(i);
                // average so the pair is an exact conjugate
                let m = Complex64::new((u.re + l.re) / 2.0, (u.im - l.im) / 2.0);
                pairs.push([m, m.conj()]);
            }
            None => reals.push(Complex64::new(u.re, 0.0)),
        }
    }
    reals.extend(lower.into_iter().map(|l| Complex64::new(l.re, 0.0)));
    (pairs, reals)
}

/// Per-sample runner for a discrete [`LinearSystem`].
#[derive(Debug, Clone)]
pub struct Simulator {
    gain: f64,
    sections: Vec<Section>,
}

impl Simulator {
    pub fn new(sys: &LinearSystem) -> Result<Self> {
        if !sys.is_discrete() {
            return Err(Error::Domain(
                "simulation needs a discretized system".into(),
            ));
        }
        if sys.zeros.len() > sys.poles.len() {
            return Err(Error::Improper {
                num: sys.zeros.len(),
                den: sys.poles.len(),
            });
        }
        let (pole_pairs, mut pole_reals) = group(&sys.poles);
        let (zero_pairs, mut zero_reals) = group(&sys.zeros);
        let mut pole_groups: Vec<Vec<Complex64>> =
            pole_pairs.into_iter().map(|p| p.to_vec()).collect();
        while pole_reals.len() >= 2 {
            let b = pole_reals.pop().unwrap();
            let a = pole_reals.pop().unwrap();
            pole_groups.push(vec![a, b]);
        }
        if let Some(p) = pole_reals.pop() {
            pole_groups.push(vec![p]);
        }
        let mut zero_groups: Vec<Vec<Complex64>> = vec![Vec::new(); pole_groups.len()];
        // conjugate zero pairs need a two-pole section
        let mut slots = (0..pole_groups.len()).filter(|&i| pole_groups[i].len() == 2);
        for pair in zero_pairs {
            let i = slots
                .next()
                .expect("proper system always has room for zero pairs");
            zero_groups[i].extend(pair);
        }
        for i in 0..pole_groups.len() {
            while zero_groups[i].len() < pole_groups[i].len() {
                match zero_reals.pop() {
                    Some(z) => zero_groups[i].push(z),
                    None => break,
                }
            }
        }
        debug_assert!(zero_reals.is_empty());
        let sections = pole_groups
            .iter()
            .zip(&zero_groups)
            .map(|(p, z)| Section::new(z, p))
            .collect();
        Ok(Self {
            gain: sys.gain,
            sections,
        })
    }

    #[inline]
    pub fn step(&mut self, x: f64) -> f64 {
        self.sections
            .iter_mut()
            .fold(self.gain * x, |acc, s| s.process(acc))
    }

    pub fn run(&mut self, input: &[f64]) -> Vec<f64> {
        input.iter().map(|&x| self.step(x)).collect()
    }

    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.s = [0.0; 2];
        }
    }

    /// Loads the steady state for a constant input `x` and returns the
    /// matching output. Fails if any section integrates.
    pub fn prime(&mut self, x: f64) -> Result<f64> {
        if self.sections.iter().any(|s| !s.dc_gain().is_finite()) {
            return Err(Error::Domain(
                "cannot prime a system with a pole at z = 1".into(),
            ));
        }
        Ok(self
            .sections
            .iter_mut()
            .fold(self.gain * x, |acc, s| s.prime(acc)))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::TAU;

    use rustfft::{num_complex::Complex, FftPlanner};

    use super::*;

    const FS: f64 = 100_000.0;

    #[test]
    fn unit_gain_passthrough() {
        let mut sim =
            Simulator::new(&LinearSystem::static_gain(1.0).discretize(FS).unwrap()).unwrap();
        for x in [0.3, -2.0, 7.5] {
            assert_eq!(sim.step(x), x);
        }
    }

    #[test]
    fn integrator_one_second() {
        let ki = 250.0;
        let d = LinearSystem::integrator(ki).discretize(FS).unwrap();
        let mut sim = Simulator::new(&d).unwrap();
        let mut y = 0.0;
        for _ in 0..FS as usize {
            y = sim.step(1.0);
        }
        assert!((y / ki - 1.0).abs() < 1e-3, "{y}");
    }

    #[test]
    fn piezo_rings_at_resonance() {
        let f0 = 8000.0;
        let d = LinearSystem::resonator(f0, 0.05, 1.0)
            .discretize_prewarped(FS, f0)
            .unwrap();
        let mut sim = Simulator::new(&d).unwrap();
        let n = 1 << 14;
        let y: Vec<f64> = (0..n)
            .map(|k| sim.step(if k == 0 { 1.0 } else { 0.0 }))
            .collect();
        assert!(y[n - 1].abs() < 1e-6 * y.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut buf: Vec<Complex<f64>> = y.iter().map(|&v| Complex::new(v, 0.0)).collect();
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
        let peak = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().total_cmp(&buf[b].norm()))
            .unwrap();
        let f_peak = peak as f64 * FS / n as f64;
        // damped natural frequency sits slightly below f0
        assert!((f_peak / f0 - 1.0).abs() < 0.02, "{f_peak}");
    }

    #[test]
    fn matches_frequency_response() {
        let sys = LinearSystem::resonator(8000.0, 0.05, 2.0)
            .series(&LinearSystem::first_order_lowpass(1100.0, 1.0))
            .unwrap()
            .series(&LinearSystem::pade(3e-5, 2).unwrap())
            .unwrap()
            .discretize(FS)
            .unwrap();
        let f = 1500.0;
        let mut sim = Simulator::new(&sys).unwrap();
        let n = 40_000;
        let y: Vec<f64> = (0..n)
            .map(|k| sim.step((TAU * f * k as f64 / FS).sin()))
            .collect();
        let tail = &y[n / 2..];
        let amp = (2.0 * tail.iter().map(|v| v * v).sum::<f64>() / tail.len() as f64).sqrt();
        let want = sys.response(TAU * f).norm();
        assert!((amp / want - 1.0).abs() < 1e-3, "{amp} vs {want}");
    }

    #[test]
    fn prime_holds_steady_state() {
        let sys = LinearSystem::resonator(8000.0, 0.05, 3.0)
            .series(&LinearSystem::first_order_lowpass(1100.0, 1.0))
            .unwrap()
            .discretize(FS)
            .unwrap();
        let mut sim = Simulator::new(&sys).unwrap();
        let y0 = sim.prime(0.5).unwrap();
        assert!((y0 - 1.5).abs() < 1e-9);
        for _ in 0..100 {
            assert!((sim.step(0.5) - 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn delay_line() {
        let mut sim = Simulator::new(&LinearSystem::delay_samples(3, FS)).unwrap();
        let out = sim.run(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(out, vec![0.0, 0.0, 0.0, 1.0, 2.0]);
    }
}
