/// `K(s) = ki·(1/s + 1/ωc)` with a trapezoidal integrator and conditional
/// integration while the output is saturated.
#[derive(Debug, Clone, PartialEq)]
pub struct PiController {
    pub ki: f64,
    /// rad/s; `f64::INFINITY` gives a pure integrator.
    pub omega_c: f64,
    pub u_min: f64,
    pub u_max: f64,
    integral: f64,
    last_error: f64,
    saturated: bool,
}

impl PiController {
    pub fn new(ki: f64, omega_c: f64, u_min: f64, u_max: f64) -> Self {
        Self {
            ki,
            omega_c,
            u_min,
            u_max,
            integral: 0.0,
            last_error: 0.0,
            saturated: false,
        }
    }

    pub fn unbounded(ki: f64, omega_c: f64) -> Self {
        Self::new(ki, omega_c, f64::NEG_INFINITY, f64::INFINITY)
    }

    /// `∫e dt` accumulated so far.
    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// Sets the integrator so that a zero error produces output `u`.
    pub fn set_output(&mut self, u: f64) {
        self.integral = u / self.ki;
        self.last_error = 0.0;
    }

    /// Drops the stored error so the next trapezoid does not mix two error
    /// sources, as after a change of set-point.
    pub fn forget_error(&mut self) {
        self.last_error = 0.0;
    }

    pub fn is_saturated(&self) -> bool {
        self.saturated
    }

    /// Output for zero error: `ki·∫e dt`.
    pub fn hold_output(&self) -> f64 {
        (self.ki * self.integral).clamp(self.u_min, self.u_max)
    }

    #[inline]
    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        let candidate = self.integral + 0.5 * (error + self.last_error) * dt;
        self.last_error = error;
        let prop = if self.omega_c.is_finite() {
            error / self.omega_c
        } else {
            0.0
        };
        let u = self.ki * (candidate + prop);
        // integrate only when unsaturated or when the error unwinds the limit
        let drive = self.ki * error;
        if u > self.u_max {
            self.saturated = true;
            if drive < 0.0 {
                self.integral = candidate;
            }
            self.u_max
        } else if u < self.u_min {
            self.saturated = true;
            if drive > 0.0 {
                self.integral = candidate;
            }
            self.u_min
        } else {
            self.saturated = false;
            self.integral = candidate;
            u
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DT: f64 = 1e-5;

    #[test]
    fn zero_error_keeps_integrator_value() {
        let mut pi = PiController::unbounded(3.0, 10.0);
        pi.set_output(1.5);
        for _ in 0..1000 {
            assert!((pi.step(0.0, DT) - 1.5).abs() < 1e-15);
        }
    }

    #[test]
    fn pure_integrator_one_second() {
        let mut pi = PiController::unbounded(1.0, f64::INFINITY);
        let mut u = 0.0;
        for _ in 0..100_000 {
            u = pi.step(1.0, DT);
        }
        assert!((u - 1.0).abs() < 1e-4, "{u}");
    }

    #[test]
    fn high_frequency_gain() {
        let mut pi = PiController::unbounded(1.625e4, 1e4);
        // first sample of a step: half-sample of integral plus e/ωc
        let u = pi.step(1.0, DT);
        assert!((u - 1.625e4 * (0.5 * DT + 1e-4)).abs() < 1e-9);
        assert!((1.625e4_f64 / 1e4 - 1.625).abs() < 1e-15);
    }

    #[test]
    fn anti_windup_holds_integrator() {
        let mut pi = PiController::new(100.0, f64::INFINITY, -1.0, 1.0);
        for _ in 0..100_000 {
            assert!(pi.step(1.0, DT) <= 1.0);
        }
        assert!(pi.is_saturated());
        assert!(pi.integral() * 100.0 <= 1.0 + 1e-9);
        // recovers immediately once the error reverses
        let u = pi.step(-1.0, DT);
        assert!(u < 1.0);
    }
}
