use crate::{Error, Result};

/// Predicted harmonic amplitudes of `f(p̄ + A·sin ωt)` from its Taylor series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonics {
    /// `A·f′(p̄)`
    pub first: f64,
    /// `A²/4·f″(p̄)`
    pub second: f64,
    /// `A³/24·f‴(p̄)`
    pub third: f64,
}

/// Leading-order amplitudes at ω, 2ω and 3ω, with derivatives taken by
/// central differences of step `step`.
pub fn taylor_harmonics<F: Fn(f64) -> f64>(
    f: F,
    p_bar: f64,
    amplitude: f64,
    step: f64,
) -> Result<Harmonics> {
    let min_step = 1e-5 * p_bar.abs().max(1.0);
    if !(step >= min_step) {
        return Err(Error::Domain(format!(
            "finite-difference step {step:e} below stable minimum {min_step:e}"
        )));
    }
    let h = step;
    let (fm2, fm1, f0, fp1, fp2) = (
        f(p_bar - 2.0 * h),
        f(p_bar - h),
        f(p_bar),
        f(p_bar + h),
        f(p_bar + 2.0 * h),
    );
    let d1 = (fp1 - fm1) / (2.0 * h);
    let d2 = (fp1 - 2.0 * f0 + fm1) / (h * h);
    let d3 = (fp2 - 2.0 * fp1 + 2.0 * fm1 - fm2) / (2.0 * h * h * h);
    Ok(Harmonics {
        first: amplitude * d1,
        second: amplitude * amplitude / 4.0 * d2,
        third: amplitude.powi(3) / 24.0 * d3,
    })
}
