//! Digital signal chain: biquad sections, notch banks, the quadrature lock-in
//! amplifier and the logarithmic amplifier.

mod biquad;
mod lockin;
mod taylor;

pub use biquad::{design_filter, FilterKind, FilterSection, NotchBank};
pub use lockin::{BasebandFilter, LiaChannel, LiaConfig, LiaOutput};
pub use taylor::{taylor_harmonics, Harmonics};

/// Default floor (V) applied before the logarithm.
pub const LOG_AMP_FLOOR: f64 = 1e-6;

/// `ln(max(|v|, floor))`.
#[inline]
pub fn log_amp(v: f64, floor: f64) -> f64 {
    v.abs().max(floor).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_amp_examples() {
        assert_eq!(log_amp(1.0, LOG_AMP_FLOOR), 0.0);
        assert_eq!(log_amp(-0.5, LOG_AMP_FLOOR), 0.5f64.ln());
        assert_eq!(log_amp(0.0, LOG_AMP_FLOOR), LOG_AMP_FLOOR.ln());
    }
}
