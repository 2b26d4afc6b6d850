//! Physics-in-the-loop simulator for the z-axis control system of a scanning
//! tunneling microscope.
//!
//! Two feedback modes are modelled side by side: the conventional loop that
//! holds `ln(R·|i|)` constant, and the gradient loop that superimposes a small
//! sinusoidal dither on the controller output, demodulates the first harmonic
//! of the tunneling current with a lock-in amplifier, and holds
//! `ln(R·|di/dz|)` constant.
//!
//! Module map:
//!
//! * [`junction`] – tunneling current, its log form and z-gradient.
//! * [`surface`] – synthetic Si(100)-2×1:H lattice with dangling bonds.
//! * [`dsp`] – biquads, notch banks, the lock-in amplifier and log amp.
//! * [`lti`] – zero/pole/gain systems, bilinear discretization, margins.
//! * [`control`] – PI controller, closed loop, approach and switchover.
//! * [`sysid`] – closed-loop FRF identification, rational fitting, tuning.
//! * [`imaging`] – raster scans, spectroscopic maps, lithography.
//! * [`io`] – CSV, PGM and model-file persistence.

pub mod control;
pub mod dsp;
pub mod error;
pub mod imaging;
pub mod io;
pub mod junction;
pub mod lti;
pub mod surface;
pub mod sysid;

pub use error::{Error, Result};

/// Loop sample rate of the simulated DSP (Hz).
pub const SAMPLE_RATE_HZ: f64 = 100_000.0;
