use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    /// The tip-sample gap went negative.
    #[error("tip crash: gap {gap_nm:.4} nm at t = {time_s:.6} s")]
    TipCrash { gap_nm: f64, time_s: f64 },

    #[error("infeasible set-point: {0}")]
    InfeasibleSetpoint(String),

    #[error("invalid surface: {0}")]
    Surface(String),

    #[error("position ({x_nm:.3}, {y_nm:.3}) nm outside extent")]
    OutOfExtent { x_nm: f64, y_nm: f64 },

    #[error("filter design: {0}")]
    FilterDesign(String),

    #[error("improper system: numerator degree {num} exceeds denominator degree {den}")]
    Improper { num: usize, den: usize },

    #[error("approach failure: {0}")]
    ApproachFailure(String),

    #[error("switchover refused: {0}")]
    SwitchoverRefused(String),

    #[error("system identification: {0}")]
    Sysid(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn is_crash(&self) -> bool {
        matches!(self, Error::TipCrash { .. })
    }
}
