use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("tridiagonal breakdown: pivot {pivot:e} at slot {slot}")]
    Breakdown { slot: usize, pivot: f64 },

    #[error("Newton iteration did not converge after {iterations} steps (best residual {best_residual:e})")]
    NonConvergence {
        iterations: usize,
        best_residual: f64,
        best_x: (f64, f64),
    },

    #[error("transmission and phase are undefined at zero drive")]
    ZeroDrive,

    #[error("phase slope at resonance vanishes; linewidth is unbounded")]
    ZeroSlope,

    #[error("input range [{lo}, {hi}] intersects the bistable window [{window_lo}, {window_hi}]")]
    BistableRange {
        lo: f64,
        hi: f64,
        window_lo: f64,
        window_hi: f64,
    },

    #[error("bracket does not straddle the bistability threshold (bistable at both ends: {0})")]
    BracketInvalid(bool),

    #[error("time-domain integration diverged at t = {t}")]
    StepUnstable { t: f64 },

    #[error(
        "time-domain transient has not settled: relative drift {drift:e} over the last window"
    )]
    TransientNotSettled { drift: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
