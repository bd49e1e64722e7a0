use thiserror::Error;

/// Errors produced by the analytic pipeline and the simulator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unstable system: lambda = {lambda} >= mean service rate {mu_hat} (rho = {rho})")]
    Instability { lambda: f64, mu_hat: f64, rho: f64 },

    #[error("no convergence: truncation level {level} reached the cap with tail mass {tail_mass:e}")]
    Convergence { level: usize, tail_mass: f64 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("invalid simulation config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}
