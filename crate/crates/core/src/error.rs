use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("value outside the admissible domain: {0}")]
    Domain(String),

    #[error("gradient undefined at {0:?}")]
    SingularPoint(Vec<f64>),

    #[error("trajectory hit the singular set or struck tangentially at {0:?}")]
    SingularHit(Vec<f64>),

    #[error("boundary march stalled after {0} steps")]
    StalledMarch(u64),

    #[error("trajectory still trapped after {0} collisions")]
    TrappedTrajectory(u64),

    #[error("scattering event resampled more than {0} times")]
    ResampleBudgetExceeded(u32),

    #[error("extrapolation did not converge: {0}")]
    NoConvergence(String),

    #[error("required {required} Monte Carlo samples exceeds the cap of {cap}")]
    BudgetExceeded { required: u64, cap: u64 },

    #[error("path stuck at the domain boundary at step {step}")]
    StuckAtBoundary { step: u64 },

    #[error("matrix is not adapted to the hidden/observable split (off-block norm {0:e})")]
    NotAdapted(f64),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    /// True for the failures the random layer absorbs by redrawing the event.
    pub fn is_resamplable(&self) -> bool {
        matches!(
            self,
            Error::SingularHit(_) | Error::TrappedTrajectory(_) | Error::StalledMarch(_)
        )
    }
}
