use thiserror::Error;

/// Unified error type for the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("support violation: value {value} outside bounds [{lo}, {hi}]")]
    SupportViolation { value: f64, lo: f64, hi: f64 },

    #[error("profile arity mismatch: {left} vs {right}")]
    ProfileArityMismatch { left: usize, right: usize },

    #[error("theta out of bounds")]
    ThetaOutOfBounds,

    #[error("selection function not differentiable on grid")]
    NotDifferentiable,

    #[error("Assumption 1 violated; use compute_rho_general")]
    NotSupermodular,

    #[error("Proposition 1 hypotheses not met: rho = {rho}")]
    RhoTooLarge { rho: f64 },

    /// `alternative` is reported 1-based, matching the dataset encoding.
    #[error("no selected prices for alternative {alternative} in cell {cell}")]
    EmptyCell { alternative: usize, cell: String },

    #[error("likelihood everywhere degenerate")]
    DegenerateLikelihood,

    #[error("Mills ratio collinear: stage 2 needs an excluded selection covariate")]
    MillsCollinear,

    #[error("grid mismatch: curves must share one evaluation grid")]
    GridMismatch,

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn messages_carry_stable_prefixes() {
        assert_eq!(Error::EmptySample.to_string(), "empty sample");
        assert!(Error::SupportViolation { value: 4.0, lo: 0.0, hi: 3.0 }
            .to_string()
            .starts_with("support violation"));
        assert!(Error::ProfileArityMismatch { left: 2, right: 3 }
            .to_string()
            .starts_with("profile arity mismatch"));
        assert_eq!(Error::ThetaOutOfBounds.to_string(), "theta out of bounds");
        assert_eq!(
            Error::NotSupermodular.to_string(),
            "Assumption 1 violated; use compute_rho_general"
        );
        let cell = Error::EmptyCell { alternative: 2, cell: "x1=0,x2=1".into() };
        assert_eq!(
            cell.to_string(),
            "no selected prices for alternative 2 in cell x1=0,x2=1"
        );
        assert!(Error::MillsCollinear.to_string().starts_with("Mills ratio collinear"));
    }
}
