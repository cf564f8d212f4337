use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid treatment coding in row {row}, column `{column}`: {value} is not 0 or 1")]
    InvalidTreatmentCoding {
        row: usize,
        column: String,
        value: f64,
    },

    #[error("missing or non-finite value in row {row}, column `{column}`")]
    MissingData { row: usize, column: String },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("model specification error: {0}")]
    SpecError(String),

    #[error("configuration error: {0}")]
    ConfigError(String),

    #[error("effect modifier has zero variance")]
    DegenerateModifier,

    #[error("targeting step is degenerate: {0}")]
    TmleDegenerate(String),

    #[error("input error: {0}")]
    Input(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short name, used for CLI diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidTreatmentCoding { .. } => "InvalidTreatmentCoding",
            Error::MissingData { .. } => "MissingData",
            Error::DegenerateDesign(_) => "DegenerateDesign",
            Error::SpecError(_) => "SpecError",
            Error::ConfigError(_) => "ConfigError",
            Error::DegenerateModifier => "DegenerateModifier",
            Error::TmleDegenerate(_) => "TmleDegenerate",
            Error::Input(_) => "Input",
        }
    }

    /// True for errors caused by the input data or configuration rather than
    /// by a numerical degeneracy of the estimator.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidTreatmentCoding { .. }
                | Error::MissingData { .. }
                | Error::SpecError(_)
                | Error::ConfigError(_)
                | Error::Input(_)
        )
    }
}
