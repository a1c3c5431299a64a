use serde::Serialize;
use thiserror::Error;
use volterra_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Validation(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("replay refused: {0}")]
    Refused(String),
    #[error("replay mismatch: {0}")]
    Mismatch(String),
}

impl CliError {
    /// 2 parse, 3 validation, 4 numeric, 1 replay mismatch or refusal, 5 i/o.
    pub fn status(&self) -> i32 {
        match self {
            Self::Parse(_) => 2,
            Self::Validation(_) => 3,
            Self::Numeric(_) => 4,
            Self::Refused(_) | Self::Mismatch(_) => 1,
            Self::Io(_) => 5,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Parse(_) => "parse",
            Self::Validation(_) => "validation",
            Self::Numeric(_) => "numeric",
            Self::Io(_) => "io",
            Self::Refused(_) => "refused",
            Self::Mismatch(_) => "mismatch",
        }
    }

    /// Single-line JSON record for stderr.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            status: i32,
            kind: &'a str,
            message: String,
        }
        let message = match self {
            Self::Validation(m) => m.clone(),
            other => other.to_string(),
        };
        serde_json::to_string(&Record {
            status: self.status(),
            kind: self.kind(),
            message,
        })
        .expect("plain record serializes")
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Parse(m) => Self::Parse(m),
            CoreError::NearlyDependent { .. } | CoreError::Factorization { .. } | CoreError::Degenerate(_) => {
                Self::Numeric(e.to_string())
            }
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
