use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },

    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },

    #[error("pow_int: negative exponent {0}")]
    NegativeExponent(i64),

    #[error("backward: root must be a 1x1 tensor, got {0:?}")]
    NotScalar((usize, usize)),

    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: String },

    #[error("missing gradient for parameter `{0}`")]
    MissingGradient(String),

    #[error("ill-conditioned conversion (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("{path}: line {line}, column {column}: {msg}")]
    Parse {
        path: String,
        line: u64,
        column: usize,
        msg: String,
    },

    #[error("training diverged at step {step}: {diagnostic}")]
    Diverged { step: usize, diagnostic: String },

    #[error("schema: {0}")]
    Schema(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Invalid {
            op,
            msg: msg.into(),
        }
    }
}
