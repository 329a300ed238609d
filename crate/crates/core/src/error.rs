use thiserror::Error;

use crate::domain::DesignPoint;
use crate::evaluators::EvalError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("construction error: {0}")]
    Construction(String),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("a bit error rate of 0 requires an infinite eye height")]
    InfiniteEyeHeight,

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("evaluator failed on design {point}: {source}")]
    Evaluator {
        point: DesignPoint,
        #[source]
        source: EvalError,
    },

    /// A configuration value is missing or out of range.
    #[error("invalid config `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}
