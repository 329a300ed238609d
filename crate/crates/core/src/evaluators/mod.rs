//! Evaluation backends: anything that turns a design point into measurements.

mod calibrate;
mod external;
mod eye;
mod synthetic;

use thiserror::Error;

use crate::domain::{DesignPoint, DesignSpace, Measurement};

pub use calibrate::{calibrate, calibrate_samples, Calibration};
pub use external::{ExternalEvaluator, ExternalEvaluatorSpec, Request, Response, PROTOCOL_VERSION};
pub use eye::required_eye_height;
pub use synthetic::{name_seed, Family, MetricDef, MetricTemplate, SyntheticBenchmark, Term, OPAMP_V1};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("evaluator timed out after {0} ms")]
    Timeout(u64),
    #[error("evaluator process exited: {0}")]
    Exited(String),
    #[error("could not launch evaluator: {0}")]
    Launch(#[source] std::io::Error),
    #[error("malformed evaluator response: {0}")]
    Malformed(String),
    #[error("evaluator response violates the schema: {0}")]
    Schema(String),
    #[error("evaluator reported failure: {0}")]
    Remote(String),
    #[error("{0}")]
    Invalid(String),
}

impl EvalError {
    /// Failures worth retrying with the same request.
    pub fn is_transient(&self) -> bool {
        matches!(self, EvalError::Timeout(_) | EvalError::Exited(_) | EvalError::Malformed(_))
    }
}

/// The expensive measurement step the optimizer is trying to call sparingly.
pub trait Evaluator {
    fn evaluate(&mut self, point: &DesignPoint, space: &DesignSpace) -> Result<Measurement, EvalError>;

    /// Evaluates several points. Results come back in input order.
    fn evaluate_batch(&mut self, points: &[DesignPoint], space: &DesignSpace) -> Vec<Result<Measurement, EvalError>> {
        points.iter().map(|p| self.evaluate(p, space)).collect()
    }

    fn describe(&self) -> String;
}

impl<E: Evaluator + ?Sized> Evaluator for Box<E> {
    fn evaluate(&mut self, point: &DesignPoint, space: &DesignSpace) -> Result<Measurement, EvalError> {
        (**self).evaluate(point, space)
    }

    fn evaluate_batch(&mut self, points: &[DesignPoint], space: &DesignSpace) -> Vec<Result<Measurement, EvalError>> {
        (**self).evaluate_batch(points, space)
    }

    fn describe(&self) -> String {
        (**self).describe()
    }
}

/// Wraps a closure as an evaluator; handy for tests and small problems.
pub struct FnEvaluator<F>(pub F);

impl<F> Evaluator for FnEvaluator<F>
where
    F: FnMut(&DesignPoint, &DesignSpace) -> Result<Measurement, EvalError>,
{
    fn evaluate(&mut self, point: &DesignPoint, space: &DesignSpace) -> Result<Measurement, EvalError> {
        (self.0)(point, space)
    }

    fn describe(&self) -> String {
        "closure".into()
    }
}
