//! Constrained black-box design search where a learned pairwise comparator
//! decides which evolutionary offspring are worth an expensive evaluation.
//!
//! The pieces, bottom-up:
//!
//! - [`domain`]: design grids, specs, measurements and the population buffer.
//! - [`cost`]: normalized per-spec penalties and their weighted sum.
//! - [`critical`]: the growing list of critical specs and the reference design.
//! - [`comparator`]: the mirrored pairwise network, its training and MC-dropout inference.
//! - [`evolution`]: μ+λ offspring generation and elitist truncation.
//! - [`evaluators`]: synthetic benchmarks, the external-process protocol, BER utilities.
//! - [`engine`]: the optimization loop in gated, oracle and ungated modes.

pub mod comparator;
pub mod config;
pub mod cost;
pub mod critical;
pub mod domain;
pub mod engine;
pub mod error;
pub mod evaluators;
pub mod evolution;
pub mod history;

pub use comparator::{ComparatorNet, NetShape, TrainConfig};
pub use cost::{cost, penalty, CostReport};
pub use critical::{select_reference, update_critical, CriticalSpecList};
pub use domain::{Buffer, DesignPoint, DesignSpace, Direction, EvaluatedDesign, Measurement, ParamSpec, Problem, SpecDef};
pub use engine::{Engine, EngineConfig, Mode, RunResult, RunStatus};
pub use error::{Error, Result};
pub use evaluators::{EvalError, Evaluator};
pub use evolution::EvoConfig;
