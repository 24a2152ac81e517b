use std::fmt;

use crate::arrival::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Matrices of the wrong shape; distinct from an invariant violation.
    #[error("structural error: {0}")]
    Structure(String),

    #[error("invalid arrival process:\n{0}")]
    InvalidProcess(ValidationReport),

    #[error("phase generator is reducible; communicating classes: {classes:?}")]
    Reducible { classes: Vec<Vec<usize>> },

    #[error("uniformization did not reach tail mass < {target:e} within {steps} steps (achieved {achieved:e})")]
    Truncation { target: f64, achieved: f64, steps: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error(
        "transition matrix with {states} states and {nonzeros} nonzeros needs ~{bytes} bytes, over the {budget} byte budget"
    )]
    MemoryBudget {
        states: usize,
        nonzeros: usize,
        bytes: usize,
        budget: usize,
    },

    #[error("chain has more than one recurrent class (e.g. {first:?} and {second:?})")]
    MultipleRecurrentClasses { first: Vec<usize>, second: Vec<usize> },

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e}); try damping")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("level {level} block is singular: a subset of its states never leaves it")]
    SingularBlock { level: usize },

    #[error("fingerprint mismatch: expected {expected}, found {found}")]
    FingerprintMismatch { expected: String, found: String },

    #[error("state index out of range: {0}")]
    OutOfRange(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Scenario file problem, anchored to a line when one can be located.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            line: None,
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn at(mut self, line: Option<usize>) -> Self {
        if self.line.is_none() {
            self.line = line;
        }
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}
