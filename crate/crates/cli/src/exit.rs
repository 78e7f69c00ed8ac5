//! Process exit codes and the error type that carries them.

use std::fmt;

use struchis::graph::GraphError;
use struchis::model::ModelError;
use struchis::trainer::TrainError;

pub const OK: u8 = 0;
pub const FINDINGS: u8 = 1;
pub const USAGE: u8 = 2;
pub const RUNTIME: u8 = 3;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub error: anyhow::Error,
}

impl CliError {
    pub fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }

    pub fn usage(error: impl Into<anyhow::Error>) -> Self {
        Self::new(USAGE, error)
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Self::new(RUNTIME, error)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

/// Tags a fallible result with its exit code.
pub trait Classify<T> {
    fn or_usage(self) -> Result<T, CliError>;
    fn or_runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn or_usage(self) -> Result<T, CliError> {
        self.map_err(CliError::usage)
    }

    fn or_runtime(self) -> Result<T, CliError> {
        self.map_err(CliError::runtime)
    }
}

/// Config and schema problems are usage errors; anything that goes wrong
/// once training has started aborts the run.
pub fn from_train(e: TrainError) -> CliError {
    match e {
        TrainError::Config(_) | TrainError::Model(ModelError::Config(_) | ModelError::Schema(_)) => CliError::usage(e),
        TrainError::Graph(GraphError::Invalid(_)) => CliError::new(FINDINGS, e),
        _ => CliError::runtime(e),
    }
}
