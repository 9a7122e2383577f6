use std::path::PathBuf;

use dtc_core::environment::EnvError;
use dtc_core::evolve::EvolveError;
use dtc_core::model::ModelError;
use dtc_core::observables::ObservableError;
use dtc_core::oracle::OracleError;
use dtc_core::state::StateError;
use thiserror::Error;

use crate::config::ConfigError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Resource(_) => 4,
            CliError::Io { .. } | CliError::Output(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<EvolveError> for CliError {
    fn from(e: EvolveError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.into())
    }
}

impl From<ObservableError> for CliError {
    fn from(e: ObservableError) -> Self {
        match e {
            ObservableError::Csv(m) => CliError::Output(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<StateError> for CliError {
    fn from(e: StateError) -> Self {
        match e {
            StateError::Io(source) => CliError::Io { path: PathBuf::from("checkpoint"), source },
            StateError::Format(m) => CliError::Output(format!("checkpoint: {m}")),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::Resource(m) => CliError::Resource(m),
            OracleError::Lattice(m) => CliError::Config(ConfigError::Invalid { field: "lattice".into(), message: m }),
            OracleError::Model(m) => m.into(),
            OracleError::Observable(o) => o.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}
