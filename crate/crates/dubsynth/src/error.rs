use std::io;
use std::path::PathBuf;

use dubsynth_core::environment::EnvError;
use dubsynth_core::mdp::MdpError;
use dubsynth_core::pctl::{FormulaError, UpdateError};
use dubsynth_core::strategy::StrategyError;
use dubsynth_core::synthesis::SynthesisError;
use dubsynth_core::vehicle::VehicleError;
use thiserror::Error;

use crate::session::Phase;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{0}")]
    Scenario(String),
    #[error(transparent)]
    Environment(#[from] EnvError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Formula(#[from] FormulaError),
    #[error(transparent)]
    Update(#[from] UpdateError),
    #[error(transparent)]
    Synthesis(#[from] SynthesisError),
    #[error(transparent)]
    Strategy(#[from] StrategyError),
    #[error("`{op}` is not allowed while the session is {phase}")]
    Phase { op: &'static str, phase: Phase },
    #[error("candidate {0} is stale: the session changed after it was listed")]
    Stale(String),
    #[error("no candidate {0}; list candidates first")]
    UnknownCandidate(String),
    #[error("the run has satisfied {actual} blocks, the rule claims {claimed}")]
    Prefix { claimed: usize, actual: usize },
    #[error("noise {eps} is outside [-{eps_max}, {eps_max}]")]
    Noise { eps: f64, eps_max: f64 },
    #[error("no session `{0}`")]
    NotFound(String),
    #[error("corrupt store entry {0}")]
    Corrupt(String),
}

impl ServiceError {
    /// Pipeline stage or protocol layer the error comes from.
    pub fn stage(&self) -> &'static str {
        match self {
            ServiceError::Io { .. } | ServiceError::Json { .. } | ServiceError::Corrupt(_) => "store",
            ServiceError::Scenario(_) => "scenario",
            ServiceError::Environment(_) => "environment",
            ServiceError::Vehicle(_) => "vehicle",
            ServiceError::Mdp(_) => "abstraction",
            ServiceError::Formula(_) => "formula",
            ServiceError::Update(_) | ServiceError::Prefix { .. } => "update",
            ServiceError::Synthesis(_) => "synthesis",
            ServiceError::Strategy(_) | ServiceError::Noise { .. } => "deployment",
            ServiceError::Phase { .. }
            | ServiceError::Stale(_)
            | ServiceError::UnknownCandidate(_)
            | ServiceError::NotFound(_) => "protocol",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> ServiceError {
        let path = path.into();
        move |source| ServiceError::Io { path, source }
    }

    pub(crate) fn json(context: impl Into<String>) -> impl FnOnce(serde_json::Error) -> ServiceError {
        let context = context.into();
        move |source| ServiceError::Json { context, source }
    }
}
