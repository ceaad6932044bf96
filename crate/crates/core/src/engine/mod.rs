//! Assembly and integration of the full-order and reduced microgrid models.

pub mod equilibrium;
pub mod full;
pub mod integrate;
pub mod newton;
pub mod reduced;
pub mod scenario;
pub mod simulate;

use thiserror::Error;

use crate::components::ComponentError;
use crate::network::NetworkError;
use newton::NewtonError;

pub use equilibrium::{find_equilibrium, synchronous_equilibrium, Equilibrium};
pub use full::{FullLayout, FullSystem};
pub use integrate::{integrate, DynamicalSystem, IntegrationStats, IntegratorOptions, Method};
pub use newton::{newton_solve, NewtonOptions, NewtonReport};
pub use reduced::ReducedSystem;
pub use scenario::{
    FilterStart, InitialCondition, LoadEvent, ModelKind, NodeConfig, OmegaCom, Scenario, SimulationSettings,
};
pub use simulate::{simulate, LogEntry, LogKind, RunOptions, Sample, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("node {node}: {source}")]
    Component {
        node: String,
        #[source]
        source: ComponentError,
    },
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("invalid option: {0}")]
    InvalidOption(String),
    #[error("infeasible operating point at node {node}: {detail}")]
    Infeasible { node: String, detail: String },
    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: NewtonError,
    },
    #[error("state became non-finite at t = {t}")]
    NonFinite { t: f64 },
    #[error("implicit step at t = {t} (h = {h}) failed after all retries")]
    StepRejected { t: f64, h: f64 },
    #[error("integration aborted at t = {t}: {reason}")]
    Integration {
        t: f64,
        reason: Box<EngineError>,
        last_good: Vec<f64>,
    },
    #[error("state has {got} entries, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

impl EngineError {
    pub(crate) fn at_last_good(self, t: f64, last_good: Vec<f64>) -> Self {
        match self {
            e @ EngineError::Integration { .. } => e,
            e => EngineError::Integration {
                t,
                reason: Box::new(e),
                last_good,
            },
        }
    }

    /// Whether the failure is a property of the model (as opposed to bad input).
    pub fn is_model_failure(&self) -> bool {
        match self {
            EngineError::Network(_)
            | EngineError::Scenario(_)
            | EngineError::InvalidOption(_)
            | EngineError::Dimension { .. } => false,
            EngineError::Component { source, .. } => {
                matches!(source, ComponentError::VoltageSingularity)
            }
            EngineError::Integration { reason, .. } => reason.is_model_failure(),
            _ => true,
        }
    }
}
