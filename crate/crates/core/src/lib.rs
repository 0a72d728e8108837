//! Discrete-event simulation of hybrid CPU/QPU systems: quantum register
//! emulation, classical and quantum interconnects, entanglement management,
//! offload decisions and correlated failures.
//!
//! A run is fully determined by its [`scenario::Scenario`] and seed.

pub mod comm;
pub mod dispatch;
pub mod entmgr;
pub mod faults;
pub mod metrics;
pub mod par;
pub mod qram;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod sweep;
pub mod system;
pub mod topology;
pub mod workload;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Run(#[from] system::RunError),
    #[error(transparent)]
    Sweep(#[from] sweep::SweepError),
}

impl Error {
    /// Configuration problems versus failures during the run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Scenario(_) | Error::Sweep(sweep::SweepError::Usage(_) | sweep::SweepError::Scenario { .. })
        )
    }
}
