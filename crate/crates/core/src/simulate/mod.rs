//! Scripted sit-to-stand scenario: a four-state contact sequencer, min-jerk
//! centre-of-mass references, the partner-aware controller in the loop,
//! semi-implicit integration of the coupled system and CSV/JSON logging.

mod config;
mod engine;
mod log;
mod machine;
mod minjerk;

pub use config::{
    ComWaypoints, GainsConfig, InitialConfig, MachineConfig, PartnerConfig, PartnerMode, PostureConfig, PullConfig,
    ReleaseConfig, Scenario, ScenarioConfig, Segment, StabilizationConfig, StateContacts,
};
pub use engine::{constrained_forward_dynamics, initial_state, integrate_step, run_scenario};
pub use log::{LogRecord, ScenarioRun, Summary, Transition, WrenchColumns, VDOT_TOLERANCE};
pub use machine::{contact_changes, machine_step, MachineState, MachineStep, StateMachine, Thresholds};
pub use minjerk::{min_jerk_eval, MinJerkSpec};

use thiserror::Error;

use crate::control::ControlError;
use crate::coupled::CoupledError;
use crate::multibody::ModelError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Coupled(#[from] CoupledError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Configuration problems as opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(self, SimError::Config(_) | SimError::Model(_))
    }
}
