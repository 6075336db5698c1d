//! Scenario-driven front end for `ussir-core`.

pub mod commands;
pub mod scenario;

pub use commands::{
    cmd_criteria, cmd_ensemble, cmd_simulate, cmd_validate, CommandError, Outcome, Overrides,
    Status,
};
pub use scenario::{load_scenario, parse_scenario, ModelId, ScenarioConfig, ScenarioError};
