//! Blackout-mitigation workbench: a DC power-flow environment, PTDF/LODF
//! sensitivity factors, and a dueling DQN agent whose exploration and
//! action selection are guided by those factors.

pub mod actions;
pub mod agents;
pub mod dqn;
pub mod env;
pub mod fixtures;
pub mod grid;
pub mod metrics;
pub mod par;
pub mod scenario;
pub mod sensitivity;
pub mod state;
pub mod synth;
pub mod train;

pub use actions::{Action, ActionCatalog, ActionId, GenActionSpec};
pub use env::{EnvConfig, Environment, StepOutcome};
pub use grid::{Grid, GridError};
pub use par::Exec;
pub use scenario::Scenario;
pub use sensitivity::SensitivitySet;
pub use state::SystemState;
