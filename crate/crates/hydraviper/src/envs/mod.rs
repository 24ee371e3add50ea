//! Built-in desk-scale environments.
//!
//! Both environments are sized so exact value iteration finishes in seconds
//! while still exercising the coordination structure the pipeline targets:
//! a coordinated-targets grid game and a signal-corridor queueing game.

mod coord_targets;
mod corridor;
mod random;

pub use coord_targets::{build_coord_targets, CoordTargetsConfig};
pub use corridor::{build_corridor, CorridorConfig};
pub use random::{random_game, RandomGameConfig};

use thiserror::Error;

/// Hard cap on enumerable state spaces.
pub const MAX_STATES: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("state space of {size} states exceeds the {limit}-state limit")]
    StateSpaceTooLarge { size: usize, limit: usize },
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Game(#[from] crate::game::GameError),
}
