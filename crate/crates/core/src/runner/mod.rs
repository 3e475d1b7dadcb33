//! Optimizer, checkpoint container, training loop, inference and the CLI.

mod adam;
pub mod checkpoint;
pub mod cli;
mod desmoke;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use desmoke::{desmoke, DesmokeOptions, DesmokeSummary};
pub use train::{evaluate_loss, train, LogRow, TrainConfig, TrainOutcome};
