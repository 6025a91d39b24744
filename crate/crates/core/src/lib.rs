//! Multi-agent actor-critic training on a continuous predator-prey particle
//! world, joint state/action adversarial attacks, a minimax-trained defense,
//! and exhaustive tabular oracles for the attack value bounds.

pub mod attacks;
pub mod autodiff;
pub mod checkpoint;
pub mod defense;
pub mod env;
pub mod error;
pub mod harness;
pub mod madrl;
pub mod oracles;
pub mod seeding;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use error::{CheckpointError, Error, Result};
