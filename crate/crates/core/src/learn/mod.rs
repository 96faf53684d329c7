//! Recurrent actor-critic models and the two-level PPO trainer.

pub mod adam;
pub mod checkpoint;
pub mod dist;
pub mod gae;
pub mod nn;
pub mod ppo;
pub mod trainer;

pub use checkpoint::{Checkpoint, CheckpointError, CheckpointInfo};
pub use nn::{CellKind, Net, NetSpec};
pub use ppo::{ActorCritic, Learner, LossStats, NetArch, PpoParams, SeqBatch};
pub use trainer::{play_episode, EpisodeSummary, IterStats, TrainConfig, TrainError, Trainer};
