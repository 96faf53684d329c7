//! Gather-and-build economy: a gridworld where agents collect wood and
//! stone, trade them and build houses, under a tax policy chosen by a fixed
//! schedule, the Saez formula or a learned planner.

pub mod env;
pub mod experiment;
pub mod learn;
pub mod market;
pub mod metrics;
pub mod tax;
pub mod world;

pub use env::{Env, EnvConfig, EnvError, Observation, ObsLayout, PlannerObjective, StepInfo, StepOutcome, TaxController};
pub use experiment::{EpisodeReplay, ExperimentConfig, ExperimentError, Treatment};
pub use learn::{ActorCritic, Checkpoint, EpisodeSummary, TrainConfig, Trainer};
pub use market::{OrderBook, Side, Trade};
pub use metrics::WelfareWeights;
pub use tax::{PeriodLedger, SaezController, TaxSchedule};
pub use world::{Direction, Pos, ResourceKind, World};
