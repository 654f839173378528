//! Partially observable differential dynamic programming: trajectory trees
//! over belief space for problems with a constant hidden latent variable.

pub mod baselines;
pub mod belief;
pub mod diff;
pub mod error;
pub mod experiment;
pub mod harness;
pub mod model;
pub mod scenarios;
pub mod solver;
pub mod stats;
pub mod tree;

pub use baselines::{mlddp_plan, pwddp_plan, PlannerKind, StackedModel};
pub use belief::{bayes_update, Belief, BeliefLogits, BeliefState, LatentSet};
pub use error::{Error, Result};
pub use experiment::{BuiltExperiment, ExperimentConfig, ExperimentKind, ScenarioConfig};
pub use harness::{execute_episode, run_batch, BatchStats, EpisodeTrace};
pub use model::{ConditionedModel, ProblemModel};
pub use scenarios::Scenario;
pub use solver::{solve, IterationRecord, SolveOutcome, SolverConfig};
pub use stats::{welch_t, WelchTest};
pub use tree::{GainSchedule, HistoryPath, SegmentSchedule, TrajectoryTree};
