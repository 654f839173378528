//! The tree-structured DDP solver over belief space.

pub mod backward;
pub mod config;
pub mod cost;
pub mod forward;
pub mod solve;

pub use backward::{backward_pass, optimize_control, BackwardResult, QExpansion, Successors};
pub use config::SolverConfig;
pub use cost::evaluate_tree_cost;
pub use forward::{forward_pass, Nominal};
pub use solve::{solve, zero_controls, IterationRecord, SolveOutcome};
