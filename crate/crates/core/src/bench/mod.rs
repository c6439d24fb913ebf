//! Gridworld benchmark for cross-modal goal transfer.
//!
//! A policy is cloned from expert demonstrations conditioned on goal
//! embeddings of one modality and then driven by goals of the other.

pub mod experiment;
pub mod grid;
pub mod policy;
pub mod synthetic;

pub use experiment::{
    default_ablations, run_transfer_experiment, write_transfer_report, Ablation, BenchConfig,
    CollapseKind, TransferReport,
};
pub use grid::{
    build_dataset, expert_trajectory, generate_tasks, Action, Cell, GridTask, TaskSet, Trajectory,
};
pub use policy::{
    evaluate_policy, evaluate_random, goal_embedding, train_policy, EvalConfig, GoalEncoder,
    GoalSource, PolicyConfig, PolicyParams, PromptSet,
};
pub use synthetic::{synthetic_gap_bank, synthetic_gap_banks, SyntheticGap};
