//! Extraction of coordinated, depth-limited decision-tree surrogate policies
//! from exact expert policies in team-based Markov games.
//!
//! The pipeline distils an exact joint expert (computed by value iteration on
//! a tabular game) into one shallow CART tree per agent, DAGGER-style:
//! student rollouts are relabelled with expert actions, resampled by a
//! team-level Q-value criterion, and the best per-team tree snapshot is
//! picked by a fixed-budget UCB bandit. Large agent sets can first be split
//! into balanced teams via a Q-influence graph partitioner.
//!
//! Modules map onto the pipeline stages:
//!
//! * [`game`] — tabular team Markov games, policy profiles, rollouts
//! * [`envs`] — built-in coordination environments (grid targets, signal corridor)
//! * [`oracle`] — exact per-agent Q/V tables and the greedy joint expert
//! * [`dtree`] — weighted CART induction, inference, text serialization
//! * [`data`] — dataset aggregation, Q-range weighting, adaptive rollout budgets
//! * [`bandit`] — fixed-budget UCB1 selection of the best policy snapshot
//! * [`cluster`] — agent influence graphs and balanced partitioning
//! * [`pipeline`] — end-to-end orchestration, ablations, reports

pub mod bandit;
pub mod cluster;
pub mod data;
pub mod dtree;
pub mod envs;
pub mod game;
pub mod oracle;
pub mod pipeline;
pub mod rng;

pub use game::{PolicyProfile, TabularMarkovGame, Trajectory};
pub use oracle::TeamValueOracle;
pub use pipeline::{ExperimentConfig, RunReport};

