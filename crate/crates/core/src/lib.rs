//! Group-fair multi-task reinforcement learning on finite-horizon tabular MDPs.
//!
//! The learner keeps one empirical model per group, plays a known safe
//! policy until the confidence sandwich certifies that fairness can be kept,
//! and otherwise solves a joint occupancy-measure linear program over all
//! groups with an exploration bonus in the objective.

pub mod config;
pub mod envs;
pub mod error;
pub mod estimation;
pub mod evaluation;
pub mod harness;
pub mod learner;
pub mod mdp;
pub mod mps;
pub mod oracle;
pub mod planner;
pub mod rewards;
pub mod simplex;

pub use error::{Error, Result};
pub use learner::{run_baseline, run_learner, Algorithm, EpisodeRecord, FairnessConfig, RunSummary};
pub use mdp::{Dims, TaskedGroupMDP, TimedPolicy, TimedPolicySet};
