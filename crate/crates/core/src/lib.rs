//! Tutor-student reinforcement learning for sample re-weighting.
//!
//! A PPO "tutor" observes per-sample learning state and assigns each
//! training sample a loss weight in (0, 1); a small dense "student"
//! classifier trains on the weighted loss. The tutor is rewarded by how each
//! sample's correctness and confidence change across one weighted update.
//!
//! Module map:
//! * [`nn`], [`optim`], [`student`], [`checkpoint`]: dense networks, optimizers,
//!   the weighted student step and evaluation
//! * [`state`]: per-sample loss history and tutor state vectors
//! * [`tutor`]: Gaussian logit policy, behavioral cloning, PPO
//! * [`reward`]: state-change reward
//! * [`orchestrator`]: warmup, cloning and tutor-driven epochs
//! * [`experiment`]: multi-mode, multi-seed comparisons
//! * [`task`], [`metrics`]: synthetic data and AUC/ACC/EER

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod orchestrator;
pub mod reward;
pub mod state;
pub mod student;
pub mod task;
pub mod tutor;

pub use config::{Mode, RunConfig, StudentConfig};
pub use error::{Result, TsrlError};
pub use orchestrator::{train, train_with, RunArtifacts, TrainOptions};
