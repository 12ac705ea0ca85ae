//! Federated deep reinforcement learning for adaptive bitrate streaming:
//! a chunk-level video player simulator, bandwidth traces, a small MLP
//! library, DQN / A2C / PPO learners, rule-based baselines and a FedAvg
//! server.

pub mod agents;
pub mod baselines;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fed;
pub mod manifest;
pub mod nn;
pub mod report;
pub mod rng;
pub mod sim;
pub mod traces;

pub use error::{Error, Result};
