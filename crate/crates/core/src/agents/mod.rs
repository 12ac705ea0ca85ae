//! Client-side learners and the pieces they share.

pub mod actor_critic;
pub mod dqn;
pub mod losses;
pub mod policy;
pub mod replay;
pub mod toy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec, WeightVector};
use crate::rng::SimRng;

pub use actor_critic::{ActorCriticAgent, ActorCriticConfig, PgMethod};
pub use dqn::{DqnAgent, DqnConfig};
pub use policy::GreedyPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Dqn,
    A2c,
    Ppo,
}

impl Algo {
    pub const ALL: [Algo; 3] = [Algo::Dqn, Algo::A2c, Algo::Ppo];

    pub fn name(self) -> &'static str {
        match self {
            Algo::Dqn => "dqn",
            Algo::A2c => "a2c",
            Algo::Ppo => "ppo",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(Algo::Dqn),
            "a2c" => Ok(Algo::A2c),
            "ppo" => Ok(Algo::Ppo),
            other => Err(Error::param(format!("unknown algorithm '{other}'"))),
        }
    }
}

/// Hyperparameters of all three learners; only the selected one is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfigs {
    pub dqn: DqnConfig,
    pub a2c: ActorCriticConfig,
    pub ppo: ActorCriticConfig,
}

impl Default for AgentConfigs {
    fn default() -> Self {
        Self {
            dqn: DqnConfig::default(),
            a2c: ActorCriticConfig::a2c(),
            ppo: ActorCriticConfig::ppo(),
        }
    }
}

impl AgentConfigs {
    /// Networks exchanged with the server, in weight-vector order. The first
    /// one drives greedy action selection.
    pub fn model_specs(&self, algo: Algo, obs_dim: usize, num_actions: usize) -> Vec<MlpSpec> {
        match algo {
            Algo::Dqn => vec![self.dqn.q_network(obs_dim, num_actions)],
            Algo::A2c => vec![
                self.a2c.actor_spec(obs_dim, num_actions),
                self.a2c.critic_spec(obs_dim),
            ],
            Algo::Ppo => vec![
                self.ppo.actor_spec(obs_dim, num_actions),
                self.ppo.critic_spec(obs_dim),
            ],
        }
    }

    /// Freshly initialised global weights.
    pub fn initial_weights(
        &self,
        algo: Algo,
        obs_dim: usize,
        num_actions: usize,
        rng: &mut SimRng,
    ) -> WeightVector {
        let nets: Vec<Mlp> = self
            .model_specs(algo, obs_dim, num_actions)
            .into_iter()
            .map(|spec| Mlp::random(spec, rng))
            .collect();
        WeightVector::from_nets(&nets.iter().collect::<Vec<_>>())
    }

    pub fn build_agent(&self, algo: Algo, obs_dim: usize, num_actions: usize) -> Result<Agent> {
        Ok(match algo {
            Algo::Dqn => Agent::Dqn(DqnAgent::new(self.dqn.clone(), obs_dim, num_actions)?),
            Algo::A2c => Agent::ActorCritic(ActorCriticAgent::new(
                self.a2c.clone(),
                obs_dim,
                num_actions,
            )?),
            Algo::Ppo => Agent::ActorCritic(ActorCriticAgent::new(
                self.ppo.clone(),
                obs_dim,
                num_actions,
            )?),
        })
    }
}

/// Result of one client's local training in a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalUpdate {
    pub weights: WeightVector,
    /// Mean per-step reward of each completed episode.
    pub episode_rewards: Vec<f64>,
    pub steps: u64,
}

impl LocalUpdate {
    pub fn mean_reward(&self) -> f64 {
        if self.episode_rewards.is_empty() {
            return f64::NAN;
        }
        self.episode_rewards.iter().sum::<f64>() / self.episode_rewards.len() as f64
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeTracker {
    sum: f64,
    len: u64,
    steps: u64,
    episodes: Vec<f64>,
}

impl EpisodeTracker {
    pub(crate) fn record(&mut self, reward: f64) {
        self.sum += reward;
        self.len += 1;
        self.steps += 1;
    }

    pub(crate) fn finish_episode(&mut self) {
        if self.len > 0 {
            self.episodes.push(self.sum / self.len as f64);
        }
        self.sum = 0.0;
        self.len = 0;
    }

    pub(crate) fn into_update(self, weights: WeightVector) -> LocalUpdate {
        LocalUpdate {
            weights,
            episode_rewards: self.episodes,
            steps: self.steps,
        }
    }
}

/// A client learner of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Agent {
    Dqn(DqnAgent),
    ActorCritic(ActorCriticAgent),
}

impl Agent {
    pub fn train_episodes<E: Environment>(
        &mut self,
        env: &mut E,
        weights_in: &WeightVector,
        episodes: usize,
        rng: &mut SimRng,
    ) -> Result<LocalUpdate> {
        match self {
            Agent::Dqn(a) => a.train_episodes(env, weights_in, episodes, rng),
            Agent::ActorCritic(a) => a.train_episodes(env, weights_in, episodes, rng),
        }
    }

    pub fn weights(&self) -> WeightVector {
        match self {
            Agent::Dqn(a) => a.weights(),
            Agent::ActorCritic(a) => a.weights(),
        }
    }

    pub fn set_weights(&mut self, weights: &WeightVector) -> Result<()> {
        match self {
            Agent::Dqn(a) => a.set_weights(weights),
            Agent::ActorCritic(a) => a.set_weights(weights),
        }
    }
}
