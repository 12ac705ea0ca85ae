use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::Result;
use crate::nn::{argmax, clip_grad_norm, Adam, Mlp, MlpSpec, OutputHead, WeightVector};
use crate::rng::SimRng;

use super::losses::{td_loss, td_targets};
use super::replay::ReplayMemory;
use super::{EpisodeTracker, LocalUpdate};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Target network sync period `C`, in local environment steps.
    pub target_update_period: u64,
    pub gamma: f64,
    /// Fraction of `anneal_horizon_steps` over which epsilon decays.
    pub exploration_fraction: f64,
    pub exploration_initial_eps: f64,
    pub exploration_final_eps: f64,
    pub replay_capacity: usize,
    pub anneal_horizon_steps: u64,
    pub max_grad_norm: Option<f64>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 5e-4,
            batch_size: 128,
            target_update_period: 25,
            gamma: 0.9,
            exploration_fraction: 0.5,
            exploration_initial_eps: 1.0,
            exploration_final_eps: 0.05,
            replay_capacity: 100_000,
            anneal_horizon_steps: 100_000,
            max_grad_norm: Some(10.0),
        }
    }
}

impl DqnConfig {
    pub fn q_network(&self, obs_dim: usize, num_actions: usize) -> MlpSpec {
        MlpSpec::new(obs_dim, &self.hidden, num_actions, OutputHead::Linear)
    }
}

/// Linear decay from the initial to the final epsilon over the first
/// `exploration_fraction * anneal_horizon_steps` steps, constant afterwards.
pub fn epsilon_at(config: &DqnConfig, step: u64) -> f64 {
    let end = config.exploration_fraction * config.anneal_horizon_steps as f64;
    if end <= 0.0 || step as f64 >= end {
        return config.exploration_final_eps;
    }
    let progress = step as f64 / end;
    config.exploration_initial_eps
        + progress * (config.exploration_final_eps - config.exploration_initial_eps)
}

/// Client-side DQN learner. The replay memory, optimizer moments and step
/// counter persist across federated rounds; only the online Q-network
/// weights are exchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DqnAgent {
    config: DqnConfig,
    online: Mlp,
    target: Mlp,
    optimizer: Adam,
    memory: ReplayMemory,
    steps: u64,
}

impl DqnAgent {
    pub fn new(config: DqnConfig, obs_dim: usize, num_actions: usize) -> Result<Self> {
        let spec = config.q_network(obs_dim, num_actions);
        let online = Mlp::zeros(spec);
        Ok(Self {
            optimizer: Adam::new(online.num_params(), config.learning_rate),
            memory: ReplayMemory::new(config.replay_capacity, obs_dim)?,
            target: online.clone(),
            online,
            config,
            steps: 0,
        })
    }

    pub fn config(&self) -> &DqnConfig {
        &self.config
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn memory(&self) -> &ReplayMemory {
        &self.memory
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn weights(&self) -> WeightVector {
        WeightVector::from_nets(&[&self.online])
    }

    /// Loads `weights` into both the online and the target network.
    pub fn set_weights(&mut self, weights: &WeightVector) -> Result<()> {
        weights.load_into(&mut [&mut self.online])?;
        self.sync_target();
        Ok(())
    }

    fn sync_target(&mut self) {
        self.target.params_mut().copy_from_slice(self.online.params());
    }

    fn act(&self, obs: &[f64], rng: &mut SimRng) -> usize {
        let eps = epsilon_at(&self.config, self.steps);
        if rng.random::<f64>() < eps {
            rng.random_range(0..self.online.spec().output_dim)
        } else {
            argmax(&self.online.predict(obs))
        }
    }

    fn learn(&mut self, rng: &mut SimRng) {
        let batch = self.memory.sample(self.config.batch_size, rng);
        let targets = td_targets(&self.target, &batch, self.config.gamma);
        let (_, mut grad) = td_loss(&self.online, &batch, &targets);
        if let Some(max) = self.config.max_grad_norm {
            clip_grad_norm(&mut grad, max);
        }
        self.optimizer.step(self.online.params_mut(), &grad);
    }

    /// Runs `episodes` episodes starting from `weights_in`, one gradient
    /// step per environment step once the memory holds a full batch.
    pub fn train_episodes<E: Environment>(
        &mut self,
        env: &mut E,
        weights_in: &WeightVector,
        episodes: usize,
        rng: &mut SimRng,
    ) -> Result<LocalUpdate> {
        self.set_weights(weights_in)?;
        let mut tracker = EpisodeTracker::default();
        for _ in 0..episodes {
            let mut obs = env.reset(rng)?;
            loop {
                let action = self.act(&obs, rng);
                let step = env.step(action)?;
                self.memory
                    .push(&obs, action, step.reward, &step.observation, step.terminal);
                self.steps += 1;
                tracker.record(step.reward);
                if self.memory.len() >= self.config.batch_size {
                    self.learn(rng);
                }
                if self.steps % self.config.target_update_period == 0 {
                    self.sync_target();
                }
                if step.done() {
                    tracker.finish_episode();
                    break;
                }
                obs = step.observation;
            }
        }
        Ok(tracker.into_update(self.weights()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::replay::TransitionBatch;
    use crate::nn::flatten;
    use crate::rng::substream;
    use ndarray::Array2;

    #[test]
    fn epsilon_schedule() {
        let cfg = DqnConfig {
            anneal_horizon_steps: 1000,
            ..DqnConfig::default()
        };
        assert_eq!(epsilon_at(&cfg, 0), 1.0);
        assert!((epsilon_at(&cfg, 250) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_at(&cfg, 500), 0.05);
        assert_eq!(epsilon_at(&cfg, 1000), 0.05);
        assert_eq!(epsilon_at(&cfg, 10_000), 0.05);
    }

    fn batch(terminal: bool) -> TransitionBatch {
        TransitionBatch {
            states: Array2::from_elem((1, 3), 0.1),
            actions: vec![1],
            rewards: vec![0.7],
            next_states: Array2::from_elem((1, 3), -0.4),
            terminals: vec![terminal],
        }
    }

    #[test]
    fn terminal_targets_do_not_bootstrap() {
        let mut rng = substream(1, "q", 0);
        let q = Mlp::random(MlpSpec::new(3, &[4], 2, OutputHead::Linear), &mut rng);
        assert_eq!(td_targets(&q, &batch(true), 0.9), vec![0.7]);
        assert_eq!(td_targets(&q, &batch(false), 0.0), vec![0.7]);
        let boot = td_targets(&q, &batch(false), 0.9)[0];
        let next = q.predict(&[-0.4; 3]);
        assert_eq!(boot, 0.7 + 0.9 * next[0].max(next[1]));
    }

    #[test]
    fn set_weights_syncs_target() {
        let mut agent = DqnAgent::new(DqnConfig::default(), 4, 3).unwrap();
        let mut rng = substream(2, "q", 0);
        let net = Mlp::random(agent.config().q_network(4, 3), &mut rng);
        agent.set_weights(&flatten(&net)).unwrap();
        assert_eq!(agent.online().params(), agent.target().params());
        assert_eq!(agent.online(), &net);
    }
}
