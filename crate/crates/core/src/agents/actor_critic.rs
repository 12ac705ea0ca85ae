use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, log_softmax_rows, Adam, Mlp, MlpSpec, OutputHead, WeightVector};
use crate::rng::SimRng;

use super::losses::{policy_gradient_loss, ppo_clip_loss, value_loss};
use super::{EpisodeTracker, LocalUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PgMethod {
    A2c,
    Ppo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticConfig {
    pub method: PgMethod,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub learning_rate: f64,
    pub gamma: f64,
    /// Rollout length `N`.
    pub n_steps: usize,
    /// Parallel environments per client; only 1 is supported.
    pub n_envs: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    /// PPO clip range.
    pub clip_range: f64,
    /// PPO optimisation epochs per rollout.
    pub n_epochs: usize,
    pub max_grad_norm: Option<f64>,
}

impl ActorCriticConfig {
    pub fn a2c() -> Self {
        Self {
            method: PgMethod::A2c,
            actor_hidden: vec![64, 64, 64],
            critic_hidden: vec![64, 64],
            learning_rate: 5e-4,
            gamma: 0.9,
            n_steps: 5,
            n_envs: 1,
            entropy_coef: 0.0,
            value_coef: 0.5,
            clip_range: 0.2,
            n_epochs: 1,
            max_grad_norm: Some(0.5),
        }
    }

    pub fn ppo() -> Self {
        Self {
            method: PgMethod::Ppo,
            critic_hidden: vec![64, 64, 64],
            learning_rate: 1e-4,
            n_epochs: 10,
            ..Self::a2c()
        }
    }

    pub fn actor_spec(&self, obs_dim: usize, num_actions: usize) -> MlpSpec {
        MlpSpec::new(obs_dim, &self.actor_hidden, num_actions, OutputHead::Softmax)
    }

    pub fn critic_spec(&self, obs_dim: usize) -> MlpSpec {
        MlpSpec::new(obs_dim, &self.critic_hidden, 1, OutputHead::Linear)
    }

    fn validate(&self) -> Result<()> {
        if self.n_envs != 1 {
            return Err(Error::param("only one environment per client is supported"));
        }
        if self.n_steps == 0 || self.n_epochs == 0 {
            return Err(Error::param("n_steps and n_epochs must be positive"));
        }
        Ok(())
    }
}

/// How a rollout step ended.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepEnd {
    Continue,
    Terminal,
    /// Time-limit cut; `next_value` is the critic's estimate of the next state.
    Truncated { next_value: f64 },
}

/// N-step returns by backward recursion `R_n = r_n + gamma R_{n+1}`, seeded
/// with `bootstrap` after the last step and cut at episode boundaries.
pub fn n_step_returns(rewards: &[f64], ends: &[StepEnd], bootstrap: f64, gamma: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), ends.len());
    let mut returns = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for i in (0..rewards.len()).rev() {
        next = match ends[i] {
            StepEnd::Continue => rewards[i] + gamma * next,
            StepEnd::Terminal => rewards[i],
            StepEnd::Truncated { next_value } => rewards[i] + gamma * next_value,
        };
        returns[i] = next;
    }
    returns
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Rollout {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub ends: Vec<StepEnd>,
    pub bootstrap_value: f64,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Fills `returns` and `advantages = returns - values`.
    pub fn finish(&mut self, gamma: f64) {
        self.returns = n_step_returns(&self.rewards, &self.ends, self.bootstrap_value, gamma);
        self.advantages = self
            .returns
            .iter()
            .zip(&self.values)
            .map(|(r, v)| r - v)
            .collect();
    }

    pub fn state_matrix(&self) -> Array2<f64> {
        let dim = self.states[0].len();
        Array2::from_shape_vec(
            (self.states.len(), dim),
            self.states.iter().flatten().copied().collect(),
        )
        .expect("rectangular rollout")
    }
}

fn sample_categorical(log_probs: &[f64], rng: &mut SimRng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, lp) in log_probs.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            return i;
        }
    }
    log_probs.len() - 1
}

/// Client-side A2C / PPO learner with separate actor and critic networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActorCriticAgent {
    config: ActorCriticConfig,
    actor: Mlp,
    critic: Mlp,
    actor_opt: Adam,
    critic_opt: Adam,
}

impl ActorCriticAgent {
    pub fn new(config: ActorCriticConfig, obs_dim: usize, num_actions: usize) -> Result<Self> {
        config.validate()?;
        let actor = Mlp::zeros(config.actor_spec(obs_dim, num_actions));
        let critic = Mlp::zeros(config.critic_spec(obs_dim));
        Ok(Self {
            actor_opt: Adam::new(actor.num_params(), config.learning_rate),
            critic_opt: Adam::new(critic.num_params(), config.learning_rate),
            actor,
            critic,
            config,
        })
    }

    pub fn config(&self) -> &ActorCriticConfig {
        &self.config
    }

    pub fn actor(&self) -> &Mlp {
        &self.actor
    }

    pub fn critic(&self) -> &Mlp {
        &self.critic
    }

    pub fn weights(&self) -> WeightVector {
        WeightVector::from_nets(&[&self.actor, &self.critic])
    }

    pub fn set_weights(&mut self, weights: &WeightVector) -> Result<()> {
        weights.load_into(&mut [&mut self.actor, &mut self.critic])
    }

    fn value(&self, obs: &[f64]) -> f64 {
        self.critic.predict(obs)[0]
    }

    fn step_actor(&mut self, mut grad: Vec<f64>) {
        if let Some(max) = self.config.max_grad_norm {
            clip_grad_norm(&mut grad, max);
        }
        self.actor_opt.step(self.actor.params_mut(), &grad);
    }

    fn step_critic(&mut self, mut grad: Vec<f64>) {
        if let Some(max) = self.config.max_grad_norm {
            clip_grad_norm(&mut grad, max);
        }
        self.critic_opt.step(self.critic.params_mut(), &grad);
    }

    /// One update from a finished rollout: a single actor and critic step for
    /// A2C, `n_epochs` full-batch steps against the frozen log-probabilities
    /// for PPO.
    pub fn update(&mut self, rollout: &Rollout) {
        let states = rollout.state_matrix();
        let cfg = self.config.clone();
        match cfg.method {
            PgMethod::A2c => {
                let (_, g_actor) = policy_gradient_loss(
                    &self.actor,
                    states.view(),
                    &rollout.actions,
                    &rollout.advantages,
                    cfg.entropy_coef,
                );
                let (_, g_critic) =
                    value_loss(&self.critic, states.view(), &rollout.returns, cfg.value_coef);
                self.step_actor(g_actor);
                self.step_critic(g_critic);
            }
            PgMethod::Ppo => {
                for _ in 0..cfg.n_epochs {
                    let (_, g_actor) = ppo_clip_loss(
                        &self.actor,
                        states.view(),
                        &rollout.actions,
                        &rollout.log_probs,
                        &rollout.advantages,
                        cfg.clip_range,
                        cfg.entropy_coef,
                    );
                    let (_, g_critic) =
                        value_loss(&self.critic, states.view(), &rollout.returns, cfg.value_coef);
                    self.step_actor(g_actor);
                    self.step_critic(g_critic);
                }
            }
        }
    }

    /// Runs `episodes` episodes from `weights_in`, updating after every
    /// `n_steps`-step rollout. Rollouts run across episode boundaries; the
    /// last one ends with the final episode.
    pub fn train_episodes<E: Environment>(
        &mut self,
        env: &mut E,
        weights_in: &WeightVector,
        episodes: usize,
        rng: &mut SimRng,
    ) -> Result<LocalUpdate> {
        self.set_weights(weights_in)?;
        let mut tracker = EpisodeTracker::default();
        if episodes == 0 {
            return Ok(tracker.into_update(self.weights()));
        }
        let mut obs = env.reset(rng)?;
        let mut completed = 0;
        while completed < episodes {
            let mut rollout = Rollout::default();
            let mut finished = false;
            for _ in 0..self.config.n_steps {
                let log_probs = self.actor.predict_logits(&obs);
                let log_probs = log_softmax_rows(
                    ndarray::ArrayView2::from_shape((1, log_probs.len()), &log_probs).unwrap(),
                )
                .into_raw_vec_and_offset()
                .0;
                let action = sample_categorical(&log_probs, rng);
                let value = self.value(&obs);
                let step = env.step(action)?;
                tracker.record(step.reward);

                rollout.states.push(std::mem::take(&mut obs));
                rollout.actions.push(action);
                rollout.rewards.push(step.reward);
                rollout.log_probs.push(log_probs[action]);
                rollout.values.push(value);
                let end = if step.terminal {
                    StepEnd::Terminal
                } else if step.truncated {
                    StepEnd::Truncated {
                        next_value: self.value(&step.observation),
                    }
                } else {
                    StepEnd::Continue
                };
                rollout.ends.push(end);

                if step.done() {
                    tracker.finish_episode();
                    completed += 1;
                    if completed == episodes {
                        finished = true;
                        break;
                    }
                    obs = env.reset(rng)?;
                } else {
                    obs = step.observation;
                }
            }
            rollout.bootstrap_value = match rollout.ends.last() {
                Some(StepEnd::Continue) => self.value(&obs),
                _ => 0.0,
            };
            rollout.finish(self.config.gamma);
            self.update(&rollout);
            if finished {
                break;
            }
        }
        Ok(tracker.into_update(self.weights()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn returns_recursion() {
        let r = [1.0, 2.0, 3.0];
        let cont = [StepEnd::Continue; 3];
        assert_eq!(n_step_returns(&r, &cont, 0.0, 1.0), vec![6.0, 5.0, 3.0]);
        assert_eq!(
            n_step_returns(&r, &cont, 10.0, 0.5),
            vec![1.0 + 0.5 * (2.0 + 0.5 * (3.0 + 5.0)), 2.0 + 0.5 * (3.0 + 5.0), 8.0]
        );
        let cut = [StepEnd::Continue, StepEnd::Terminal, StepEnd::Continue];
        assert_eq!(n_step_returns(&r, &cut, 4.0, 1.0), vec![3.0, 2.0, 7.0]);
        let trunc = [StepEnd::Truncated { next_value: 2.0 }];
        assert_eq!(n_step_returns(&[1.0], &trunc, 99.0, 0.5), vec![2.0]);
    }

    #[test]
    fn single_terminal_step() {
        let mut ro = Rollout {
            rewards: vec![0.8],
            values: vec![0.3],
            ends: vec![StepEnd::Terminal],
            bootstrap_value: 5.0,
            ..Rollout::default()
        };
        ro.finish(0.9);
        assert_eq!(ro.returns, vec![0.8]);
        assert_eq!(ro.advantages, vec![0.8 - 0.3]);
    }

    #[test]
    fn config_defaults() {
        let a2c = ActorCriticConfig::a2c();
        assert_eq!(a2c.actor_hidden, vec![64, 64, 64]);
        assert_eq!(a2c.critic_hidden, vec![64, 64]);
        assert_eq!((a2c.learning_rate, a2c.gamma, a2c.n_steps, a2c.n_envs), (5e-4, 0.9, 5, 1));
        let ppo = ActorCriticConfig::ppo();
        assert_eq!(ppo.critic_hidden, vec![64, 64, 64]);
        assert_eq!((ppo.learning_rate, ppo.clip_range, ppo.n_epochs), (1e-4, 0.2, 10));
        let bad = ActorCriticConfig {
            n_envs: 2,
            ..ActorCriticConfig::a2c()
        };
        assert!(ActorCriticAgent::new(bad, 4, 2).is_err());
    }
}
