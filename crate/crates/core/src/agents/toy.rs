//! Tiny environments with closed-form solutions, used to sanity-check the
//! learners.

use rand::Rng;

use crate::env::{EnvStep, Environment};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Deterministic two-state, two-action MDP with one-hot observations.
/// Episodes start in a uniformly random state and are truncated after
/// `horizon` steps, so the infinite-horizon values still apply.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStateMdp {
    /// `rewards[s][a]`
    pub rewards: [[f64; 2]; 2],
    /// `next[s][a]`
    pub next: [[usize; 2]; 2],
    pub horizon: usize,
    state: usize,
    t: usize,
}

impl TwoStateMdp {
    pub fn new(rewards: [[f64; 2]; 2], next: [[usize; 2]; 2], horizon: usize) -> Self {
        Self {
            rewards,
            next,
            horizon,
            state: 0,
            t: 0,
        }
    }

    pub fn one_hot(state: usize) -> Vec<f64> {
        let mut v = vec![0.0; 2];
        v[state] = 1.0;
        v
    }

    /// Optimal action values by value iteration.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> [[f64; 2]; 2] {
        let mut q = [[0.0_f64; 2]; 2];
        loop {
            let mut next_q = [[0.0; 2]; 2];
            let mut delta: f64 = 0.0;
            for s in 0..2 {
                for a in 0..2 {
                    let s2 = self.next[s][a];
                    next_q[s][a] = self.rewards[s][a] + gamma * q[s2][0].max(q[s2][1]);
                    delta = delta.max((next_q[s][a] - q[s][a]).abs());
                }
            }
            q = next_q;
            if delta < tol {
                return q;
            }
        }
    }
}

impl Environment for TwoStateMdp {
    fn observation_dim(&self) -> usize {
        2
    }

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut SimRng) -> Result<Vec<f64>> {
        self.state = rng.random_range(0..2);
        self.t = 0;
        Ok(Self::one_hot(self.state))
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        if action >= 2 {
            return Err(Error::param(format!("action {action} out of range")));
        }
        let reward = self.rewards[self.state][action];
        self.state = self.next[self.state][action];
        self.t += 1;
        Ok(EnvStep {
            observation: Self::one_hot(self.state),
            reward,
            terminal: false,
            truncated: self.t >= self.horizon,
        })
    }
}

/// One-step bandit with deterministic payoffs and a constant observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandit {
    pub payoffs: Vec<f64>,
}

impl Bandit {
    pub fn new(payoffs: Vec<f64>) -> Self {
        Self { payoffs }
    }

    pub fn observation() -> Vec<f64> {
        vec![1.0]
    }
}

impl Environment for Bandit {
    fn observation_dim(&self) -> usize {
        1
    }

    fn num_actions(&self) -> usize {
        self.payoffs.len()
    }

    fn reset(&mut self, _rng: &mut SimRng) -> Result<Vec<f64>> {
        Ok(Self::observation())
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let reward = *self
            .payoffs
            .get(action)
            .ok_or_else(|| Error::param(format!("action {action} out of range")))?;
        Ok(EnvStep {
            observation: Self::observation(),
            reward,
            terminal: true,
            truncated: false,
        })
    }
}
