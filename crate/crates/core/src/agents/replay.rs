use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed-capacity FIFO experience store, kept as flat arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayMemory {
    capacity: usize,
    dim: usize,
    states: Vec<f64>,
    next_states: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    terminals: Vec<bool>,
    /// Slot overwritten by the next push once the memory is full.
    head: usize,
}

/// A sampled minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub states: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub terminals: Vec<bool>,
}

impl ReplayMemory {
    pub fn new(capacity: usize, dim: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 {
            return Err(Error::param("replay memory needs positive capacity and dimension"));
        }
        Ok(Self {
            capacity,
            dim,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            terminals: Vec::new(),
            head: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, state: &[f64], action: usize, reward: f64, next_state: &[f64], terminal: bool) {
        assert_eq!(state.len(), self.dim, "state width");
        assert_eq!(next_state.len(), self.dim, "next state width");
        if self.len() < self.capacity {
            self.states.extend_from_slice(state);
            self.next_states.extend_from_slice(next_state);
            self.actions.push(action);
            self.rewards.push(reward);
            self.terminals.push(terminal);
        } else {
            let i = self.head;
            let span = i * self.dim..(i + 1) * self.dim;
            self.states[span.clone()].copy_from_slice(state);
            self.next_states[span].copy_from_slice(next_state);
            self.actions[i] = action;
            self.rewards[i] = reward;
            self.terminals[i] = terminal;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    /// Uniform indices over the current contents, with replacement.
    pub fn sample_indices(&self, batch: usize, rng: &mut impl Rng) -> Vec<usize> {
        assert!(!self.is_empty(), "sampling from an empty replay memory");
        (0..batch).map(|_| rng.random_range(0..self.len())).collect()
    }

    pub fn gather(&self, indices: &[usize]) -> TransitionBatch {
        let d = self.dim;
        let mut states = Array2::zeros((indices.len(), d));
        let mut next_states = Array2::zeros((indices.len(), d));
        for (row, &i) in indices.iter().enumerate() {
            states
                .row_mut(row)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&self.states[i * d..(i + 1) * d]);
            next_states
                .row_mut(row)
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&self.next_states[i * d..(i + 1) * d]);
        }
        TransitionBatch {
            states,
            actions: indices.iter().map(|&i| self.actions[i]).collect(),
            rewards: indices.iter().map(|&i| self.rewards[i]).collect(),
            next_states,
            terminals: indices.iter().map(|&i| self.terminals[i]).collect(),
        }
    }

    pub fn sample(&self, batch: usize, rng: &mut impl Rng) -> TransitionBatch {
        let idx = self.sample_indices(batch, rng);
        self.gather(&idx)
    }

    /// Reward stored in slot `i` (insertion order is not preserved after wrap).
    pub fn reward_at(&self, i: usize) -> f64 {
        self.rewards[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn fifo_eviction() {
        let mut mem = ReplayMemory::new(3, 1).unwrap();
        for k in 0..5 {
            mem.push(&[k as f64], 0, k as f64, &[k as f64], false);
            assert!(mem.len() <= 3);
        }
        let mut kept: Vec<f64> = (0..3).map(|i| mem.reward_at(i)).collect();
        kept.sort_by(f64::total_cmp);
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn gather_copies_rows() {
        let mut mem = ReplayMemory::new(10, 2).unwrap();
        mem.push(&[1.0, 2.0], 1, 0.5, &[3.0, 4.0], true);
        mem.push(&[5.0, 6.0], 0, -0.5, &[7.0, 8.0], false);
        let b = mem.gather(&[1, 0]);
        assert_eq!(b.states.row(0).to_vec(), vec![5.0, 6.0]);
        assert_eq!(b.next_states.row(1).to_vec(), vec![3.0, 4.0]);
        assert_eq!(b.actions, vec![0, 1]);
        assert_eq!(b.terminals, vec![false, true]);
    }

    #[test]
    fn sampling_is_uniform() {
        let n = 50;
        let mut mem = ReplayMemory::new(64, 1).unwrap();
        for k in 0..n {
            mem.push(&[0.0], 0, k as f64, &[0.0], false);
        }
        let mut rng = substream(12, "replay", 0);
        let draws = 100_000;
        let mut counts = vec![0usize; n];
        for i in mem.sample_indices(draws, &mut rng) {
            counts[i] += 1;
        }
        let expected = draws as f64 / n as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
        assert!(p > 0.01, "chi2 {chi2}, p {p}");
    }
}
