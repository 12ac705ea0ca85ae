//! Model checkpoints: JSON files carrying the network layout, feature
//! scaling and flat weights, so a policy can be rebuilt without the run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{Algo, GreedyPolicy};
use crate::env::FeatureScaling;
use crate::error::{Error, Result};
use crate::nn::{layout_hash, MlpSpec, WeightVector};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub version: u32,
    pub algo: Algo,
    /// Networks in weight-vector order; the first one acts.
    pub specs: Vec<MlpSpec>,
    pub scaling: FeatureScaling,
    pub weights: WeightVector,
    pub seed: u64,
    pub round: usize,
    pub validation_reward: Option<f64>,
}

impl ModelCheckpoint {
    pub fn policy(&self) -> Result<GreedyPolicy> {
        GreedyPolicy::from_weights(&self.specs, &self.weights, self.scaling)
    }

    fn check(&self, origin: &Path) -> Result<()> {
        let fail = |msg: String| Error::parse(origin, 0, msg);
        if self.version != CHECKPOINT_VERSION {
            return Err(fail(format!("unsupported checkpoint version {}", self.version)));
        }
        let expected: usize = self.specs.iter().map(MlpSpec::num_params).sum();
        if self.weights.len() != expected {
            return Err(fail(format!(
                "{} weights for a layout of {expected} parameters",
                self.weights.len()
            )));
        }
        let specs: Vec<&MlpSpec> = self.specs.iter().collect();
        if self.weights.spec_hash() != layout_hash(&specs) {
            return Err(fail("weights do not match the declared layout".into()));
        }
        if !self.weights.is_finite() {
            return Err(fail("non-finite weights".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        ckpt.check(path)?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::AgentConfigs;
    use crate::rng::substream;

    #[test]
    fn json_roundtrip_is_exact() {
        let cfg = AgentConfigs::default();
        let specs = cfg.model_specs(Algo::Ppo, 22, 7);
        let weights = cfg.initial_weights(Algo::Ppo, 22, 7, &mut substream(5, "init", 0));
        let ckpt = ModelCheckpoint {
            version: CHECKPOINT_VERSION,
            algo: Algo::Ppo,
            specs,
            scaling: FeatureScaling::default(),
            weights,
            seed: 5,
            round: 3,
            validation_reward: Some(0.25),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        ckpt.save(&path).unwrap();
        assert_eq!(ModelCheckpoint::load(&path).unwrap(), ckpt);
        ckpt.policy().unwrap();

        let mut bad = ckpt.clone();
        bad.specs.pop();
        bad.save(&path).unwrap();
        assert!(ModelCheckpoint::load(&path).is_err());
    }
}
