use crate::env::{observe, FeatureScaling};
use crate::error::{Error, Result};
use crate::manifest::VideoManifest;
use crate::nn::{argmax, Mlp, MlpSpec, WeightVector};
use crate::sim::{LevelChooser, PlayerState};

/// Deterministic evaluation policy: argmax of the Q-values (DQN) or of the
/// actor's logits (A2C/PPO). Ties go to the lowest level.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedyPolicy {
    net: Mlp,
    scaling: FeatureScaling,
}

impl GreedyPolicy {
    pub fn new(net: Mlp, scaling: FeatureScaling) -> Self {
        Self { net, scaling }
    }

    /// Builds the policy from exchanged weights; `specs` lists every network
    /// in the vector and the first one chooses actions.
    pub fn from_weights(
        specs: &[MlpSpec],
        weights: &WeightVector,
        scaling: FeatureScaling,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Shape("no network specs".into()));
        }
        let mut nets: Vec<Mlp> = specs.iter().cloned().map(Mlp::zeros).collect();
        weights.load_into(&mut nets.iter_mut().collect::<Vec<_>>())?;
        Ok(Self::new(nets.swap_remove(0), scaling))
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn act(&self, features: &[f64]) -> usize {
        argmax(&self.net.predict_logits(features))
    }
}

impl LevelChooser for GreedyPolicy {
    fn choose(&mut self, state: &PlayerState, manifest: &VideoManifest) -> usize {
        self.act(&observe(state, manifest, &self.scaling))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{OutputHead, WeightVector};
    use crate::rng::substream;

    #[test]
    fn uniform_outputs_pick_lowest() {
        let spec = MlpSpec::new(3, &[4], 5, OutputHead::Linear);
        let p = GreedyPolicy::new(Mlp::zeros(spec), FeatureScaling::default());
        assert_eq!(p.act(&[0.3, -1.0, 2.0]), 0);
    }

    #[test]
    fn softmax_and_logit_argmax_agree() {
        let mut rng = substream(4, "greedy", 0);
        let spec = MlpSpec::new(3, &[8], 6, OutputHead::Softmax);
        let net = Mlp::random(spec, &mut rng);
        let x = [0.1, 0.7, -0.2];
        let p = GreedyPolicy::new(net.clone(), FeatureScaling::default());
        assert_eq!(p.act(&x), argmax(&net.predict(&x)));
        assert_eq!(p.act(&x), p.act(&x));
    }

    #[test]
    fn from_weights_rejects_bad_length() {
        let spec = MlpSpec::new(3, &[4], 2, OutputHead::Linear);
        let w = WeightVector::new(vec![0.0; 3], 0);
        assert!(GreedyPolicy::from_weights(&[spec], &w, FeatureScaling::default()).is_err());
    }
}
