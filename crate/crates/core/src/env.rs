//! QoE reward, observation vector and the RL environment over the player.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::{QualityLadder, VideoManifest};
use crate::rng::SimRng;
use crate::sim::{ClientEnvConfig, Player, PlayerState, StepOutcome, HISTORY_LEN};
use crate::traces::BandwidthTrace;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    /// Weight of the quality-switch penalty.
    pub alpha: f64,
    /// Weight of rebuffering seconds.
    pub beta: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            alpha: 2.6,
            beta: 1.0,
        }
    }
}

/// Divisors applied to raw observation components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaling {
    pub throughput_mbps: f64,
    pub download_time_s: f64,
    pub chunk_size_mb: f64,
    pub buffer_s: f64,
    pub chunks_remaining: f64,
    pub bitrate_mbps: f64,
}

impl Default for FeatureScaling {
    fn default() -> Self {
        Self {
            throughput_mbps: 10.0,
            download_time_s: 10.0,
            chunk_size_mb: 10.0,
            buffer_s: 20.0,
            chunks_remaining: 60.0,
            bitrate_mbps: 8.0,
        }
    }
}

/// `ln(bitrate / min bitrate)`.
pub fn utility(bitrate_kbps: u32, ladder: &QualityLadder) -> f64 {
    (f64::from(bitrate_kbps) / f64::from(ladder.min_kbps())).ln()
}

pub fn level_utility(level: usize, ladder: &QualityLadder) -> f64 {
    utility(ladder.bitrate_kbps(level), ladder)
}

/// Per-chunk reward split into its three terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub utility: f64,
    pub switch_penalty: f64,
    pub rebuffer_penalty: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.utility - self.switch_penalty - self.rebuffer_penalty
    }
}

/// Reward terms for downloading at `level` after `prev_level`. The first
/// chunk (`prev_level == None`) carries no switch penalty.
pub fn reward_terms(
    prev_level: Option<usize>,
    level: usize,
    rebuffer_s: f64,
    params: &RewardParams,
    ladder: &QualityLadder,
) -> RewardTerms {
    let q = level_utility(level, ladder);
    let q_prev = prev_level.map_or(q, |p| level_utility(p, ladder));
    RewardTerms {
        utility: q,
        switch_penalty: params.alpha * (q_prev - q).abs(),
        rebuffer_penalty: params.beta * rebuffer_s,
    }
}

pub fn reward(
    prev_level: Option<usize>,
    level: usize,
    rebuffer_s: f64,
    params: &RewardParams,
    ladder: &QualityLadder,
) -> f64 {
    reward_terms(prev_level, level, rebuffer_s, params, ladder).total()
}

/// Raw (unscaled) state observed before choosing the next chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub throughputs_mbps: [f64; HISTORY_LEN],
    pub download_times_s: [f64; HISTORY_LEN],
    pub next_chunk_sizes_mb: Vec<f64>,
    pub buffer_s: f64,
    pub chunks_remaining: usize,
    pub last_bitrate_mbps: f64,
}

impl Observation {
    pub fn dim(num_levels: usize) -> usize {
        2 * HISTORY_LEN + num_levels + 3
    }

    pub fn from_state(state: &PlayerState, manifest: &VideoManifest) -> Self {
        let n = state.chunk_index;
        let next_chunk_sizes_mb = if n < manifest.num_chunks() {
            manifest.chunk_sizes_mb(n).to_vec()
        } else {
            vec![0.0; manifest.num_levels()]
        };
        Self {
            throughputs_mbps: state.history.map(|h| h.throughput_mbps),
            download_times_s: state.history.map(|h| h.download_time_s),
            next_chunk_sizes_mb,
            buffer_s: state.buffer_s,
            chunks_remaining: manifest.num_chunks() - n,
            last_bitrate_mbps: state
                .last_level
                .map_or(0.0, |l| manifest.ladder().bitrate_mbps(l)),
        }
    }

    /// Flattened, scaled feature vector.
    pub fn features(&self, scaling: &FeatureScaling) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.next_chunk_sizes_mb.len()));
        v.extend(self.throughputs_mbps.iter().map(|x| x / scaling.throughput_mbps));
        v.extend(self.download_times_s.iter().map(|x| x / scaling.download_time_s));
        v.extend(self.next_chunk_sizes_mb.iter().map(|x| x / scaling.chunk_size_mb));
        v.push(self.buffer_s / scaling.buffer_s);
        v.push(self.chunks_remaining as f64 / scaling.chunks_remaining);
        v.push(self.last_bitrate_mbps / scaling.bitrate_mbps);
        v
    }
}

pub fn observe(state: &PlayerState, manifest: &VideoManifest, scaling: &FeatureScaling) -> Vec<f64> {
    Observation::from_state(state, manifest).features(scaling)
}

/// One environment transition as seen by a learning agent.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// True end of the episode: no bootstrapping past this step.
    pub terminal: bool,
    /// Episode cut short by a time limit; the next state can still be bootstrapped.
    pub truncated: bool,
}

impl EnvStep {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// Episodic environment with a discrete action space.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn num_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut SimRng) -> Result<Vec<f64>>;
    fn step(&mut self, action: usize) -> Result<EnvStep>;
}

#[derive(Debug, Clone)]
pub struct AbrStep {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terms: RewardTerms,
    pub done: bool,
    pub outcome: StepOutcome,
}

/// Bitrate-selection environment. On [`Environment::reset`] it picks a
/// uniformly random trace from its pool and a uniformly random start offset.
#[derive(Debug, Clone)]
pub struct AbrEnv<'a> {
    manifest: &'a VideoManifest,
    pool: Vec<&'a BandwidthTrace>,
    client: ClientEnvConfig,
    reward: RewardParams,
    scaling: FeatureScaling,
    player: Option<Player<'a>>,
}

impl<'a> AbrEnv<'a> {
    pub fn new(
        manifest: &'a VideoManifest,
        pool: Vec<&'a BandwidthTrace>,
        client: ClientEnvConfig,
        reward: RewardParams,
        scaling: FeatureScaling,
    ) -> Self {
        Self {
            manifest,
            pool,
            client,
            reward,
            scaling,
            player: None,
        }
    }

    pub fn manifest(&self) -> &'a VideoManifest {
        self.manifest
    }

    pub fn player(&self) -> Option<&Player<'a>> {
        self.player.as_ref()
    }

    pub fn reset_on(&mut self, trace: &'a BandwidthTrace, start_offset_s: f64) -> Result<Vec<f64>> {
        let player = Player::reset(self.manifest, trace, self.client, start_offset_s)?;
        let obs = observe(player.state(), self.manifest, &self.scaling);
        self.player = Some(player);
        Ok(obs)
    }

    pub fn step_detailed(&mut self, action: usize) -> Result<AbrStep> {
        let player = self
            .player
            .as_mut()
            .ok_or_else(|| Error::State("environment stepped before reset".into()))?;
        if action >= self.manifest.num_levels() {
            return Err(Error::param(format!(
                "action {action} out of range for {} levels",
                self.manifest.num_levels()
            )));
        }
        let prev = player.state().last_level;
        let outcome = player.download_chunk(action)?;
        let terms = reward_terms(
            prev,
            action,
            outcome.rebuffer_s,
            &self.reward,
            self.manifest.ladder(),
        );
        Ok(AbrStep {
            observation: observe(player.state(), self.manifest, &self.scaling),
            reward: terms.total(),
            terms,
            done: outcome.done,
            outcome,
        })
    }
}

impl Environment for AbrEnv<'_> {
    fn observation_dim(&self) -> usize {
        Observation::dim(self.manifest.num_levels())
    }

    fn num_actions(&self) -> usize {
        self.manifest.num_levels()
    }

    fn reset(&mut self, rng: &mut SimRng) -> Result<Vec<f64>> {
        if self.pool.is_empty() {
            return Err(Error::State("environment has no traces".into()));
        }
        let trace = self.pool[rng.random_range(0..self.pool.len())];
        let offset = rng.random_range(0.0..trace.duration_s());
        self.reset_on(trace, offset)
    }

    fn step(&mut self, action: usize) -> Result<EnvStep> {
        let s = self.step_detailed(action)?;
        Ok(EnvStep {
            observation: s.observation,
            reward: s.reward,
            terminal: s.done,
            truncated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{default_manifest, generate_manifest};
    use crate::traces::{Sample, TraceGroup};

    fn constant_trace(mbps: f64) -> BandwidthTrace {
        BandwidthTrace::new(
            "c",
            TraceGroup::FccHigh,
            (0..32)
                .map(|i| Sample {
                    t_s: 10.0 * i as f64,
                    mbps,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn utility_values() {
        let ladder = QualityLadder::default();
        assert_eq!(utility(700, &ladder), 0.0);
        assert!((utility(8000, &ladder) - 2.436_116_485_618_568).abs() < 1e-12);
        let q: Vec<f64> = (0..7).map(|l| level_utility(l, &ladder)).collect();
        assert!(q.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn reward_formula() {
        let ladder = QualityLadder::default();
        let p = RewardParams::default();
        assert_eq!(reward(Some(0), 0, 0.0, &p, &ladder), 0.0);
        let q_max = (8000.0f64 / 700.0).ln();
        let r = reward(Some(0), 6, 0.0, &p, &ladder);
        assert!((r - (q_max - 2.6 * q_max)).abs() < 1e-12);
        assert!((r - -3.8978).abs() < 1e-4);
        let q3 = (3000.0f64 / 700.0).ln();
        assert_eq!(reward(Some(3), 3, 1.5, &p, &ladder), q3 - 1.5);
        // first chunk: no switch penalty
        assert_eq!(reward(None, 6, 0.0, &p, &ladder), q_max);
    }

    #[test]
    fn fresh_observation() {
        let m = default_manifest(0);
        let t = constant_trace(2.8);
        let mut env = AbrEnv::new(
            &m,
            vec![&t],
            ClientEnvConfig::new(TraceGroup::FccHigh, 0.0),
            RewardParams::default(),
            FeatureScaling::default(),
        );
        let obs = env.reset_on(&t, 0.0).unwrap();
        assert_eq!(obs.len(), 22);
        assert!(obs[..12].iter().all(|&x| x == 0.0));
        assert_eq!(obs[19], 0.0);
        assert_eq!(obs[20], 1.0);
        assert_eq!(obs[21], 0.0);
        for l in 0..7 {
            assert_eq!(obs[12 + l], m.chunk_size_mb(0, l) / 10.0);
        }
    }

    #[test]
    fn observation_after_first_download() {
        let m = generate_manifest(&QualityLadder::default(), 60, 4.0, (1.0, 1.0), 0).unwrap();
        let t = constant_trace(2.8);
        let mut env = AbrEnv::new(
            &m,
            vec![&t],
            ClientEnvConfig::new(TraceGroup::FccHigh, 0.0),
            RewardParams::default(),
            FeatureScaling::default(),
        );
        env.reset_on(&t, 0.0).unwrap();
        let step = env.step_detailed(0).unwrap();
        let raw = Observation::from_state(env.player().unwrap().state(), &m);
        assert_eq!(raw.throughputs_mbps[HISTORY_LEN - 1], 2.8);
        assert_eq!(raw.download_times_s[HISTORY_LEN - 1], 1.0);
        assert_eq!(raw.buffer_s, 4.0);
        assert_eq!(raw.chunks_remaining, 59);
        assert_eq!(raw.last_bitrate_mbps, 0.7);
        assert_eq!(step.observation[19], 4.0 / 20.0);
        assert_eq!(step.reward, -1.0);
    }

    #[test]
    fn episode_ends_at_sixty_and_rejects_bad_actions() {
        let m = default_manifest(1);
        let t = constant_trace(4.0);
        let mut env = AbrEnv::new(
            &m,
            vec![&t],
            ClientEnvConfig::new(TraceGroup::FccHigh, 0.05),
            RewardParams::default(),
            FeatureScaling::default(),
        );
        let mut rng = crate::rng::substream(0, "test", 0);
        Environment::reset(&mut env, &mut rng).unwrap();
        assert!(matches!(env.step(7), Err(Error::Param(_))));
        for i in 0..60 {
            let s = env.step(i % 7).unwrap();
            assert_eq!(s.terminal, i == 59);
            assert!(s.observation.iter().all(|x| x.is_finite() && *x >= 0.0));
        }
        assert!(env.step(0).is_err());
    }
}
