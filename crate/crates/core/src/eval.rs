//! Deterministic policy evaluation over a fixed set of traces.

use serde::{Deserialize, Serialize};

use crate::env::{reward_terms, RewardParams};
use crate::error::{Error, Result};
use crate::manifest::VideoManifest;
use crate::sim::{run_episode, ClientEnvConfig, LevelChooser, StepOutcome};
use crate::traces::{TraceCorpus, TraceGroup};

/// Per-chunk means of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub trace_id: String,
    pub group: TraceGroup,
    pub reward: f64,
    pub utility: f64,
    pub switch_penalty: f64,
    pub rebuffer_s: f64,
}

/// Scores a played episode; returns the per-chunk mean reward, utility,
/// switch penalty and rebuffering time.
pub fn score_episode(
    outcomes: &[StepOutcome],
    manifest: &VideoManifest,
    params: &RewardParams,
) -> (f64, f64, f64, f64) {
    let mut prev = None;
    let (mut reward, mut utility, mut switch, mut rebuffer) = (0.0, 0.0, 0.0, 0.0);
    for o in outcomes {
        let terms = reward_terms(prev, o.level, o.rebuffer_s, params, manifest.ladder());
        reward += terms.total();
        utility += terms.utility;
        switch += terms.switch_penalty;
        rebuffer += o.rebuffer_s;
        prev = Some(o.level);
    }
    let n = outcomes.len().max(1) as f64;
    (reward / n, utility / n, switch / n, rebuffer / n)
}

/// Which traces to play, and the network conditions for each. Every trace
/// is played once from offset 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPlan {
    pub traces: Vec<usize>,
    pub envs: Vec<ClientEnvConfig>,
}

impl EvalPlan {
    /// Assigns the `j`-th trace of each group the RTT `rtts_by_group[g][j % len]`.
    pub fn new(
        corpus: &TraceCorpus,
        traces: Vec<usize>,
        rtts_by_group: &[Vec<f64>; 4],
        max_buffer_s: f64,
    ) -> Result<Self> {
        let mut seen = [0usize; 4];
        let mut envs = Vec::with_capacity(traces.len());
        for &i in &traces {
            let trace = corpus
                .traces()
                .get(i)
                .ok_or_else(|| Error::param(format!("trace index {i} out of range")))?;
            let g = trace.group();
            let rtts = &rtts_by_group[g.index()];
            let rtt_s = if rtts.is_empty() {
                0.0
            } else {
                rtts[seen[g.index()] % rtts.len()]
            };
            seen[g.index()] += 1;
            envs.push(ClientEnvConfig {
                trace_group: g,
                rtt_s,
                max_buffer_s,
            });
        }
        Ok(Self { traces, envs })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

/// Plays every trace in `plan` with a fresh chooser from `make_policy`.
pub fn evaluate<C, F>(
    make_policy: F,
    corpus: &TraceCorpus,
    plan: &EvalPlan,
    manifest: &VideoManifest,
    params: &RewardParams,
) -> Result<Vec<EpisodeMetrics>>
where
    C: LevelChooser,
    F: Fn() -> C,
{
    plan.traces
        .iter()
        .zip(&plan.envs)
        .map(|(&i, env)| {
            let trace = &corpus.traces()[i];
            let mut policy = make_policy();
            let outcomes = run_episode(manifest, trace, *env, 0.0, &mut policy)?;
            let (reward, utility, switch_penalty, rebuffer_s) =
                score_episode(&outcomes, manifest, params);
            Ok(EpisodeMetrics {
                trace_id: trace.id().to_string(),
                group: trace.group(),
                reward,
                utility,
                switch_penalty,
                rebuffer_s,
            })
        })
        .collect()
}

/// Means over a set of episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QoeStats {
    pub episodes: usize,
    pub reward: f64,
    pub utility: f64,
    pub switch_penalty: f64,
    pub rebuffer_s: f64,
}

impl QoeStats {
    pub fn from_episodes<'a>(episodes: impl IntoIterator<Item = &'a EpisodeMetrics>) -> Self {
        let mut s = QoeStats::default();
        for e in episodes {
            s.episodes += 1;
            s.reward += e.reward;
            s.utility += e.utility;
            s.switch_penalty += e.switch_penalty;
            s.rebuffer_s += e.rebuffer_s;
        }
        if s.episodes > 0 {
            let n = s.episodes as f64;
            s.reward /= n;
            s.utility /= n;
            s.switch_penalty /= n;
            s.rebuffer_s /= n;
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub overall: QoeStats,
    /// Indexed by [`TraceGroup::index`]; `episodes == 0` for absent groups.
    pub per_group: [QoeStats; 4],
}

impl EvalSummary {
    pub fn new(episodes: &[EpisodeMetrics]) -> Self {
        Self {
            overall: QoeStats::from_episodes(episodes),
            per_group: TraceGroup::ALL
                .map(|g| QoeStats::from_episodes(episodes.iter().filter(|e| e.group == g))),
        }
    }

    pub fn group(&self, group: TraceGroup) -> &QoeStats {
        &self.per_group[group.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{BaselineConfig, BaselineKind, BaselinePolicy};
    use crate::env::utility;
    use crate::manifest::{generate_manifest, QualityLadder};
    use crate::traces::{BandwidthTrace, Sample};

    fn flat(id: &str, group: TraceGroup, mbps: f64) -> BandwidthTrace {
        let samples = (0..40)
            .map(|i| Sample {
                t_s: i as f64 * 10.0,
                mbps,
            })
            .collect();
        BandwidthTrace::new(id, group, samples).unwrap()
    }

    #[test]
    fn constant_on_fast_link_is_steady() {
        let m = generate_manifest(&QualityLadder::default(), 60, 4.0, (0.6, 0.6), 0).unwrap();
        let corpus = TraceCorpus::new(vec![flat("a", TraceGroup::FccHigh, 6.0)]).unwrap();
        let rtts = [vec![0.05], vec![], vec![], vec![]];
        let plan = EvalPlan::new(&corpus, vec![0], &rtts, 20.0).unwrap();
        let cfg = BaselineConfig::default();
        let make = || BaselinePolicy::new(BaselineKind::Constant, &cfg, &m, 20.0);
        let params = RewardParams::default();
        let out = run_episode(&m, &corpus.traces()[0], plan.envs[0], 0.0, &mut make()).unwrap();
        // Only the first chunk stalls: the buffer starts empty.
        assert!(out[0].rebuffer_s > 0.0);
        assert!(out[1..].iter().all(|o| o.rebuffer_s == 0.0));
        let q = utility(5000, m.ladder());
        let rewards: Vec<f64> = {
            let mut prev = None;
            out.iter()
                .map(|o| {
                    let r = reward_terms(prev, o.level, o.rebuffer_s, &params, m.ladder()).total();
                    prev = Some(o.level);
                    r
                })
                .collect()
        };
        assert!(rewards[1..].iter().all(|&r| r == q));
        let metrics = evaluate(make, &corpus, &plan, &m, &params).unwrap();
        let expected = (q - out[0].rebuffer_s + 59.0 * q) / 60.0;
        assert!((metrics[0].reward - expected).abs() < 1e-12);
    }

    #[test]
    fn group_means_aggregate_to_overall() {
        let eps: Vec<EpisodeMetrics> = [(TraceGroup::FccHigh, 1.0), (TraceGroup::FccHigh, 3.0), (TraceGroup::LteLow, -1.0)]
            .iter()
            .map(|&(group, reward)| EpisodeMetrics {
                trace_id: String::new(),
                group,
                reward,
                utility: reward,
                switch_penalty: 0.0,
                rebuffer_s: 0.0,
            })
            .collect();
        let s = EvalSummary::new(&eps);
        assert_eq!(s.group(TraceGroup::FccHigh).reward, 2.0);
        assert_eq!(s.group(TraceGroup::FccLow).episodes, 0);
        let weighted: f64 = s.per_group.iter().map(|g| g.reward * g.episodes as f64).sum();
        assert!((weighted / 3.0 - s.overall.reward).abs() < 1e-12);
    }
}
