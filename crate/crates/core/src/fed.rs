//! Synchronous FedAvg over simulated streaming clients.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentConfigs, Algo, GreedyPolicy, LocalUpdate};
use crate::env::{AbrEnv, FeatureScaling, Observation, RewardParams};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalPlan, EvalSummary};
use crate::manifest::VideoManifest;
use crate::nn::{MlpSpec, WeightVector};
use crate::rng::{
    substream, SimRng, STREAM_CLIENT, STREAM_INIT, STREAM_RTT, STREAM_SELECTION, STREAM_VALIDATION,
};
use crate::sim::{ClientEnvConfig, DEFAULT_MAX_BUFFER_S};
use crate::traces::{SplitRole, TraceCorpus, TraceGroup};

/// The (K, E) cells of the reference experiment grid.
pub const KE_GRID: [(usize, usize); 5] = [(5, 10), (10, 5), (10, 10), (10, 20), (20, 10)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub num_clients: usize,
    /// `K`, clients selected per round.
    pub clients_per_round: usize,
    /// `E`, local episodes per selected client.
    pub local_episodes: usize,
    /// `T`, global rounds.
    pub rounds: usize,
    pub algo: Algo,
    pub seed: u64,
    pub rtt_range_ms: (f64, f64),
    pub max_buffer_s: f64,
    /// Fraction of each group's training traces held out for model selection.
    pub validation_fraction: f64,
    /// Rounds between validation passes over the global model.
    pub eval_every: usize,
    /// Train selected clients on the rayon pool.
    pub parallel: bool,
}

impl Default for FedConfig {
    fn default() -> Self {
        Self {
            num_clients: 100,
            clients_per_round: 10,
            local_episodes: 10,
            rounds: 500,
            algo: Algo::Dqn,
            seed: 0,
            rtt_range_ms: (20.0, 200.0),
            max_buffer_s: DEFAULT_MAX_BUFFER_S,
            validation_fraction: 0.1,
            eval_every: 10,
            parallel: true,
        }
    }
}

impl FedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::param("need at least one client"));
        }
        if self.clients_per_round == 0 || self.clients_per_round > self.num_clients {
            return Err(Error::param(format!(
                "clients per round must be in 1..={}, got {}",
                self.num_clients, self.clients_per_round
            )));
        }
        if self.local_episodes == 0 {
            return Err(Error::param("local episodes must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::param("eval_every must be positive"));
        }
        let (lo, hi) = self.rtt_range_ms;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::param(format!("bad rtt range {lo}..{hi} ms")));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::param("validation fraction must be in (0, 1)"));
        }
        Ok(())
    }

    /// Expected local environment steps of one client over the whole run.
    pub fn planned_local_steps(&self, num_chunks: usize) -> u64 {
        let share = self.clients_per_round as f64 / self.num_clients as f64;
        (self.rounds as f64 * share * self.local_episodes as f64 * num_chunks as f64).ceil() as u64
    }
}

/// Client RTTs in seconds, uniform over `range_ms`, one substream per client.
pub fn client_rtts(num_clients: usize, seed: u64, range_ms: (f64, f64)) -> Vec<f64> {
    (0..num_clients)
        .map(|i| {
            let mut rng = substream(seed, STREAM_RTT, i as u64);
            let ms = if range_ms.1 > range_ms.0 {
                rng.random_range(range_ms.0..=range_ms.1)
            } else {
                range_ms.0
            };
            ms / 1000.0
        })
        .collect()
}

/// Client `i` streams over traces of group `i % 4`.
pub fn client_group(i: usize) -> TraceGroup {
    TraceGroup::ALL[i % TraceGroup::ALL.len()]
}

/// RTTs of each group's clients, in client order.
pub fn rtts_by_group(num_clients: usize, seed: u64, range_ms: (f64, f64)) -> [Vec<f64>; 4] {
    let mut out: [Vec<f64>; 4] = Default::default();
    for (i, rtt) in client_rtts(num_clients, seed, range_ms).into_iter().enumerate() {
        out[client_group(i).index()].push(rtt);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientSpec {
    pub id: usize,
    pub env: ClientEnvConfig,
    /// Corpus indices of the client's training traces.
    pub pool: Vec<usize>,
}

/// Static description of all clients plus the held-out validation traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientRegistry {
    clients: Vec<ClientSpec>,
    validation: Vec<usize>,
    rtts_by_group: [Vec<f64>; 4],
}

impl ClientRegistry {
    pub fn build(corpus: &TraceCorpus, config: &FedConfig) -> Result<Self> {
        if !corpus.is_split() {
            return Err(Error::Split("corpus has no train/test split".into()));
        }
        let mut validation = Vec::new();
        let mut pools: [Vec<usize>; 4] = Default::default();
        for g in TraceGroup::ALL {
            let mut train = corpus.indices(g, SplitRole::Train);
            let n = train.len();
            let n_val = if n >= 2 {
                ((config.validation_fraction * n as f64).round() as usize).clamp(1, n - 1)
            } else {
                0
            };
            let mut rng = substream(config.seed, STREAM_VALIDATION, g.index() as u64);
            train.shuffle(&mut rng);
            let mut held: Vec<usize> = train.drain(..n_val).collect();
            held.sort_unstable();
            train.sort_unstable();
            validation.extend(held);
            pools[g.index()] = train;
        }
        validation.sort_unstable();

        let rtts = client_rtts(config.num_clients, config.seed, config.rtt_range_ms);
        let clients = rtts
            .iter()
            .enumerate()
            .map(|(id, &rtt_s)| {
                let group = client_group(id);
                let pool = pools[group.index()].clone();
                if pool.is_empty() {
                    return Err(Error::Split(format!(
                        "client {id} has no training traces in group {group}"
                    )));
                }
                Ok(ClientSpec {
                    id,
                    env: ClientEnvConfig {
                        trace_group: group,
                        rtt_s,
                        max_buffer_s: config.max_buffer_s,
                    },
                    pool,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            clients,
            validation,
            rtts_by_group: rtts_by_group(config.num_clients, config.seed, config.rtt_range_ms),
        })
    }

    pub fn clients(&self) -> &[ClientSpec] {
        &self.clients
    }

    pub fn len(&self) -> usize {
        self.clients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clients.is_empty()
    }

    pub fn validation(&self) -> &[usize] {
        &self.validation
    }

    pub fn rtts_by_group(&self) -> &[Vec<f64>; 4] {
        &self.rtts_by_group
    }
}

/// Uniform sample of `k` distinct client ids, ascending.
pub fn select_clients(num_clients: usize, k: usize, rng: &mut SimRng) -> Result<Vec<usize>> {
    if k == 0 || k > num_clients {
        return Err(Error::param(format!("cannot select {k} of {num_clients} clients")));
    }
    let mut ids = rand::seq::index::sample(rng, num_clients, k).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Elementwise arithmetic mean.
pub fn average_weights(vectors: &[WeightVector]) -> Result<WeightVector> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::param("cannot average an empty set of weights"))?;
    let mut sum = vec![0.0; first.len()];
    for v in vectors {
        if v.spec_hash() != first.spec_hash() || v.len() != first.len() {
            return Err(Error::Shape(format!(
                "mixed weight layouts: {:016x}/{} vs {:016x}/{}",
                first.spec_hash(),
                first.len(),
                v.spec_hash(),
                v.len()
            )));
        }
        for (s, x) in sum.iter_mut().zip(v.values()) {
            *s += x;
        }
    }
    let k = vectors.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(WeightVector::new(sum, first.spec_hash()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based round number.
    pub round: usize,
    pub clients: Vec<usize>,
    /// Mean per-chunk training reward of each selected client.
    pub client_rewards: Vec<f64>,
    pub global_reward: f64,
    /// Validation mean reward of the aggregated model, on evaluation rounds.
    pub validation_reward: Option<f64>,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestModel {
    pub round: usize,
    pub validation_reward: f64,
    pub weights: WeightVector,
}

/// Everything that changes while training; enough to resume a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FedState {
    pub config: FedConfig,
    pub agent_configs: AgentConfigs,
    pub round: usize,
    pub global: WeightVector,
    pub agents: Vec<Agent>,
    pub client_rngs: Vec<SimRng>,
    pub logs: Vec<RoundLog>,
    pub best: Option<BestModel>,
}

pub struct Federation<'a> {
    corpus: &'a TraceCorpus,
    manifest: &'a VideoManifest,
    reward: RewardParams,
    scaling: FeatureScaling,
    registry: ClientRegistry,
    validation_plan: EvalPlan,
    specs: Vec<MlpSpec>,
    state: FedState,
}

impl<'a> Federation<'a> {
    pub fn new(
        config: FedConfig,
        agent_configs: AgentConfigs,
        reward: RewardParams,
        scaling: FeatureScaling,
        corpus: &'a TraceCorpus,
        manifest: &'a VideoManifest,
    ) -> Result<Self> {
        config.validate()?;
        let obs_dim = Observation::dim(manifest.num_levels());
        let n_actions = manifest.num_levels();
        let mut init_rng = substream(config.seed, STREAM_INIT, 0);
        let global = agent_configs.initial_weights(config.algo, obs_dim, n_actions, &mut init_rng);
        let agents = (0..config.num_clients)
            .map(|_| agent_configs.build_agent(config.algo, obs_dim, n_actions))
            .collect::<Result<Vec<_>>>()?;
        let client_rngs = (0..config.num_clients)
            .map(|i| substream(config.seed, STREAM_CLIENT, i as u64))
            .collect();
        let state = FedState {
            config,
            agent_configs,
            round: 0,
            global,
            agents,
            client_rngs,
            logs: Vec::new(),
            best: None,
        };
        Self::from_state(state, reward, scaling, corpus, manifest)
    }

    /// Rebuilds a federation around saved state.
    pub fn from_state(
        state: FedState,
        reward: RewardParams,
        scaling: FeatureScaling,
        corpus: &'a TraceCorpus,
        manifest: &'a VideoManifest,
    ) -> Result<Self> {
        state.config.validate()?;
        if state.agents.len() != state.config.num_clients
            || state.client_rngs.len() != state.config.num_clients
        {
            return Err(Error::State("client state does not match num_clients".into()));
        }
        let registry = ClientRegistry::build(corpus, &state.config)?;
        if registry.validation().is_empty() {
            return Err(Error::Split("no validation traces".into()));
        }
        let validation_plan = EvalPlan::new(
            corpus,
            registry.validation().to_vec(),
            registry.rtts_by_group(),
            state.config.max_buffer_s,
        )?;
        let specs = state.agent_configs.model_specs(
            state.config.algo,
            Observation::dim(manifest.num_levels()),
            manifest.num_levels(),
        );
        Ok(Self {
            corpus,
            manifest,
            reward,
            scaling,
            registry,
            validation_plan,
            specs,
            state,
        })
    }

    pub fn config(&self) -> &FedConfig {
        &self.state.config
    }

    pub fn registry(&self) -> &ClientRegistry {
        &self.registry
    }

    pub fn state(&self) -> &FedState {
        &self.state
    }

    pub fn into_state(self) -> FedState {
        self.state
    }

    pub fn round(&self) -> usize {
        self.state.round
    }

    pub fn is_finished(&self) -> bool {
        self.state.round >= self.state.config.rounds
    }

    pub fn global(&self) -> &WeightVector {
        &self.state.global
    }

    pub fn logs(&self) -> &[RoundLog] {
        &self.state.logs
    }

    pub fn best(&self) -> Option<&BestModel> {
        self.state.best.as_ref()
    }

    pub fn specs(&self) -> &[MlpSpec] {
        &self.specs
    }

    pub fn greedy_policy(&self, weights: &WeightVector) -> Result<GreedyPolicy> {
        GreedyPolicy::from_weights(&self.specs, weights, self.scaling)
    }

    /// Mean validation reward of `weights` under the greedy policy.
    pub fn validate_weights(&self, weights: &WeightVector) -> Result<f64> {
        let policy = self.greedy_policy(weights)?;
        let episodes = evaluate(
            || policy.clone(),
            self.corpus,
            &self.validation_plan,
            self.manifest,
            &self.reward,
        )?;
        Ok(EvalSummary::new(&episodes).overall.reward)
    }

    fn train_client(
        &self,
        id: usize,
        agent: &mut Agent,
        rng: &mut SimRng,
        global: &WeightVector,
    ) -> Result<LocalUpdate> {
        let spec = &self.registry.clients()[id];
        let pool = spec.pool.iter().map(|&i| &self.corpus.traces()[i]).collect();
        let mut env = AbrEnv::new(self.manifest, pool, spec.env, self.reward, self.scaling);
        let update = agent.train_episodes(&mut env, global, self.state.config.local_episodes, rng)?;
        if !update.weights.is_finite() {
            return Err(Error::Client {
                client: id,
                msg: "local training produced non-finite weights".into(),
            });
        }
        Ok(update)
    }

    /// Runs one round: select, broadcast, train locally, average.
    pub fn run_round(&mut self) -> Result<&RoundLog> {
        if self.is_finished() {
            return Err(Error::State("all rounds already run".into()));
        }
        let started = Instant::now();
        let round = self.state.round + 1;
        let cfg = self.state.config.clone();
        let mut sel_rng = substream(cfg.seed, STREAM_SELECTION, round as u64);
        let selected = select_clients(cfg.num_clients, cfg.clients_per_round, &mut sel_rng)?;
        let mut mask = vec![false; cfg.num_clients];
        for &i in &selected {
            mask[i] = true;
        }

        // Take the client state out so the worker closures can borrow `self`.
        let global = self.state.global.clone();
        let mut agents = std::mem::take(&mut self.state.agents);
        let mut rngs = std::mem::take(&mut self.state.client_rngs);
        let this = &*self;
        let work = |(id, (agent, rng)): (usize, (&mut Agent, &mut SimRng))| {
            mask[id].then(|| (id, this.train_client(id, agent, rng, &global)))
        };
        let results: Vec<(usize, Result<LocalUpdate>)> = if cfg.parallel {
            agents
                .par_iter_mut()
                .zip(rngs.par_iter_mut())
                .enumerate()
                .filter_map(work)
                .collect()
        } else {
            agents
                .iter_mut()
                .zip(rngs.iter_mut())
                .enumerate()
                .filter_map(work)
                .collect()
        };
        self.state.agents = agents;
        self.state.client_rngs = rngs;

        let mut updates = Vec::with_capacity(results.len());
        for (_, r) in results {
            updates.push(r?);
        }
        let weights: Vec<WeightVector> = updates.iter().map(|u| u.weights.clone()).collect();
        let new_global = average_weights(&weights)?;
        let client_rewards: Vec<f64> = updates.iter().map(LocalUpdate::mean_reward).collect();
        let global_reward = client_rewards.iter().sum::<f64>() / client_rewards.len() as f64;

        let validation_reward = if round % cfg.eval_every == 0 || round == cfg.rounds {
            let v = self.validate_weights(&new_global)?;
            let better = self.state.best.as_ref().is_none_or(|b| v > b.validation_reward);
            if better {
                self.state.best = Some(BestModel {
                    round,
                    validation_reward: v,
                    weights: new_global.clone(),
                });
            }
            Some(v)
        } else {
            None
        };

        self.state.global = new_global;
        self.state.round = round;
        self.state.logs.push(RoundLog {
            round,
            clients: selected,
            client_rewards,
            global_reward,
            validation_reward,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
        Ok(self.state.logs.last().expect("just pushed"))
    }

    /// Runs the remaining rounds, calling `after_round` after each.
    pub fn run_with<F>(&mut self, mut after_round: F) -> Result<()>
    where
        F: FnMut(&Federation<'a>) -> Result<()>,
    {
        while !self.is_finished() {
            self.run_round()?;
            after_round(self)?;
        }
        Ok(())
    }

    pub fn run(&mut self) -> Result<()> {
        self.run_with(|_| Ok(()))
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(fs::File::create(&tmp)?);
            bincode::serialize_into(&mut w, &self.state)?;
        }
        fs::rename(tmp, path)?;
        Ok(())
    }
}

pub fn load_snapshot(path: &Path) -> Result<FedState> {
    let r = BufReader::new(fs::File::open(path)?);
    Ok(bincode::deserialize_from(r)?)
}

/// Round log as CSV: `round,client_ids,client_rewards,global_reward,validation_reward`,
/// with `;`-separated lists. Wall time is left out so logs compare exactly.
pub fn write_round_log(logs: &[RoundLog], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["round", "client_ids", "client_rewards", "global_reward", "validation_reward"])?;
    for log in logs {
        let ids: Vec<String> = log.clients.iter().map(ToString::to_string).collect();
        let rewards: Vec<String> = log.client_rewards.iter().map(ToString::to_string).collect();
        w.write_record([
            log.round.to_string(),
            ids.join(";"),
            rewards.join(";"),
            log.global_reward.to_string(),
            log.validation_reward.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the `round` and `global_reward` columns of a round log.
pub fn read_round_rewards(path: &Path) -> Result<Vec<(usize, f64)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse_err = |msg: &str| Error::parse(path, line + 2, msg);
        let round = rec
            .get(0)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad round"))?;
        let reward = rec
            .get(3)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad global_reward"))?;
        out.push((round, reward));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_identities() {
        let v = WeightVector::new(vec![1.0, -2.0, 3.5], 7);
        assert_eq!(average_weights(&[v.clone(), v.clone(), v.clone()]).unwrap(), v);
        let neg = WeightVector::new(v.values().iter().map(|x| -x).collect(), 7);
        assert!(average_weights(&[v.clone(), neg]).unwrap().values().iter().all(|&x| x == 0.0));
        assert!(matches!(average_weights(&[]), Err(Error::Param(_))));
        let other = WeightVector::new(vec![0.0; 3], 8);
        assert!(matches!(average_weights(&[v, other]), Err(Error::Shape(_))));
    }

    #[test]
    fn selection() {
        let mut rng = substream(1, "sel", 0);
        assert_eq!(select_clients(6, 6, &mut rng).unwrap(), vec![0, 1, 2, 3, 4, 5]);
        let a = select_clients(100, 10, &mut substream(9, "sel", 3)).unwrap();
        let b = select_clients(100, 10, &mut substream(9, "sel", 3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 10);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(select_clients(3, 4, &mut rng).is_err());
        assert!(select_clients(3, 0, &mut rng).is_err());
    }

    #[test]
    fn rtts_in_range_and_grouped() {
        let rtts = client_rtts(100, 4, (20.0, 200.0));
        assert!(rtts.iter().all(|&r| (0.02..=0.2).contains(&r)));
        let by_group = rtts_by_group(100, 4, (20.0, 200.0));
        assert!(by_group.iter().all(|g| g.len() == 25));
        assert_eq!(by_group[1][0], rtts[1]);
        assert_eq!(by_group[1][1], rtts[5]);
    }

    #[test]
    fn planned_steps() {
        let cfg = FedConfig::default();
        assert_eq!(cfg.planned_local_steps(60), 500 * 10 * 60 / 10);
        assert!(FedConfig { clients_per_round: 101, ..FedConfig::default() }.validate().is_err());
    }
}
