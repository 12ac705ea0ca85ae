//! One training run: configuration file, resumable federation, artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::AgentConfigs;
use crate::checkpoint::{ModelCheckpoint, CHECKPOINT_VERSION};
use crate::env::{FeatureScaling, RewardParams};
use crate::error::{Error, Result};
use crate::fed::{load_snapshot, write_round_log, FedConfig, Federation};
use crate::manifest::{load_manifest, VideoManifest};
use crate::nn::WeightVector;
use crate::traces::{load_trace_dir, TraceCorpus};

pub const CONFIG_FILE: &str = "config.json";
pub const ROUND_LOG_FILE: &str = "round_log.csv";
pub const BEST_MODEL_FILE: &str = "best_model.json";
pub const FINAL_MODEL_FILE: &str = "final_model.json";
pub const SNAPSHOT_FILE: &str = "state.bin";

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub traces_dir: PathBuf,
    pub manifest_path: PathBuf,
    pub fed: FedConfig,
    pub agents: AgentConfigs,
    pub reward: RewardParams,
    pub scaling: FeatureScaling,
    /// Rounds between resumable state snapshots.
    pub snapshot_every: usize,
}

impl ExperimentConfig {
    pub fn new(traces_dir: PathBuf, manifest_path: PathBuf, fed: FedConfig) -> Self {
        Self {
            traces_dir,
            manifest_path,
            fed,
            agents: AgentConfigs::default(),
            reward: RewardParams::default(),
            scaling: FeatureScaling::default(),
            snapshot_every: 10,
        }
    }

    /// Sets the DQN exploration horizon to the planned number of local steps.
    pub fn resolve(&mut self, num_chunks: usize) {
        self.agents.dqn.anneal_horizon_steps = self.fed.planned_local_steps(num_chunks).max(1);
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rounds: usize,
    pub best_round: usize,
    pub best_validation_reward: f64,
    pub resumed_from: Option<usize>,
}

fn checkpoint(cfg: &ExperimentConfig, fed: &Federation<'_>, weights: &WeightVector, round: usize, validation: Option<f64>) -> ModelCheckpoint {
    ModelCheckpoint {
        version: CHECKPOINT_VERSION,
        algo: cfg.fed.algo,
        specs: fed.specs().to_vec(),
        scaling: cfg.scaling,
        weights: weights.clone(),
        seed: cfg.fed.seed,
        round,
        validation_reward: validation,
    }
}

/// Loads the corpus and manifest named by `cfg` and runs it into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let corpus = load_trace_dir(&cfg.traces_dir)?;
    let manifest = load_manifest(&cfg.manifest_path)?;
    run_experiment_with(cfg, &corpus, &manifest, out_dir)
}

/// Runs (or resumes) a federation and writes its artifacts. A directory
/// holding a different configuration is refused; a finished run is a no-op
/// apart from rewriting its artifacts.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    corpus: &TraceCorpus,
    manifest: &VideoManifest,
    out_dir: &Path,
) -> Result<RunSummary> {
    if cfg.snapshot_every == 0 {
        return Err(Error::param("snapshot_every must be positive"));
    }
    fs::create_dir_all(out_dir)?;
    let config_path = out_dir.join(CONFIG_FILE);
    if config_path.exists() {
        let existing = ExperimentConfig::load(&config_path)?;
        if &existing != cfg {
            return Err(Error::State(format!(
                "{} holds a run with a different configuration",
                out_dir.display()
            )));
        }
    } else {
        cfg.save(&config_path)?;
    }

    let snapshot_path = out_dir.join(SNAPSHOT_FILE);
    let mut resumed_from = None;
    let mut fed = if snapshot_path.exists() {
        let state = load_snapshot(&snapshot_path)?;
        if state.config != cfg.fed || state.agent_configs != cfg.agents {
            return Err(Error::State("snapshot does not match the configuration".into()));
        }
        resumed_from = Some(state.round);
        Federation::from_state(state, cfg.reward, cfg.scaling, corpus, manifest)?
    } else {
        Federation::new(cfg.fed.clone(), cfg.agents.clone(), cfg.reward, cfg.scaling, corpus, manifest)?
    };

    let log_path = out_dir.join(ROUND_LOG_FILE);
    let every = cfg.snapshot_every;
    fed.run_with(|f| {
        if f.round() % every == 0 || f.is_finished() {
            write_round_log(f.logs(), &log_path)?;
            f.save_snapshot(&snapshot_path)?;
        }
        Ok(())
    })?;
    write_round_log(fed.logs(), &log_path)?;

    let best = fed
        .best()
        .cloned()
        .ok_or_else(|| Error::State("run finished without a validated model".into()))?;
    checkpoint(cfg, &fed, &best.weights, best.round, Some(best.validation_reward))
        .save(&out_dir.join(BEST_MODEL_FILE))?;
    let last_validation = fed.logs().last().and_then(|l| l.validation_reward);
    checkpoint(cfg, &fed, fed.global(), fed.round(), last_validation)
        .save(&out_dir.join(FINAL_MODEL_FILE))?;
    if !snapshot_path.exists() {
        fed.save_snapshot(&snapshot_path)?;
    }

    Ok(RunSummary {
        out_dir: out_dir.to_path_buf(),
        rounds: fed.round(),
        best_round: best.round,
        best_validation_reward: best.validation_reward,
        resumed_from,
    })
}
