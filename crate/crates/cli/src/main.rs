use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fedabr::agents::Algo;
use fedabr::baselines::{BaselineConfig, BaselineKind, BaselinePolicy};
use fedabr::checkpoint::ModelCheckpoint;
use fedabr::env::RewardParams;
use fedabr::eval::{evaluate, EvalPlan, EvalSummary};
use fedabr::experiment::{run_experiment, ExperimentConfig};
use fedabr::fed::{read_round_rewards, rtts_by_group, FedConfig, KE_GRID};
use fedabr::manifest::{
    generate_manifest, load_manifest, save_manifest, QualityLadder, DEFAULT_CHUNK_DURATION_S,
    DEFAULT_LADDER_KBPS, DEFAULT_NUM_CHUNKS,
};
use fedabr::report::{convergence_report, write_rows, EvalRow};
use fedabr::sim::DEFAULT_MAX_BUFFER_S;
use fedabr::traces::{
    generate_corpus, load_trace_dir, save_corpus, split_corpus, CorpusSpec, SplitRole,
    TraceCorpus, TraceGroup, DEFAULT_TRAIN_FRACTION,
};

#[derive(Parser)]
#[command(name = "fedabr", version, about = "Federated deep RL for adaptive bitrate streaming")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace corpus with a train/test split.
    GenTraces(GenTracesArgs),
    /// Generate a synthetic video manifest.
    GenManifest(GenManifestArgs),
    /// Run federated training, one run per seed (and per grid cell).
    Train(TrainArgs),
    /// Evaluate checkpoints and baselines on the test traces.
    Eval(EvalArgs),
    /// Smooth round logs into a convergence table.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenTracesArgs {
    #[arg(long, default_value_t = 1000)]
    per_group: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    train_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenManifestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_NUM_CHUNKS)]
    chunks: usize,
    #[arg(long, default_value_t = DEFAULT_CHUNK_DURATION_S)]
    chunk_duration: f64,
    /// Comma-separated encoding bitrates in Kbps.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<u32>>,
    #[arg(long, default_value_t = 0.3)]
    factor_low: f64,
    #[arg(long, default_value_t = 0.9)]
    factor_high: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Rerun a saved config.json exactly; all other run flags are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "dqn")]
    algo: Algo,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    e: usize,
    #[arg(long, default_value_t = 500)]
    rounds: usize,
    /// Run every (K, E) cell of the reference grid instead of --k/--e.
    #[arg(long)]
    grid: bool,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    clients: usize,
    #[arg(long, default_value_t = 10)]
    eval_every: usize,
    /// Train selected clients one after another.
    #[arg(long)]
    sequential: bool,
    #[arg(long)]
    traces: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// `NAME=PATH[,PATH...]`; several paths are runs of the same policy.
    #[arg(long = "model")]
    models: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "constant,thghput,bola")]
    baselines: Vec<BaselineKind>,
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Registry seed and size that fix the per-trace RTTs.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    clients: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Round-log CSVs, one per run.
    #[arg(long, num_args = 1.., required = true)]
    logs: Vec<PathBuf>,
    #[arg(long, default_value_t = 20)]
    window: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenTraces(a) => gen_traces(a),
        Command::GenManifest(a) => gen_manifest(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
    }
}

fn gen_traces(a: GenTracesArgs) -> Result<()> {
    let corpus = generate_corpus(&CorpusSpec::new(a.per_group), a.seed)?;
    let corpus = split_corpus(corpus, a.train_fraction, a.seed)?;
    save_corpus(&corpus, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    println!("group,traces,train,test,mean_mbps");
    for g in TraceGroup::ALL {
        let idx = corpus.group_indices(g);
        let mean = idx.iter().map(|&i| corpus.traces()[i].mean_mbps()).sum::<f64>() / idx.len() as f64;
        println!(
            "{},{},{},{},{:.3}",
            g.dir_name(),
            idx.len(),
            corpus.indices(g, SplitRole::Train).len(),
            corpus.indices(g, SplitRole::Test).len(),
            mean
        );
    }
    Ok(())
}

fn gen_manifest(a: GenManifestArgs) -> Result<()> {
    let ladder = QualityLadder::new(a.ladder.unwrap_or_else(|| DEFAULT_LADDER_KBPS.to_vec()))?;
    let manifest = generate_manifest(
        &ladder,
        a.chunks,
        a.chunk_duration,
        (a.factor_low, a.factor_high),
        a.seed,
    )?;
    if let Some(dir) = a.out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_manifest(&manifest, &a.out)?;
    println!(
        "{} chunks x {} levels, {} s video",
        manifest.num_chunks(),
        manifest.num_levels(),
        manifest.video_duration_s()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    if let Some(path) = &a.config {
        let cfg = ExperimentConfig::load(path)?;
        let s = run_experiment(&cfg, &a.out)?;
        println!("{}: best round {} validation {:.4}", a.out.display(), s.best_round, s.best_validation_reward);
        return Ok(());
    }
    let (Some(traces), Some(manifest_path)) = (a.traces, a.manifest) else {
        bail!("--traces and --manifest are required without --config");
    };
    let num_chunks = load_manifest(&manifest_path)?.num_chunks();
    let cells: Vec<(usize, usize)> = if a.grid { KE_GRID.to_vec() } else { vec![(a.k, a.e)] };
    for (k, e) in cells {
        for &seed in &a.seeds {
            let fed = FedConfig {
                num_clients: a.clients,
                clients_per_round: k,
                local_episodes: e,
                rounds: a.rounds,
                algo: a.algo,
                seed,
                eval_every: a.eval_every,
                parallel: !a.sequential,
                ..FedConfig::default()
            };
            let mut cfg = ExperimentConfig::new(traces.clone(), manifest_path.clone(), fed);
            cfg.resolve(num_chunks);
            let out = a.out.join(format!("{}_k{k}_e{e}", a.algo)).join(format!("seed{seed}"));
            let s = run_experiment(&cfg, &out).with_context(|| format!("run {}", out.display()))?;
            let resumed = s.resumed_from.map(|r| format!(" (resumed at round {r})")).unwrap_or_default();
            println!(
                "{}: {} rounds, best round {} validation {:.4}{resumed}",
                out.display(),
                s.rounds,
                s.best_round,
                s.best_validation_reward
            );
        }
    }
    Ok(())
}

fn summarize<C, F>(make: F, corpus: &TraceCorpus, plan: &EvalPlan, m: &fedabr::manifest::VideoManifest) -> Result<EvalSummary>
where
    C: fedabr::sim::LevelChooser,
    F: Fn() -> C,
{
    let episodes = evaluate(make, corpus, plan, m, &RewardParams::default())?;
    Ok(EvalSummary::new(&episodes))
}

fn eval(a: EvalArgs) -> Result<()> {
    let corpus = load_trace_dir(&a.traces)?;
    let manifest = load_manifest(&a.manifest)?;
    let rtts = rtts_by_group(a.clients, a.seed, FedConfig::default().rtt_range_ms);
    let plan = EvalPlan::new(&corpus, corpus.test_indices(), &rtts, DEFAULT_MAX_BUFFER_S)?;
    if plan.is_empty() {
        bail!("{} has no test traces", a.traces.display());
    }

    let mut rows = Vec::new();
    let mut models: BTreeMap<String, Vec<PathBuf>> = BTreeMap::new();
    for spec in &a.models {
        let (name, paths) = spec
            .split_once('=')
            .with_context(|| format!("expected NAME=PATH[,PATH...], got `{spec}`"))?;
        models
            .entry(name.to_string())
            .or_default()
            .extend(paths.split(',').map(PathBuf::from));
    }
    for (name, paths) in &models {
        let mut runs = Vec::new();
        for path in paths {
            let policy = ModelCheckpoint::load(path)
                .with_context(|| format!("loading {}", path.display()))?
                .policy()?;
            runs.push(summarize(|| policy.clone(), &corpus, &plan, &manifest)?);
        }
        rows.push(EvalRow::from_runs(name.clone(), &runs)?);
    }
    let cfg = BaselineConfig::default();
    for kind in &a.baselines {
        let s = summarize(
            || BaselinePolicy::new(*kind, &cfg, &manifest, DEFAULT_MAX_BUFFER_S),
            &corpus,
            &plan,
            &manifest,
        )?;
        rows.push(EvalRow::from_runs(kind.to_string(), &[s])?);
    }
    write_parent(&a.out)?;
    write_rows(&rows, &a.out)?;
    println!("policy,reward,fcc_high,fcc_low,lte_high,lte_low");
    for r in &rows {
        println!(
            "{},{:.3}±{:.3},{:.3},{:.3},{:.3},{:.3}",
            r.policy, r.reward_mean, r.reward_std, r.fcc_high_mean, r.fcc_low_mean, r.lte_high_mean, r.lte_low_mean
        );
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let runs = a
        .logs
        .iter()
        .map(|p| Ok(read_round_rewards(p)?.into_iter().map(|(_, r)| r).collect()))
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let rows = convergence_report(&runs, a.window);
    write_parent(&a.out)?;
    write_rows(&rows, &a.out)?;
    println!("{} rounds over {} runs -> {}", rows.len(), runs.len(), a.out.display());
    Ok(())
}

fn write_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(())
}
