mod common;

use common::rng;
use fedabr::agents::{AgentConfigs, Algo};
use fedabr::baselines::{BaselineConfig, BaselineKind, BaselinePolicy};
use fedabr::env::{FeatureScaling, RewardParams};
use fedabr::eval::{evaluate, EvalPlan};
use fedabr::fed::{
    average_weights, load_snapshot, select_clients, FedConfig, FedState, Federation, RoundLog,
};
use fedabr::manifest::{generate_manifest, QualityLadder, VideoManifest};
use fedabr::nn::WeightVector;
use fedabr::rng::substream;
use fedabr::traces::{generate_corpus, split_corpus, CorpusSpec, TraceCorpus};
use fedabr::Error;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn fixture() -> (TraceCorpus, VideoManifest) {
    let corpus = split_corpus(generate_corpus(&CorpusSpec::new(20), 4).unwrap(), 0.8, 4).unwrap();
    let manifest = generate_manifest(&QualityLadder::default(), 10, 4.0, (0.3, 0.9), 4).unwrap();
    (corpus, manifest)
}

fn small_config(algo: Algo, rounds: usize, k: usize) -> FedConfig {
    FedConfig {
        num_clients: 8,
        clients_per_round: k,
        local_episodes: 2,
        rounds,
        algo,
        seed: 9,
        eval_every: 2,
        ..FedConfig::default()
    }
}

fn federation<'a>(cfg: FedConfig, agents: AgentConfigs, c: &'a TraceCorpus, m: &'a VideoManifest) -> Federation<'a> {
    Federation::new(cfg, agents, RewardParams::default(), FeatureScaling::default(), c, m).unwrap()
}

/// Logs with wall-clock time blanked out.
fn timeless(logs: &[RoundLog]) -> Vec<RoundLog> {
    logs.iter().cloned().map(|l| RoundLog { wall_time_s: 0.0, ..l }).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn average_matches_columnwise_mean(seed in any::<u64>(), k in 1usize..12, len in 1usize..40) {
        let mut r = rng(seed);
        let vectors: Vec<WeightVector> = (0..k)
            .map(|_| WeightVector::new((0..len).map(|_| r.random_range(-3.0..3.0)).collect(), 7))
            .collect();
        let avg = average_weights(&vectors).unwrap();
        for j in 0..len {
            // Reverse-order summation as an independent reference.
            let mean = vectors.iter().rev().map(|v| v.values()[j]).sum::<f64>() / k as f64;
            prop_assert!((avg.values()[j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_clients_average_to_themselves(seed in any::<u64>(), k in 1usize..12) {
        let mut r = rng(seed);
        let w = WeightVector::new((0..30).map(|_| r.random_range(-3.0..3.0)).collect(), 1);
        let avg = average_weights(&vec![w.clone(); k]).unwrap();
        for (a, b) in avg.values().iter().zip(w.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn selection_is_sorted_and_distinct(n in 1usize..60, k_frac in 0.0f64..1.0, round in 1u64..1000) {
        let k = ((k_frac * n as f64) as usize).clamp(1, n);
        let ids = select_clients(n, k, &mut substream(3, "selection", round)).unwrap();
        prop_assert_eq!(ids.len(), k);
        prop_assert!(ids.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(ids.iter().all(|&i| i < n));
    }
}

#[test]
fn averaging_rejects_empty_and_mixed_layouts() {
    assert!(matches!(average_weights(&[]), Err(Error::Param(_))));
    let a = WeightVector::new(vec![1.0, 2.0], 1);
    let b = WeightVector::new(vec![1.0, 2.0], 2);
    assert!(matches!(average_weights(&[a, b]), Err(Error::Shape(_))));
}

#[test]
fn single_client_selection_is_uniform() {
    let n = 10;
    let draws = 5000;
    let mut counts = vec![0usize; n];
    for round in 1..=draws {
        let ids = select_clients(n, 1, &mut substream(0, "selection", round)).unwrap();
        counts[ids[0]] += 1;
    }
    let expected = draws as f64 / n as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((n - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 1e-3, "chi2 {chi2} p {p} counts {counts:?}");
}

#[test]
fn one_client_one_round_global_is_that_client() {
    let (c, m) = fixture();
    let mut f = federation(small_config(Algo::A2c, 1, 1), AgentConfigs::default(), &c, &m);
    f.run().unwrap();
    let id = f.logs()[0].clients[0];
    assert_eq!(f.global(), &f.state().agents[id].weights());
}

#[test]
fn unselected_clients_are_untouched() {
    let (c, m) = fixture();
    let mut f = federation(small_config(Algo::Dqn, 3, 3), AgentConfigs::default(), &c, &m);
    f.run_round().unwrap();
    let before = f.state().clone();
    let log = f.run_round().unwrap().clone();
    for i in 0..8 {
        let same_agent = f.state().agents[i] == before.agents[i];
        let same_rng = f.state().client_rngs[i] == before.client_rngs[i];
        let selected = log.clients.contains(&i);
        assert_eq!(same_agent, !selected, "client {i}");
        assert_eq!(same_rng, !selected, "client {i}");
    }
}

#[test]
fn runs_log_every_round_and_reproduce() {
    let (c, m) = fixture();
    for algo in Algo::ALL {
        let cfg = small_config(algo, 3, 2);
        let mut a = federation(cfg.clone(), AgentConfigs::default(), &c, &m);
        a.run().unwrap();
        let mut b = federation(FedConfig { parallel: false, ..cfg }, AgentConfigs::default(), &c, &m);
        b.run().unwrap();
        assert_eq!(a.logs().len(), 3);
        assert_eq!(a.logs().iter().map(|l| l.round).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert!(a.logs().iter().all(|l| l.client_rewards.len() == 2 && l.global_reward.is_finite()));
        assert_eq!(timeless(a.logs()), timeless(b.logs()), "{algo}");
        assert_eq!(a.global(), b.global());
        assert_eq!(a.best(), b.best());
        // Validation on rounds 2 and 3 (the last).
        let validated: Vec<usize> = a.logs().iter().filter(|l| l.validation_reward.is_some()).map(|l| l.round).collect();
        assert_eq!(validated, vec![2, 3]);
    }
}

#[test]
fn resumed_run_matches_uninterrupted() {
    let (c, m) = fixture();
    let cfg = small_config(Algo::Dqn, 4, 3);
    let mut full = federation(cfg.clone(), AgentConfigs::default(), &c, &m);
    full.run().unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.bin");
    let mut first = federation(cfg, AgentConfigs::default(), &c, &m);
    first.run_round().unwrap();
    first.run_round().unwrap();
    first.save_snapshot(&path).unwrap();
    drop(first);

    let state: FedState = load_snapshot(&path).unwrap();
    assert_eq!(state.round, 2);
    let mut resumed =
        Federation::from_state(state, RewardParams::default(), FeatureScaling::default(), &c, &m).unwrap();
    resumed.run().unwrap();
    assert_eq!(timeless(resumed.logs()), timeless(full.logs()));
    assert_eq!(resumed.global(), full.global());
    assert_eq!(resumed.best(), full.best());
    assert!(matches!(resumed.run_round(), Err(Error::State(_))));
}

#[test]
fn non_finite_local_weights_are_reported() {
    let (c, m) = fixture();
    for algo in Algo::ALL {
        let mut agents = AgentConfigs::default();
        agents.dqn.learning_rate = f64::NAN;
        agents.dqn.batch_size = 4;
        agents.a2c.learning_rate = f64::NAN;
        agents.ppo.learning_rate = f64::NAN;
        let mut f = federation(small_config(algo, 1, 2), agents, &c, &m);
        let err = f.run_round().unwrap_err();
        assert!(matches!(err, Error::Client { .. }), "{algo}: {err}");
    }
}

#[test]
fn validation_traces_are_not_in_client_pools() {
    let (c, m) = fixture();
    let f = federation(small_config(Algo::A2c, 1, 1), AgentConfigs::default(), &c, &m);
    let held_out = f.registry().validation();
    assert_eq!(held_out.len(), 8);
    for client in f.registry().clients() {
        assert!(!client.pool.is_empty());
        assert!(client.pool.iter().all(|i| !held_out.contains(i)));
        assert!(client.pool.iter().all(|&i| c.traces()[i].group() == client.env.trace_group));
    }
}

#[test]
fn evaluation_is_deterministic() {
    let (c, m) = fixture();
    let f = federation(small_config(Algo::A2c, 1, 1), AgentConfigs::default(), &c, &m);
    let plan = EvalPlan::new(&c, c.test_indices(), f.registry().rtts_by_group(), 20.0).unwrap();
    let policy = f.greedy_policy(f.global()).unwrap();
    let p = RewardParams::default();
    let a = evaluate(|| policy.clone(), &c, &plan, &m, &p).unwrap();
    let b = evaluate(|| policy.clone(), &c, &plan, &m, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), c.test_indices().len());
    let cfg = BaselineConfig::default();
    for kind in BaselineKind::ALL {
        let run = || evaluate(|| BaselinePolicy::new(kind, &cfg, &m, 20.0), &c, &plan, &m, &p).unwrap();
        assert_eq!(run(), run(), "{kind}");
    }
}
