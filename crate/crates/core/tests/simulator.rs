mod common;

use common::{constant_trace, q, random_manifest, random_trace, rng};
use fedabr::env::{observe, reward, AbrEnv, FeatureScaling, Observation, RewardParams};
use fedabr::manifest::{generate_manifest, QualityLadder, VideoManifest};
use fedabr::sim::{run_episode, ClientEnvConfig, Player, PlayerState};
use fedabr::traces::TraceGroup;
use proptest::prelude::*;
use rand::Rng;

fn random_policy(seed: u64) -> impl FnMut(&PlayerState, &VideoManifest) -> usize {
    let mut r = rng(seed);
    move |_: &PlayerState, m: &VideoManifest| r.random_range(0..m.num_levels())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn episode_invariants(seed in 0u64..10_000, rtt_ms in 0.0f64..200.0, offset in 0.0f64..500.0) {
        let m = random_manifest(seed);
        let trace = random_trace(&mut rng(seed ^ 0xabc), TraceGroup::LteLow);
        let env = ClientEnvConfig::new(TraceGroup::LteLow, rtt_ms / 1000.0);
        let mut player = Player::reset(&m, &trace, env, offset).unwrap();
        let mut policy = random_policy(seed);
        let mut total = 0.0;
        while !player.is_done() {
            let level = policy(player.state(), &m);
            let o = player.download_chunk(level).unwrap();
            prop_assert!(o.new_buffer_s >= 0.0 && o.new_buffer_s <= env.max_buffer_s);
            prop_assert_eq!(o.rebuffer_s, (o.download_time_s - o.buffer_before_s).max(0.0));
            total += o.download_time_s + o.wait_s;
        }
        prop_assert_eq!(player.state().elapsed_s, total);
        prop_assert_eq!(player.state().chunk_index, m.num_chunks());
    }

    #[test]
    fn episodes_are_deterministic(seed in 0u64..10_000) {
        let m = random_manifest(seed);
        let trace = random_trace(&mut rng(seed), TraceGroup::FccHigh);
        let env = ClientEnvConfig::new(TraceGroup::FccHigh, 0.08);
        let a = run_episode(&m, &trace, env, 3.5, &mut random_policy(seed)).unwrap();
        let b = run_episode(&m, &trace, env, 3.5, &mut random_policy(seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn higher_level_never_downloads_faster(mbps in 0.3f64..10.0, chunk in 0usize..60, low in 0usize..6, buffer_steps in 0usize..5) {
        let m = random_manifest(7);
        let trace = constant_trace(mbps);
        let env = ClientEnvConfig::new(TraceGroup::FccHigh, 0.05);
        let mut d = Vec::new();
        for level in [low, low + 1] {
            let mut p = Player::reset(&m, &trace, env, 0.0).unwrap();
            for _ in 0..chunk.min(buffer_steps) {
                p.download_chunk(0).unwrap();
            }
            d.push(p.download_chunk(level).unwrap().download_time_s);
        }
        prop_assert!(d[1] >= d[0]);
    }

    #[test]
    fn rewards_recompute_and_stay_bounded(seed in 0u64..10_000) {
        let m = random_manifest(seed);
        let trace = random_trace(&mut rng(seed + 1), TraceGroup::FccLow);
        let mut env = AbrEnv::new(
            &m,
            vec![&trace],
            ClientEnvConfig::new(TraceGroup::FccLow, 0.1),
            RewardParams::default(),
            FeatureScaling::default(),
        );
        let obs = env.reset_on(&trace, 0.0).unwrap();
        prop_assert_eq!(obs.len(), Observation::dim(7));
        let mut r = rng(seed);
        let mut prev: Option<usize> = None;
        let q_max = q(8000);
        loop {
            let level = r.random_range(0..7);
            let step = env.step_detailed(level).unwrap();
            let kbps = m.ladder().bitrate_kbps(level);
            let switch = prev.map_or(0.0, |p| 2.6 * (q(m.ladder().bitrate_kbps(p)) - q(kbps)).abs());
            let oracle = q(kbps) - switch - 1.0 * step.outcome.rebuffer_s;
            prop_assert_eq!(step.reward, oracle);
            prop_assert_eq!(step.reward, reward(prev, level, step.outcome.rebuffer_s, &RewardParams::default(), m.ladder()));
            prop_assert!(step.reward <= q_max);
            prop_assert!(step.reward >= -(2.6 * q_max + step.outcome.rebuffer_s));
            prop_assert_eq!(step.observation.len(), Observation::dim(7));
            prop_assert!(step.observation.iter().all(|x| x.is_finite()));
            prev = Some(level);
            if step.done {
                break;
            }
        }
    }

    #[test]
    fn sizes_ascend_and_generation_is_pure(seed in any::<u64>(), chunks in 1usize..80, low in 0.05f64..1.0, width in 0.0f64..0.5) {
        let high = (low + width).min(1.0);
        let ladder = QualityLadder::default();
        let a = generate_manifest(&ladder, chunks, 4.0, (low, high), seed).unwrap();
        let b = generate_manifest(&ladder, chunks, 4.0, (low, high), seed).unwrap();
        prop_assert_eq!(&a, &b);
        for n in 0..chunks {
            prop_assert!(a.chunk_sizes_mb(n).windows(2).all(|w| w[0] < w[1]));
        }
    }
}

#[test]
fn observation_tracks_state() {
    let m = random_manifest(3);
    let trace = constant_trace(4.0);
    let env = ClientEnvConfig::new(TraceGroup::FccHigh, 0.0);
    let mut p = Player::reset(&m, &trace, env, 0.0).unwrap();
    for _ in 0..10 {
        p.download_chunk(2).unwrap();
    }
    let f = observe(p.state(), &m, &FeatureScaling::default());
    let raw = Observation::from_state(p.state(), &m);
    assert_eq!(f[19], raw.buffer_s / 20.0);
    assert_eq!(f[20], 50.0 / 60.0);
    assert_eq!(f[21], 2.0 / 8.0);
    for l in 0..7 {
        assert_eq!(f[12 + l], m.chunk_size_mb(10, l) / 10.0);
    }
}
