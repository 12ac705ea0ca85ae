#![allow(dead_code)]

use fedabr::manifest::{generate_manifest, QualityLadder, VideoManifest};
use fedabr::traces::{BandwidthTrace, Sample, TraceGroup};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random piecewise-constant trace: 2..40 segments of 0.5..12 s at 0.2..12 Mbps.
pub fn random_trace(rng: &mut impl Rng, group: TraceGroup) -> BandwidthTrace {
    let n = rng.random_range(2..40);
    let mut t = 0.0;
    let samples = (0..n)
        .map(|_| {
            let s = Sample {
                t_s: t,
                mbps: rng.random_range(0.2..12.0),
            };
            t += rng.random_range(0.5..12.0);
            s
        })
        .collect();
    BandwidthTrace::new("random", group, samples).unwrap()
}

pub fn constant_trace(mbps: f64) -> BandwidthTrace {
    let samples = (0..33)
        .map(|i| Sample {
            t_s: i as f64 * 10.0,
            mbps,
        })
        .collect();
    BandwidthTrace::new("flat", TraceGroup::FccHigh, samples).unwrap()
}

pub fn random_manifest(seed: u64) -> VideoManifest {
    generate_manifest(&QualityLadder::default(), 60, 4.0, (0.3, 0.9), seed).unwrap()
}

/// `ln(R / 700)` with the default ladder, computed independently.
pub fn q(kbps: u32) -> f64 {
    (kbps as f64 / 700.0).ln()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
