//! Classical ABR rules used as reference points: a fixed bitrate, a
//! throughput rule, and BOLA.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::level_utility;
use crate::error::{Error, Result};
use crate::manifest::{QualityLadder, VideoManifest};
use crate::sim::{LevelChooser, PlayerState};

pub const DEFAULT_CONSTANT_KBPS: u32 = 5000;
pub const DEFAULT_SAFETY_FACTOR: f64 = 0.9;
pub const DEFAULT_BOLA_GAMMA_P: f64 = 5.0;

/// Highest level whose bitrate does not exceed `target_kbps` (level 0 when
/// the target is below the whole ladder).
pub fn constant_level(target_kbps: u32, ladder: &QualityLadder) -> usize {
    ladder
        .bitrates_kbps()
        .iter()
        .rposition(|&b| b <= target_kbps)
        .unwrap_or(0)
}

/// Harmonic mean of the non-zero entries, `None` if there are none.
pub fn harmonic_mean_nonzero(values: &[f64]) -> Option<f64> {
    let (n, inv_sum) = values
        .iter()
        .filter(|&&v| v > 0.0)
        .fold((0usize, 0.0), |(n, s), &v| (n + 1, s + 1.0 / v));
    (n > 0).then(|| n as f64 / inv_sum)
}

/// Throughput rule: highest level whose encoding bitrate fits under
/// `safety_factor` times the harmonic-mean throughput estimate.
pub fn throughput_level(history_mbps: &[f64], safety_factor: f64, ladder: &QualityLadder) -> usize {
    let Some(estimate) = harmonic_mean_nonzero(history_mbps) else {
        return 0;
    };
    let budget = safety_factor * estimate;
    (0..ladder.num_levels())
        .rev()
        .find(|&l| ladder.bitrate_mbps(l) <= budget)
        .unwrap_or(0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BolaParams {
    /// `V`, trading utility against buffer occupancy.
    pub control_gain: f64,
    /// `gamma_p`, utility bonus that keeps scores positive at low buffer.
    pub startup_utility: f64,
}

impl BolaParams {
    /// BOLA-BASIC parameters for a buffer of `max_buffer_s` seconds: the top
    /// level's score reaches zero one chunk below the cap.
    pub fn for_buffer(manifest: &VideoManifest, max_buffer_s: f64) -> Self {
        let gamma_p = DEFAULT_BOLA_GAMMA_P;
        let q_max = level_utility(manifest.num_levels() - 1, manifest.ladder());
        let buffer_chunks = max_buffer_s / manifest.chunk_duration_s();
        Self {
            control_gain: (buffer_chunks - 1.0) / (q_max + gamma_p),
            startup_utility: gamma_p,
        }
    }
}

/// BOLA decision over explicit per-level utilities and sizes.
///
/// Picks the level maximising `(V (q_m + gamma_p) - Q) / S_m`, ties to the
/// higher level. When every score is negative the buffer is above BOLA's
/// download threshold; real players idle until the first score turns
/// non-negative, which happens for the level with the largest utility, so
/// that level is returned.
pub fn bola_level_from(
    params: &BolaParams,
    buffer_chunks: f64,
    utilities: &[f64],
    sizes_mb: &[f64],
) -> usize {
    debug_assert_eq!(utilities.len(), sizes_mb.len());
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (m, (&q, &s)) in utilities.iter().zip(sizes_mb).enumerate() {
        let score = (params.control_gain * (q + params.startup_utility) - buffer_chunks) / s;
        if score >= best_score {
            best = m;
            best_score = score;
        }
    }
    if best_score < 0.0 {
        let mut top = 0;
        for (m, &q) in utilities.iter().enumerate() {
            if q >= utilities[top] {
                top = m;
            }
        }
        return top;
    }
    best
}

pub fn bola_level(
    params: &BolaParams,
    buffer_s: f64,
    manifest: &VideoManifest,
    chunk_index: usize,
) -> usize {
    let utilities: Vec<f64> = (0..manifest.num_levels())
        .map(|l| level_utility(l, manifest.ladder()))
        .collect();
    bola_level_from(
        params,
        buffer_s / manifest.chunk_duration_s(),
        &utilities,
        manifest.chunk_sizes_mb(chunk_index),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    Constant,
    Throughput,
    Bola,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 3] = [
        BaselineKind::Constant,
        BaselineKind::Throughput,
        BaselineKind::Bola,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Constant => "CONSTANT",
            BaselineKind::Throughput => "THGHPUT",
            BaselineKind::Bola => "BOLA",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "constant" => Ok(BaselineKind::Constant),
            "thghput" | "throughput" => Ok(BaselineKind::Throughput),
            "bola" => Ok(BaselineKind::Bola),
            other => Err(Error::param(format!("unknown baseline `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub constant_kbps: u32,
    pub safety_factor: f64,
    /// `None` derives BOLA parameters from the buffer cap.
    pub bola: Option<BolaParams>,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            constant_kbps: DEFAULT_CONSTANT_KBPS,
            safety_factor: DEFAULT_SAFETY_FACTOR,
            bola: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselinePolicy {
    Constant { level: usize },
    Throughput { safety_factor: f64 },
    Bola(BolaParams),
}

impl BaselinePolicy {
    pub fn new(
        kind: BaselineKind,
        config: &BaselineConfig,
        manifest: &VideoManifest,
        max_buffer_s: f64,
    ) -> Self {
        match kind {
            BaselineKind::Constant => BaselinePolicy::Constant {
                level: constant_level(config.constant_kbps, manifest.ladder()),
            },
            BaselineKind::Throughput => BaselinePolicy::Throughput {
                safety_factor: config.safety_factor,
            },
            BaselineKind::Bola => BaselinePolicy::Bola(
                config
                    .bola
                    .unwrap_or_else(|| BolaParams::for_buffer(manifest, max_buffer_s)),
            ),
        }
    }
}

impl LevelChooser for BaselinePolicy {
    fn choose(&mut self, state: &PlayerState, manifest: &VideoManifest) -> usize {
        match *self {
            BaselinePolicy::Constant { level } => level,
            BaselinePolicy::Throughput { safety_factor } => {
                throughput_level(&state.throughput_history(), safety_factor, manifest.ladder())
            }
            BaselinePolicy::Bola(params) => {
                bola_level(&params, state.buffer_s, manifest, state.chunk_index)
            }
        }
    }
}
