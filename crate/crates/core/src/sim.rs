//! Event-driven DASH player.
//!
//! Each call to [`Player::download_chunk`] jumps virtual time over one chunk
//! request: RTT, the transfer (solved exactly over the piecewise-constant
//! trace), and any idle wait needed to keep the buffer under its cap.
//! Playback drains the buffer while the chunk downloads.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::VideoManifest;
use crate::traces::{BandwidthTrace, TraceGroup};

pub const HISTORY_LEN: usize = 6;
pub const DEFAULT_MAX_BUFFER_S: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvConfig {
    pub trace_group: TraceGroup,
    pub rtt_s: f64,
    pub max_buffer_s: f64,
}

impl ClientEnvConfig {
    pub fn new(trace_group: TraceGroup, rtt_s: f64) -> Self {
        Self {
            trace_group,
            rtt_s,
            max_buffer_s: DEFAULT_MAX_BUFFER_S,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtt_s >= 0.0 && self.rtt_s.is_finite()) {
            return Err(Error::param(format!("rtt must be >= 0, got {}", self.rtt_s)));
        }
        if !(self.max_buffer_s > 0.0 && self.max_buffer_s.is_finite()) {
            return Err(Error::param("max buffer must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub throughput_mbps: f64,
    pub download_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlayerState {
    pub chunk_index: usize,
    pub buffer_s: f64,
    /// Absolute position on the trace time axis.
    pub virtual_time_s: f64,
    /// Virtual time consumed since reset, accumulated as `d_n + wait_n`.
    pub elapsed_s: f64,
    pub last_level: Option<usize>,
    pub last_download_time_s: f64,
    /// Oldest first; zero-filled after reset.
    pub history: [HistoryEntry; HISTORY_LEN],
}

impl PlayerState {
    pub fn throughput_history(&self) -> [f64; HISTORY_LEN] {
        self.history.map(|h| h.throughput_mbps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub chunk: usize,
    pub level: usize,
    /// Buffer level when the request was issued (`B_n`).
    pub buffer_before_s: f64,
    /// `d_n`: RTT plus transfer time.
    pub download_time_s: f64,
    pub transfer_time_s: f64,
    /// `max(0, d_n - B_n)`.
    pub rebuffer_s: f64,
    pub wait_s: f64,
    /// Chunk size over transfer time (RTT excluded).
    pub measured_throughput_mbps: f64,
    pub new_buffer_s: f64,
    pub done: bool,
}

/// Time needed to move `size_mb` megabits starting at absolute time `start`.
pub fn transfer_time(trace: &BandwidthTrace, start: f64, size_mb: f64) -> f64 {
    let samples = trace.samples();
    let mut local = trace.local_time(start);
    let mut idx = trace.segment_index(local);
    let mut remaining = size_mb;
    let mut elapsed = 0.0;
    loop {
        let rate = samples[idx].mbps;
        let span = trace.segment_end(idx) - local;
        let capacity = rate * span;
        if capacity >= remaining {
            return elapsed + remaining / rate;
        }
        remaining -= capacity;
        elapsed += span;
        idx = (idx + 1) % samples.len();
        local = samples[idx].t_s;
    }
}

/// Chooses the quality level of the next chunk.
pub trait LevelChooser {
    fn choose(&mut self, state: &PlayerState, manifest: &VideoManifest) -> usize;
}

impl<F> LevelChooser for F
where
    F: FnMut(&PlayerState, &VideoManifest) -> usize,
{
    fn choose(&mut self, state: &PlayerState, manifest: &VideoManifest) -> usize {
        self(state, manifest)
    }
}

#[derive(Debug, Clone)]
pub struct Player<'a> {
    manifest: &'a VideoManifest,
    trace: &'a BandwidthTrace,
    env: ClientEnvConfig,
    state: PlayerState,
}

impl<'a> Player<'a> {
    pub fn reset(
        manifest: &'a VideoManifest,
        trace: &'a BandwidthTrace,
        env: ClientEnvConfig,
        start_offset_s: f64,
    ) -> Result<Self> {
        env.validate()?;
        if !(start_offset_s >= 0.0 && start_offset_s.is_finite()) {
            return Err(Error::param("start offset must be >= 0"));
        }
        Ok(Self {
            manifest,
            trace,
            env,
            state: PlayerState {
                chunk_index: 0,
                buffer_s: 0.0,
                virtual_time_s: start_offset_s,
                elapsed_s: 0.0,
                last_level: None,
                last_download_time_s: 0.0,
                history: [HistoryEntry::default(); HISTORY_LEN],
            },
        })
    }

    pub fn state(&self) -> &PlayerState {
        &self.state
    }

    pub fn manifest(&self) -> &'a VideoManifest {
        self.manifest
    }

    pub fn trace(&self) -> &'a BandwidthTrace {
        self.trace
    }

    pub fn env(&self) -> &ClientEnvConfig {
        &self.env
    }

    pub fn is_done(&self) -> bool {
        self.state.chunk_index >= self.manifest.num_chunks()
    }

    pub fn download_chunk(&mut self, level: usize) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::State("episode already finished".into()));
        }
        if level >= self.manifest.num_levels() {
            return Err(Error::param(format!(
                "level {level} out of range for {} levels",
                self.manifest.num_levels()
            )));
        }
        let s = &mut self.state;
        let n = s.chunk_index;
        let size = self.manifest.chunk_size_mb(n, level);
        let buffer = s.buffer_s;

        let transfer = transfer_time(self.trace, s.virtual_time_s + self.env.rtt_s, size);
        let download = self.env.rtt_s + transfer;
        let rebuffer = (download - buffer).max(0.0);
        let mut new_buffer = (buffer - download).max(0.0) + self.manifest.chunk_duration_s();
        let mut wait = 0.0;
        if new_buffer > self.env.max_buffer_s {
            wait = new_buffer - self.env.max_buffer_s;
            new_buffer = self.env.max_buffer_s;
        }
        let throughput = size / transfer;

        s.virtual_time_s += download + wait;
        s.elapsed_s += download + wait;
        s.buffer_s = new_buffer;
        s.chunk_index = n + 1;
        s.last_level = Some(level);
        s.last_download_time_s = download;
        s.history.rotate_left(1);
        s.history[HISTORY_LEN - 1] = HistoryEntry {
            throughput_mbps: throughput,
            download_time_s: download,
        };

        Ok(StepOutcome {
            chunk: n,
            level,
            buffer_before_s: buffer,
            download_time_s: download,
            transfer_time_s: transfer,
            rebuffer_s: rebuffer,
            wait_s: wait,
            measured_throughput_mbps: throughput,
            new_buffer_s: new_buffer,
            done: n + 1 == self.manifest.num_chunks(),
        })
    }
}

/// Plays the whole video with `policy` choosing every level.
pub fn run_episode(
    manifest: &VideoManifest,
    trace: &BandwidthTrace,
    env: ClientEnvConfig,
    start_offset_s: f64,
    policy: &mut impl LevelChooser,
) -> Result<Vec<StepOutcome>> {
    let mut player = Player::reset(manifest, trace, env, start_offset_s)?;
    let mut outcomes = Vec::with_capacity(manifest.num_chunks());
    while !player.is_done() {
        let level = policy.choose(player.state(), manifest);
        outcomes.push(player.download_chunk(level)?);
    }
    Ok(outcomes)
}

/// Writes the per-chunk event log as CSV.
pub fn write_event_log(outcomes: &[StepOutcome], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "chunk,level,download_time_s,rebuffer_s,wait_s,throughput_mbps,buffer_s"
    )?;
    for o in outcomes {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            o.chunk,
            o.level,
            o.download_time_s,
            o.rebuffer_s,
            o.wait_s,
            o.measured_throughput_mbps,
            o.new_buffer_s
        )?;
    }
    out.flush()?;
    Ok(())
}
