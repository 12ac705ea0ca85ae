//! Bandwidth traces: synthetic generation, on-disk layout, and the
//! train/test partition.
//!
//! On disk a corpus is a directory with one sub-directory per group
//! (`fcc_high`, `fcc_low`, `lte_high`, `lte_low`), one `<id>.csv` per trace
//! holding `t_s,mbps` rows, and an optional `split.csv` listing
//! `trace_id,Train|Test`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, SimRng, STREAM_SPLIT, STREAM_TRACES};

/// Mean throughput separating the high and low bandwidth groups.
pub const GROUP_THRESHOLD_MBPS: f64 = 2.0;
pub const MIN_TRACE_DURATION_S: f64 = 320.0;
pub const SPLIT_FILE: &str = "split.csv";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TraceGroup {
    FccHigh,
    FccLow,
    LteHigh,
    LteLow,
}

impl TraceGroup {
    pub const ALL: [TraceGroup; 4] = [
        TraceGroup::FccHigh,
        TraceGroup::FccLow,
        TraceGroup::LteHigh,
        TraceGroup::LteLow,
    ];

    pub fn dir_name(self) -> &'static str {
        match self {
            TraceGroup::FccHigh => "fcc_high",
            TraceGroup::FccLow => "fcc_low",
            TraceGroup::LteHigh => "lte_high",
            TraceGroup::LteLow => "lte_low",
        }
    }

    pub fn is_high(self) -> bool {
        matches!(self, TraceGroup::FccHigh | TraceGroup::LteHigh)
    }

    pub fn is_lte(self) -> bool {
        matches!(self, TraceGroup::LteHigh | TraceGroup::LteLow)
    }

    /// The group with the same network type and the other bandwidth class.
    pub fn counterpart(self) -> TraceGroup {
        match self {
            TraceGroup::FccHigh => TraceGroup::FccLow,
            TraceGroup::FccLow => TraceGroup::FccHigh,
            TraceGroup::LteHigh => TraceGroup::LteLow,
            TraceGroup::LteLow => TraceGroup::LteHigh,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn satisfies_mean(self, mean_mbps: f64) -> bool {
        if self.is_high() {
            mean_mbps > GROUP_THRESHOLD_MBPS
        } else {
            mean_mbps < GROUP_THRESHOLD_MBPS
        }
    }
}

impl fmt::Display for TraceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir_name())
    }
}

impl FromStr for TraceGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TraceGroup::ALL
            .into_iter()
            .find(|g| g.dir_name() == s)
            .ok_or_else(|| Error::param(format!("unknown trace group `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t_s: f64,
    pub mbps: f64,
}

/// Piecewise-constant throughput series. Sample `i` holds on
/// `[t_i, t_{i+1})`; the last sample holds for one more spacing, which
/// defines the trace duration. Past the end the trace wraps around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthTrace {
    id: String,
    group: TraceGroup,
    samples: Vec<Sample>,
}

impl BandwidthTrace {
    pub fn new(id: impl Into<String>, group: TraceGroup, samples: Vec<Sample>) -> Result<Self> {
        let id = id.into();
        let invalid = |msg: String| Error::Validation {
            id: id.clone(),
            msg,
        };
        if samples.len() < 2 {
            return Err(invalid("a trace needs at least two samples".into()));
        }
        if samples[0].t_s != 0.0 {
            return Err(invalid(format!(
                "first timestamp must be 0, found {}",
                samples[0].t_s
            )));
        }
        for (i, w) in samples.windows(2).enumerate() {
            if !(w[1].t_s > w[0].t_s) || !w[1].t_s.is_finite() {
                return Err(invalid(format!(
                    "timestamps not strictly increasing at sample {}",
                    i + 1
                )));
            }
        }
        for (i, s) in samples.iter().enumerate() {
            if !(s.mbps.is_finite() && s.mbps > 0.0) {
                return Err(invalid(format!(
                    "non-positive throughput {} at sample {i}",
                    s.mbps
                )));
            }
        }
        Ok(Self { id, group, samples })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn group(&self) -> TraceGroup {
        self.group
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn duration_s(&self) -> f64 {
        let n = self.samples.len();
        let last = self.samples[n - 1].t_s;
        last + (last - self.samples[n - 2].t_s)
    }

    /// Time-weighted mean throughput over one period.
    pub fn mean_mbps(&self) -> f64 {
        let total: f64 = (0..self.samples.len())
            .map(|i| self.samples[i].mbps * (self.segment_end(i) - self.samples[i].t_s))
            .sum();
        total / self.duration_s()
    }

    /// Index of the segment containing the in-period time `local_t`.
    pub fn segment_index(&self, local_t: f64) -> usize {
        self.samples
            .partition_point(|s| s.t_s <= local_t)
            .saturating_sub(1)
    }

    /// End (exclusive) of segment `i` within one period.
    pub fn segment_end(&self, i: usize) -> f64 {
        self.samples
            .get(i + 1)
            .map_or_else(|| self.duration_s(), |s| s.t_s)
    }

    /// Position of absolute time `t` within one period.
    pub fn local_time(&self, t: f64) -> f64 {
        t.rem_euclid(self.duration_s())
    }

    pub fn throughput_at(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        self.samples[self.segment_index(self.local_time(t))].mbps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitRole {
    Train,
    Test,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitRole::Train => "Train",
            SplitRole::Test => "Test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceCorpus {
    traces: Vec<BandwidthTrace>,
    split: BTreeMap<String, SplitRole>,
}

impl TraceCorpus {
    /// An unsplit corpus. Traces are kept sorted by group then id.
    pub fn new(mut traces: Vec<BandwidthTrace>) -> Result<Self> {
        traces.sort_by(|a, b| (a.group, &a.id).cmp(&(b.group, &b.id)));
        if let Some(w) = traces.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::param(format!("duplicate trace id `{}`", w[0].id)));
        }
        Ok(Self {
            traces,
            split: BTreeMap::new(),
        })
    }

    pub fn traces(&self) -> &[BandwidthTrace] {
        &self.traces
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }

    pub fn is_split(&self) -> bool {
        !self.split.is_empty()
    }

    pub fn role(&self, id: &str) -> Option<SplitRole> {
        self.split.get(id).copied()
    }

    pub fn split_map(&self) -> &BTreeMap<String, SplitRole> {
        &self.split
    }

    pub fn group_indices(&self, group: TraceGroup) -> Vec<usize> {
        (0..self.traces.len())
            .filter(|&i| self.traces[i].group == group)
            .collect()
    }

    pub fn indices(&self, group: TraceGroup, role: SplitRole) -> Vec<usize> {
        self.group_indices(group)
            .into_iter()
            .filter(|&i| self.role(&self.traces[i].id) == Some(role))
            .collect()
    }

    pub fn test_indices(&self) -> Vec<usize> {
        TraceGroup::ALL
            .into_iter()
            .flat_map(|g| self.indices(g, SplitRole::Test))
            .collect()
    }

    fn with_split(mut self, split: BTreeMap<String, SplitRole>) -> Result<Self> {
        for t in &self.traces {
            if !split.contains_key(&t.id) {
                return Err(Error::Split(format!("trace `{}` missing from split", t.id)));
            }
        }
        if split.len() != self.traces.len() {
            let known: std::collections::BTreeSet<&str> =
                self.traces.iter().map(|t| t.id.as_str()).collect();
            let stray = split.keys().find(|k| !known.contains(k.as_str())).unwrap();
            return Err(Error::Split(format!("split lists unknown trace `{stray}`")));
        }
        self.split = split;
        Ok(self)
    }
}

/// Statistical profile of one synthetic trace group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupProfile {
    /// Per-trace target mean drawn uniformly from this range (Mbps).
    pub mean_range_mbps: (f64, f64),
    /// Standard deviation of log-throughput.
    pub log_sigma: f64,
    /// Lag-one autocorrelation of log-throughput.
    pub autocorrelation: f64,
    pub granularity_s: f64,
}

impl GroupProfile {
    pub fn default_for(group: TraceGroup) -> Self {
        match group {
            TraceGroup::FccHigh => GroupProfile {
                mean_range_mbps: (2.5, 8.0),
                log_sigma: 0.3,
                autocorrelation: 0.9,
                granularity_s: 10.0,
            },
            TraceGroup::FccLow => GroupProfile {
                mean_range_mbps: (0.8, 1.9),
                log_sigma: 0.3,
                autocorrelation: 0.9,
                granularity_s: 10.0,
            },
            TraceGroup::LteHigh => GroupProfile {
                mean_range_mbps: (2.5, 9.0),
                log_sigma: 0.6,
                autocorrelation: 0.7,
                granularity_s: 1.0,
            },
            TraceGroup::LteLow => GroupProfile {
                mean_range_mbps: (0.8, 1.9),
                log_sigma: 0.6,
                autocorrelation: 0.7,
                granularity_s: 1.0,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub per_group_count: usize,
    pub duration_s: f64,
    pub profiles: [GroupProfile; 4],
}

impl CorpusSpec {
    pub fn new(per_group_count: usize) -> Self {
        Self {
            per_group_count,
            ..Self::default()
        }
    }
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            per_group_count: 1000,
            duration_s: MIN_TRACE_DURATION_S,
            profiles: TraceGroup::ALL.map(GroupProfile::default_for),
        }
    }
}

const MAX_RESAMPLES: usize = 10_000;

fn generate_trace(
    id: String,
    group: TraceGroup,
    profile: &GroupProfile,
    duration_s: f64,
    rng: &mut SimRng,
) -> Result<BandwidthTrace> {
    let n = (duration_s / profile.granularity_s).ceil() as usize;
    let rho = profile.autocorrelation;
    let innovation = profile.log_sigma * (1.0 - rho * rho).sqrt();
    for _ in 0..MAX_RESAMPLES {
        let (lo, hi) = profile.mean_range_mbps;
        let target = rng.random_range(lo..hi);
        let mu = target.ln() - 0.5 * profile.log_sigma * profile.log_sigma;
        let mut x = mu + profile.log_sigma * rng.sample::<f64, _>(StandardNormal);
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            if i > 0 {
                x = mu + rho * (x - mu) + innovation * rng.sample::<f64, _>(StandardNormal);
            }
            samples.push(Sample {
                t_s: i as f64 * profile.granularity_s,
                mbps: x.exp(),
            });
        }
        let trace = BandwidthTrace::new(id.clone(), group, samples)?;
        if group.satisfies_mean(trace.mean_mbps()) {
            return Ok(trace);
        }
    }
    Err(Error::param(format!(
        "could not generate a {group} trace satisfying the 2 Mbps mean constraint"
    )))
}

/// Generates `spec.per_group_count` traces for each group. The result is
/// unsplit; see [`split_corpus`].
pub fn generate_corpus(spec: &CorpusSpec, seed: u64) -> Result<TraceCorpus> {
    if spec.per_group_count == 0 {
        return Err(Error::param("per_group_count must be at least 1"));
    }
    if !(spec.duration_s >= MIN_TRACE_DURATION_S) {
        return Err(Error::param(format!(
            "trace duration must be at least {MIN_TRACE_DURATION_S} s"
        )));
    }
    let mut traces = Vec::with_capacity(4 * spec.per_group_count);
    for (group, profile) in TraceGroup::ALL.into_iter().zip(&spec.profiles) {
        if !(profile.granularity_s > 0.0) || !(0.0..1.0).contains(&profile.autocorrelation) {
            return Err(Error::param(format!("invalid profile for {group}")));
        }
        for i in 0..spec.per_group_count {
            let mut rng = substream(seed, STREAM_TRACES, (group.index() * 1_000_000 + i) as u64);
            let id = format!("{}_{i:05}", group.dir_name());
            traces.push(generate_trace(id, group, profile, spec.duration_s, &mut rng)?);
        }
    }
    TraceCorpus::new(traces)
}

/// Stratified random split: within every group, `round(train_fraction * n)`
/// traces (clamped to `1..n`) go to training and the rest to test.
pub fn split_corpus(corpus: TraceCorpus, train_fraction: f64, seed: u64) -> Result<TraceCorpus> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::param("train fraction must lie in (0, 1)"));
    }
    let mut split = BTreeMap::new();
    for group in TraceGroup::ALL {
        let mut idx = corpus.group_indices(group);
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "group {group} has {} trace(s); at least 2 are needed",
                idx.len()
            )));
        }
        let mut rng = substream(seed, STREAM_SPLIT, group.index() as u64);
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
        for (k, &i) in idx.iter().enumerate() {
            let role = if k < n_train {
                SplitRole::Train
            } else {
                SplitRole::Test
            };
            split.insert(corpus.traces[i].id.clone(), role);
        }
    }
    corpus.with_split(split)
}

pub fn save_corpus(corpus: &TraceCorpus, root: &Path) -> Result<()> {
    for group in TraceGroup::ALL {
        fs::create_dir_all(root.join(group.dir_name()))?;
    }
    for trace in &corpus.traces {
        let mut text = String::from("t_s,mbps\n");
        for s in &trace.samples {
            text.push_str(&format!("{},{}\n", s.t_s, s.mbps));
        }
        fs::write(
            root.join(trace.group.dir_name())
                .join(format!("{}.csv", trace.id)),
            text,
        )?;
    }
    let split_path = root.join(SPLIT_FILE);
    if corpus.is_split() {
        let mut text = String::from("trace_id,split\n");
        for t in &corpus.traces {
            text.push_str(&format!("{},{}\n", t.id, corpus.split[&t.id]));
        }
        fs::write(split_path, text)?;
    } else if split_path.exists() {
        fs::remove_file(split_path)?;
    }
    Ok(())
}

fn parse_trace_file(path: &Path, id: String, group: TraceGroup) -> Result<BandwidthTrace> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::parse(path, idx + 1, "expected two columns `t_s,mbps`"));
        };
        match (a.trim().parse::<f64>(), b.trim().parse::<f64>()) {
            (Ok(t_s), Ok(mbps)) => samples.push(Sample { t_s, mbps }),
            // header row
            _ if idx == 0 => continue,
            (Err(e), _) | (_, Err(e)) => {
                return Err(Error::parse(path, idx + 1, format!("bad number: {e}")))
            }
        }
    }
    BandwidthTrace::new(id, group, samples)
}

/// Loads every `<group>/<id>.csv` under `root`, plus `split.csv` when present.
pub fn load_trace_dir(root: &Path) -> Result<TraceCorpus> {
    let mut traces = Vec::new();
    for group in TraceGroup::ALL {
        let dir = root.join(group.dir_name());
        if !dir.is_dir() {
            continue;
        }
        let mut files: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        for path in files {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::param(format!("bad file name {}", path.display())))?
                .to_string();
            traces.push(parse_trace_file(&path, id, group)?);
        }
    }
    if traces.is_empty() {
        return Err(Error::param(format!(
            "no traces found under {}",
            root.display()
        )));
    }
    let corpus = TraceCorpus::new(traces)?;
    let split_path = root.join(SPLIT_FILE);
    if !split_path.exists() {
        return Ok(corpus);
    }
    let text = fs::read_to_string(&split_path)?;
    let mut split = BTreeMap::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let (id, role) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(&split_path, idx + 1, "expected `trace_id,Train|Test`"))?;
        let role = match role.trim() {
            "Train" => SplitRole::Train,
            "Test" => SplitRole::Test,
            other => {
                return Err(Error::parse(
                    &split_path,
                    idx + 1,
                    format!("unknown split role `{other}`"),
                ))
            }
        };
        if split.insert(id.trim().to_string(), role).is_some() {
            return Err(Error::parse(&split_path, idx + 1, format!("duplicate id `{id}`")));
        }
    }
    corpus.with_split(split)
}
