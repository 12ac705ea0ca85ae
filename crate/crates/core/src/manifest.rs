//! Video model: quality ladder, chunk layout and per-level chunk sizes.
//!
//! Manifest file format (plain text):
//!
//! ```text
//! chunk_duration_s=4
//! 700,900,2000,3000,5000,6000,8000
//! 1.234567,1.587300,...
//! ...
//! ```
//!
//! Line 2 holds the encoding bitrates in Kbps; every following line is one
//! chunk with its sizes in megabits, six decimal digits.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, STREAM_MANIFEST};

pub const DEFAULT_LADDER_KBPS: [u32; 7] = [700, 900, 2000, 3000, 5000, 6000, 8000];
pub const DEFAULT_CHUNK_DURATION_S: f64 = 4.0;
pub const DEFAULT_NUM_CHUNKS: usize = 60;
pub const DEFAULT_SIZE_FACTOR_RANGE: (f64, f64) = (0.3, 0.9);

/// Encoding bitrates of the available quality levels, ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QualityLadder {
    bitrates_kbps: Vec<u32>,
}

impl QualityLadder {
    pub fn new(bitrates_kbps: Vec<u32>) -> Result<Self> {
        if bitrates_kbps.len() < 2 {
            return Err(Error::param("quality ladder needs at least two levels"));
        }
        if bitrates_kbps[0] == 0 {
            return Err(Error::param("bitrates must be positive"));
        }
        if bitrates_kbps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("ladder bitrates must be strictly ascending"));
        }
        Ok(Self { bitrates_kbps })
    }

    pub fn bitrates_kbps(&self) -> &[u32] {
        &self.bitrates_kbps
    }

    pub fn num_levels(&self) -> usize {
        self.bitrates_kbps.len()
    }

    pub fn bitrate_kbps(&self, level: usize) -> u32 {
        self.bitrates_kbps[level]
    }

    pub fn bitrate_mbps(&self, level: usize) -> f64 {
        f64::from(self.bitrates_kbps[level]) / 1000.0
    }

    pub fn min_kbps(&self) -> u32 {
        self.bitrates_kbps[0]
    }

    pub fn max_kbps(&self) -> u32 {
        *self.bitrates_kbps.last().unwrap()
    }

    /// Level whose bitrate equals `kbps`, if any.
    pub fn level_of(&self, kbps: u32) -> Option<usize> {
        self.bitrates_kbps.iter().position(|&b| b == kbps)
    }
}

impl Default for QualityLadder {
    fn default() -> Self {
        Self {
            bitrates_kbps: DEFAULT_LADDER_KBPS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifest {
    ladder: QualityLadder,
    chunk_duration_s: f64,
    /// `[chunk][level]`, megabits.
    chunk_sizes_mb: Vec<Vec<f64>>,
}

impl VideoManifest {
    pub fn new(
        ladder: QualityLadder,
        chunk_duration_s: f64,
        chunk_sizes_mb: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(chunk_duration_s.is_finite() && chunk_duration_s > 0.0) {
            return Err(Error::param("chunk duration must be positive"));
        }
        if chunk_sizes_mb.is_empty() {
            return Err(Error::param("manifest needs at least one chunk"));
        }
        for (n, row) in chunk_sizes_mb.iter().enumerate() {
            if row.len() != ladder.num_levels() {
                return Err(Error::Shape(format!(
                    "chunk {n} has {} sizes, ladder has {} levels",
                    row.len(),
                    ladder.num_levels()
                )));
            }
            if row.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
                return Err(Error::param(format!("chunk {n} has a non-positive size")));
            }
            if row.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::param(format!(
                    "chunk {n} sizes are not strictly increasing across levels"
                )));
            }
        }
        Ok(Self {
            ladder,
            chunk_duration_s,
            chunk_sizes_mb,
        })
    }

    pub fn ladder(&self) -> &QualityLadder {
        &self.ladder
    }

    pub fn num_levels(&self) -> usize {
        self.ladder.num_levels()
    }

    pub fn num_chunks(&self) -> usize {
        self.chunk_sizes_mb.len()
    }

    pub fn chunk_duration_s(&self) -> f64 {
        self.chunk_duration_s
    }

    pub fn video_duration_s(&self) -> f64 {
        self.chunk_duration_s * self.num_chunks() as f64
    }

    pub fn chunk_size_mb(&self, chunk: usize, level: usize) -> f64 {
        self.chunk_sizes_mb[chunk][level]
    }

    pub fn chunk_sizes_mb(&self, chunk: usize) -> &[f64] {
        &self.chunk_sizes_mb[chunk]
    }

    pub fn size_matrix(&self) -> &[Vec<f64>] {
        &self.chunk_sizes_mb
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "chunk_duration_s={}", self.chunk_duration_s).unwrap();
        let header: Vec<String> = self
            .ladder
            .bitrates_kbps()
            .iter()
            .map(u32::to_string)
            .collect();
        writeln!(out, "{}", header.join(",")).unwrap();
        for row in &self.chunk_sizes_mb {
            let cells: Vec<String> = row.iter().map(|s| format!("{s:.6}")).collect();
            writeln!(out, "{}", cells.join(",")).unwrap();
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());

        let (idx, first) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 1, "empty manifest"))?;
        let duration = first
            .trim()
            .strip_prefix("chunk_duration_s=")
            .ok_or_else(|| Error::parse(origin, idx + 1, "expected `chunk_duration_s=<float>`"))?
            .parse::<f64>()
            .map_err(|e| Error::parse(origin, idx + 1, format!("chunk_duration_s: {e}")))?;

        let (idx, second) = lines
            .next()
            .ok_or_else(|| Error::parse(origin, 2, "missing bitrate header"))?;
        let bitrates = second
            .split(',')
            .enumerate()
            .map(|(col, cell)| {
                cell.trim().parse::<u32>().map_err(|e| {
                    Error::parse(origin, idx + 1, format!("bitrate column {}: {e}", col + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let ladder = QualityLadder::new(bitrates)
            .map_err(|e| Error::parse(origin, idx + 1, e.to_string()))?;

        let mut sizes = Vec::new();
        for (idx, line) in lines {
            let row = line
                .split(',')
                .enumerate()
                .map(|(col, cell)| {
                    cell.trim().parse::<f64>().map_err(|e| {
                        Error::parse(origin, idx + 1, format!("size column {}: {e}", col + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != ladder.num_levels() {
                return Err(Error::parse(
                    origin,
                    idx + 1,
                    format!(
                        "expected {} size columns, found {}",
                        ladder.num_levels(),
                        row.len()
                    ),
                ));
            }
            sizes.push(row);
        }
        Self::new(ladder, duration, sizes).map_err(|e| Error::parse(origin, 0, e.to_string()))
    }
}

pub fn save_manifest(manifest: &VideoManifest, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, manifest.to_text())?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<VideoManifest> {
    let text = fs::read_to_string(path)?;
    VideoManifest::parse(&text, path)
}

fn round_micro(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Synthetic manifest: each chunk draws one size factor uniformly from
/// `size_factor_range` and applies it to every level, so sizes stay ordered.
/// Sizes are rounded to 1e-6 Mb so that the text format stores them exactly.
pub fn generate_manifest(
    ladder: &QualityLadder,
    num_chunks: usize,
    chunk_duration_s: f64,
    size_factor_range: (f64, f64),
    seed: u64,
) -> Result<VideoManifest> {
    let (low, high) = size_factor_range;
    if !(low > 0.0 && low <= high && high <= 1.0) {
        return Err(Error::param(format!(
            "size factor range must satisfy 0 < low <= high <= 1, got [{low}, {high}]"
        )));
    }
    if num_chunks == 0 {
        return Err(Error::param("num_chunks must be at least 1"));
    }
    let mut rng = substream(seed, STREAM_MANIFEST, 0);
    let sizes = (0..num_chunks)
        .map(|_| {
            let factor = if low == high {
                low
            } else {
                rng.random_range(low..=high)
            };
            (0..ladder.num_levels())
                .map(|l| round_micro(ladder.bitrate_mbps(l) * chunk_duration_s * factor))
                .collect()
        })
        .collect();
    VideoManifest::new(ladder.clone(), chunk_duration_s, sizes)
}

/// The default 60 x 4 s video over the seven-level ladder.
pub fn default_manifest(seed: u64) -> VideoManifest {
    generate_manifest(
        &QualityLadder::default(),
        DEFAULT_NUM_CHUNKS,
        DEFAULT_CHUNK_DURATION_S,
        DEFAULT_SIZE_FACTOR_RANGE,
        seed,
    )
    .expect("default manifest parameters are valid")
}
