//! Video content model: bitrate ladder, SSIM quality table and per-segment
//! complexity traces.

use std::io::Read;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// 1-based quality level index into a [`QualityLadder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Level(pub usize);

impl Level {
    pub const LOWEST: Level = Level(1);

    #[inline]
    pub(crate) fn idx(self) -> usize {
        self.0 - 1
    }
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Ordered bitrate rungs (kbps) and the playout duration of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityLadder {
    pub bitrates_kbps: Vec<f64>,
    /// Playout time of one segment, seconds.
    pub segment_duration: f64,
}

impl Default for QualityLadder {
    fn default() -> Self {
        QualityLadder {
            bitrates_kbps: vec![500.0, 1000.0, 2000.0, 3000.0, 4000.0],
            segment_duration: 2.0,
        }
    }
}

impl QualityLadder {
    pub fn new(bitrates_kbps: Vec<f64>, segment_duration: f64) -> Result<Self> {
        let ladder = QualityLadder {
            bitrates_kbps,
            segment_duration,
        };
        ladder.validate()?;
        Ok(ladder)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bitrates_kbps.len() < 2 {
            return Err(config_err("ladder.bitrates_kbps", "need at least 2 rungs"));
        }
        if self.bitrates_kbps.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(config_err("ladder.bitrates_kbps", "bitrates must be positive"));
        }
        if self.bitrates_kbps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(config_err(
                "ladder.bitrates_kbps",
                "bitrates must be strictly increasing",
            ));
        }
        if !(self.segment_duration.is_finite() && self.segment_duration > 0.0) {
            return Err(config_err("ladder.segment_duration", "must be > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.bitrates_kbps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bitrates_kbps.is_empty()
    }

    pub fn highest(&self) -> Level {
        Level(self.len())
    }

    pub fn bitrate(&self, level: Level) -> f64 {
        self.bitrates_kbps[level.idx()]
    }

    pub fn min_bitrate(&self) -> f64 {
        self.bitrates_kbps[0]
    }

    pub fn max_bitrate(&self) -> f64 {
        self.bitrates_kbps[self.len() - 1]
    }

    pub fn levels(&self) -> impl Iterator<Item = Level> {
        (1..=self.len()).map(Level)
    }

    /// Rung whose bitrate is closest to `bitrate_kbps`; exact ties go to the
    /// lower rung.
    pub fn nearest_level(&self, bitrate_kbps: f64) -> Level {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (i, &b) in self.bitrates_kbps.iter().enumerate() {
            let dist = (b - bitrate_kbps).abs();
            // strict `<` keeps the lower rung on ties
            if dist < best_dist {
                best = i;
                best_dist = dist;
            }
        }
        Level(best + 1)
    }
}

/// SSIM value for every (level, complexity) pair.
///
/// Rows are quality levels, columns are complexity classes. For a fixed
/// complexity the value strictly increases with level; for a fixed level it
/// never increases with complexity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QualityTable", into = "QualityTable")]
pub struct QualityMap {
    levels: usize,
    complexities: usize,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QualityTable {
    /// `ssim[level - 1][complexity - 1]`
    ssim: Vec<Vec<f64>>,
}

impl TryFrom<QualityTable> for QualityMap {
    type Error = Error;

    fn try_from(t: QualityTable) -> Result<Self> {
        QualityMap::from_rows(t.ssim)
    }
}

impl From<QualityMap> for QualityTable {
    fn from(m: QualityMap) -> Self {
        QualityTable {
            ssim: m.values.chunks(m.complexities).map(<[f64]>::to_vec).collect(),
        }
    }
}

impl Default for QualityMap {
    fn default() -> Self {
        QualityMap::affine(5, 5)
    }
}

#[derive(Debug, Deserialize)]
struct QualityRow {
    level: usize,
    complexity: usize,
    ssim: f64,
}

impl QualityMap {
    /// Placeholder table `0.80 + 0.19·(ℓ−1)/(L−1) − 0.03·(c−1)/(C−1)`.
    pub fn affine(levels: usize, complexities: usize) -> Self {
        let lspan = (levels.max(2) - 1) as f64;
        let cspan = complexities.saturating_sub(1).max(1) as f64;
        let mut values = Vec::with_capacity(levels * complexities);
        for l in 0..levels {
            for c in 0..complexities {
                values.push(0.80 + 0.19 * l as f64 / lspan - 0.03 * c as f64 / cspan);
            }
        }
        QualityMap {
            levels,
            complexities,
            values,
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let levels = rows.len();
        let complexities = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != complexities) {
            return Err(config_err("quality.ssim", "rows have differing lengths"));
        }
        let map = QualityMap {
            levels,
            complexities,
            values: rows.into_iter().flatten().collect(),
        };
        map.validate()?;
        Ok(map)
    }

    /// Reads a `level,complexity,ssim` table. Every (level, complexity) pair
    /// must appear exactly once.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let rows: Vec<QualityRow> = rdr.deserialize().collect::<Result<_, _>>()?;
        let levels = rows.iter().map(|r| r.level).max().unwrap_or(0);
        let complexities = rows.iter().map(|r| r.complexity).max().unwrap_or(0);
        let mut values = vec![f64::NAN; levels * complexities];
        for r in &rows {
            if r.level == 0 || r.complexity == 0 {
                return Err(config_err("quality", "level and complexity are 1-based"));
            }
            let slot = &mut values[(r.level - 1) * complexities + r.complexity - 1];
            if !slot.is_nan() {
                return Err(config_err(
                    "quality",
                    format!("duplicate entry for level {} complexity {}", r.level, r.complexity),
                ));
            }
            *slot = r.ssim;
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(config_err("quality", "table is missing (level, complexity) entries"));
        }
        let map = QualityMap {
            levels,
            complexities,
            values,
        };
        map.validate()?;
        Ok(map)
    }

    /// Exhaustive range and monotonicity check over the whole table.
    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 || self.complexities < 1 {
            return Err(config_err(
                "quality.ssim",
                "need at least 2 levels and 1 complexity class",
            ));
        }
        for l in 1..=self.levels {
            for c in 1..=self.complexities {
                let q = self.at(l, c);
                if !(q > 0.0 && q <= 1.0) {
                    return Err(config_err(
                        "quality.ssim",
                        format!("q({l},{c}) = {q} outside (0, 1]"),
                    ));
                }
                if l > 1 && q <= self.at(l - 1, c) {
                    return Err(config_err(
                        "quality.ssim",
                        format!("not strictly increasing in level at ({l},{c})"),
                    ));
                }
                if c > 1 && q > self.at(l, c - 1) {
                    return Err(config_err(
                        "quality.ssim",
                        format!("increases with complexity at ({l},{c})"),
                    ));
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn at(&self, level: usize, complexity: usize) -> f64 {
        self.values[(level - 1) * self.complexities + complexity - 1]
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn complexities(&self) -> usize {
        self.complexities
    }

    pub fn quality_of(&self, level: Level, complexity: usize) -> Result<f64> {
        if level.0 == 0 || level.0 > self.levels {
            return Err(Error::InvalidSegment(format!(
                "level {} outside 1..={}",
                level.0, self.levels
            )));
        }
        if complexity == 0 || complexity > self.complexities {
            return Err(Error::InvalidSegment(format!(
                "complexity {complexity} outside 1..={}",
                self.complexities
            )));
        }
        Ok(self.at(level.0, complexity))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::MAX, f64::min)
    }

    /// Level whose quality at `complexity` is closest to `q`, lower on ties.
    pub fn level_for_quality(&self, q: f64, complexity: usize) -> Level {
        let c = complexity.clamp(1, self.complexities);
        let mut best = 1;
        let mut best_dist = f64::INFINITY;
        for l in 1..=self.levels {
            let d = (self.at(l, c) - q).abs();
            if d < best_dist {
                best = l;
                best_dist = d;
            }
        }
        Level(best)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("level,complexity,ssim\n");
        for l in 1..=self.levels {
            for c in 1..=self.complexities {
                out.push_str(&format!("{l},{c},{}\n", self.at(l, c)));
            }
        }
        out
    }
}

/// Per-segment content complexity generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComplexityTrace {
    Constant { level: usize },
    /// Holds `initial` before `from_segment`, then draws uniformly from
    /// `1..=classes` for every segment.
    Random {
        classes: usize,
        initial: usize,
        from_segment: u64,
    },
}

impl Default for ComplexityTrace {
    fn default() -> Self {
        ComplexityTrace::Constant { level: 4 }
    }
}

impl ComplexityTrace {
    pub fn validate(&self, complexities: usize) -> Result<()> {
        let check = |key: &str, c: usize| {
            if c == 0 || c > complexities {
                Err(config_err(key, format!("must be in 1..={complexities}")))
            } else {
                Ok(())
            }
        };
        match *self {
            ComplexityTrace::Constant { level } => check("complexity.level", level),
            ComplexityTrace::Random {
                classes, initial, ..
            } => {
                check("complexity.classes", classes)?;
                check("complexity.initial", initial)
            }
        }
    }
}

/// Runtime state of a [`ComplexityTrace`].
#[derive(Debug, Clone)]
pub struct ComplexityStream {
    trace: ComplexityTrace,
    rng: ChaCha8Rng,
}

impl ComplexityStream {
    pub fn new(trace: ComplexityTrace, rng: ChaCha8Rng) -> Self {
        ComplexityStream { trace, rng }
    }

    pub fn from_seed(trace: ComplexityTrace, seed: u64) -> Self {
        Self::new(trace, ChaCha8Rng::seed_from_u64(seed))
    }

    /// Complexity of `segment_index`. Must be called once per segment in
    /// increasing order for the random variant to be reproducible.
    pub fn next_complexity(&mut self, segment_index: u64) -> usize {
        match self.trace {
            ComplexityTrace::Constant { level } => level,
            ComplexityTrace::Random {
                classes,
                initial,
                from_segment,
            } => {
                if segment_index < from_segment {
                    initial
                } else {
                    self.rng.gen_range(1..=classes)
                }
            }
        }
    }
}
