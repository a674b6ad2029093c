//! Per-segment session log and its CSV form.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::adapters::MethodKind;
use crate::error::{Error, Result};
use crate::media::Level;

pub const LOG_HEADER: [&str; 14] = [
    "episode",
    "segment",
    "method",
    "level",
    "bitrate_kbps",
    "ssim",
    "reward",
    "buffer_s",
    "rebuffer_s",
    "beta_est_kbps",
    "beta_real_kbps",
    "vr_rate",
    "vr_pd",
    "vr_q",
];

/// One real segment request.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub episode: u64,
    pub segment: u64,
    pub method: MethodKind,
    pub level: Level,
    pub bitrate_kbps: f64,
    pub ssim: f64,
    pub reward: f64,
    /// Buffer at the end of the download, seconds.
    pub buffer_s: f64,
    pub rebuffer_s: f64,
    pub beta_est_kbps: f64,
    pub beta_real_kbps: f64,
    /// Realized download time, seconds. Not serialized; recomputed from the
    /// bitrate and realized bandwidth on load.
    pub download_s: f64,
    /// Reward of every pool member at this segment, indexed by
    /// [`MethodKind::index`]; `None` for methods outside the pool.
    pub virtual_rewards: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub segment_duration: f64,
    /// Download time of the first segment (initial playout delay).
    pub startup_delay: f64,
    pub records: Vec<StepRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    episode: u64,
    segment: u64,
    method: MethodKind,
    level: usize,
    bitrate_kbps: f64,
    ssim: f64,
    reward: f64,
    buffer_s: f64,
    rebuffer_s: f64,
    beta_est_kbps: f64,
    beta_real_kbps: f64,
    vr_rate: Option<f64>,
    vr_pd: Option<f64>,
    vr_q: Option<f64>,
}

impl SessionLog {
    pub fn rewards(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.reward).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        if self.records.is_empty() {
            w.write_record(LOG_HEADER)?;
        }
        for r in &self.records {
            let [vr_rate, vr_pd, vr_q] = r.virtual_rewards;
            w.serialize(CsvRow {
                episode: r.episode,
                segment: r.segment,
                method: r.method,
                level: r.level.0,
                bitrate_kbps: r.bitrate_kbps,
                ssim: r.ssim,
                reward: r.reward,
                buffer_s: r.buffer_s,
                rebuffer_s: r.rebuffer_s,
                beta_est_kbps: r.beta_est_kbps,
                beta_real_kbps: r.beta_real_kbps,
                vr_rate,
                vr_pd,
                vr_q,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Parses a log written by [`SessionLog::write_csv`]. Download times are
    /// rebuilt as `bitrate · segment_duration / beta_real`; the startup delay
    /// is the first row's download time. Rows are numbered from 1 (first data
    /// row) in errors.
    pub fn read_csv<R: Read>(reader: R, segment_duration: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().ne(LOG_HEADER.iter().copied()) {
            return Err(Error::MalformedLog {
                row: 0,
                reason: format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(",")),
            });
        }
        let mut records = Vec::new();
        for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row_no = i + 1;
            let bad = |reason: String| Error::MalformedLog {
                row: row_no,
                reason,
            };
            let r = row.map_err(|e| bad(e.to_string()))?;
            if r.level == 0 {
                return Err(bad("level is 1-based".into()));
            }
            if !(r.beta_real_kbps > 0.0) {
                return Err(bad("beta_real_kbps must be > 0".into()));
            }
            if r.rebuffer_s < 0.0 {
                return Err(bad("negative rebuffer".into()));
            }
            if let Some(prev) = records.last().map(|p: &StepRecord| p.segment) {
                if r.segment <= prev {
                    return Err(bad("segment indices must increase".into()));
                }
            }
            records.push(StepRecord {
                episode: r.episode,
                segment: r.segment,
                method: r.method,
                level: Level(r.level),
                bitrate_kbps: r.bitrate_kbps,
                ssim: r.ssim,
                reward: r.reward,
                buffer_s: r.buffer_s,
                rebuffer_s: r.rebuffer_s,
                beta_est_kbps: r.beta_est_kbps,
                beta_real_kbps: r.beta_real_kbps,
                download_s: r.bitrate_kbps * segment_duration / r.beta_real_kbps,
                virtual_rewards: [r.vr_rate, r.vr_pd, r.vr_q],
            });
        }
        let startup_delay = records.first().map_or(0.0, |r| r.download_s);
        Ok(SessionLog {
            segment_duration,
            startup_delay,
            records,
        })
    }
}
