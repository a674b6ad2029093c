//! Per-step reward model, LT-QoE aggregation, and the two session-level QoE
//! metrics used to score finished logs.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::log::SessionLog;

/// Weights of the per-step reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Quality-variation weight.
    pub w_variation: f64,
    /// Estimated-rebuffer weight, per second.
    pub w_rebuffer: f64,
    /// Buffer-deviation weight, per second.
    pub w_buffer: f64,
    /// Reference buffer level, seconds.
    pub reference_buffer: f64,
    /// Penalty magnitude when the next buffer falls short of the reference.
    pub below_penalty: f64,
    /// Penalty magnitude when the next buffer meets or exceeds the reference.
    pub above_penalty: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            w_variation: 2.0,
            w_rebuffer: 50.0,
            w_buffer: 0.0001,
            reference_buffer: 8.0,
            below_penalty: 1.0,
            above_penalty: 0.25,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [
            ("reward.w_variation", self.w_variation),
            ("reward.w_rebuffer", self.w_rebuffer),
            ("reward.w_buffer", self.w_buffer),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(config_err(key, "weights must be >= 0"));
            }
        }
        if !(self.reference_buffer > 0.0) {
            return Err(config_err("reward.reference_buffer", "must be > 0"));
        }
        if !(self.above_penalty > 0.0) {
            return Err(config_err("reward.above_penalty", "must be > 0"));
        }
        if !(self.below_penalty >= self.above_penalty) {
            return Err(config_err(
                "reward.below_penalty",
                "must be >= reward.above_penalty",
            ));
        }
        Ok(())
    }
}

/// Decision-time state `(q_prev, β_est, c, b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemState {
    /// SSIM of the previously received segment.
    pub q_prev: f64,
    pub beta_est: f64,
    pub complexity: usize,
    /// Buffer occupancy, seconds.
    pub buffer: f64,
}

/// Download time of a `bitrate_kbps` segment of `segment_duration` seconds
/// at the estimated bandwidth.
pub fn estimated_download_time(
    bitrate_kbps: f64,
    segment_duration: f64,
    beta_est_kbps: f64,
) -> Result<f64> {
    if !(beta_est_kbps > 0.0) {
        return Err(Error::NonPositiveBandwidth(beta_est_kbps));
    }
    Ok(bitrate_kbps * segment_duration / beta_est_kbps)
}

/// Returns `(b_next_est, penalty)`. The penalty is a non-negative magnitude;
/// the shortfall side is weighted by `below_penalty`, the surplus side by
/// `above_penalty`.
pub fn buffer_penalty(
    buffer: f64,
    segment_duration: f64,
    d_est: f64,
    params: &RewardParams,
) -> (f64, f64) {
    let next = buffer + segment_duration - d_est;
    let dev = next - params.reference_buffer;
    let g = if dev < 0.0 {
        params.below_penalty
    } else {
        params.above_penalty
    };
    (next, g * dev.abs())
}

/// Individual terms of the per-step reward, all as non-negative penalties
/// except `quality`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardTerms {
    pub quality: f64,
    pub variation: f64,
    pub rebuffer: f64,
    pub buffer: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.quality - self.variation - self.rebuffer - self.buffer
    }
}

pub fn reward_terms(
    q_t: f64,
    state: &SystemState,
    d_est: f64,
    segment_duration: f64,
    params: &RewardParams,
) -> RewardTerms {
    let (_, pb) = buffer_penalty(state.buffer, segment_duration, d_est, params);
    RewardTerms {
        quality: q_t,
        variation: params.w_variation * (q_t - state.q_prev).abs(),
        rebuffer: params.w_rebuffer * (d_est - state.buffer).max(0.0),
        buffer: params.w_buffer * pb,
    }
}

pub fn reward(
    q_t: f64,
    state: &SystemState,
    d_est: f64,
    segment_duration: f64,
    params: &RewardParams,
) -> f64 {
    reward_terms(q_t, state, d_est, segment_duration, params).total()
}

/// Mean reward over a window.
pub fn lt_qoe(rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricAParams {
    pub lambda: f64,
    pub mu: f64,
    /// Count only positive `download − buffer` differences as stall time.
    pub clamp_stall: bool,
}

impl Default for MetricAParams {
    fn default() -> Self {
        MetricAParams {
            lambda: 1.0,
            mu: 6.0,
            clamp_stall: true,
        }
    }
}

/// Summed quality minus weighted switching and stall terms. Switches are
/// counted between consecutive received segments; the stall term of segment
/// `m` compares its download time with the buffer level at the end of that
/// segment.
pub fn qoe_metric_a(log: &SessionLog, params: MetricAParams) -> f64 {
    let recs = &log.records;
    let quality: f64 = recs.iter().map(|r| r.ssim).sum();
    let switching: f64 = recs.windows(2).map(|w| (w[1].ssim - w[0].ssim).abs()).sum();
    let stall: f64 = recs
        .iter()
        .map(|r| {
            let d = r.download_s - r.buffer_s;
            if params.clamp_stall {
                d.max(0.0)
            } else {
                d
            }
        })
        .sum();
    quality - params.lambda * switching - params.mu * stall
}

/// Components of [`qoe_metric_b`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricB {
    pub q_norm: f64,
    pub freeze: f64,
    pub switching: f64,
    pub value: f64,
}

/// Interruption factor from freeze count and mean freeze duration (seconds).
pub fn freeze_factor(freeze_count: f64, mean_freeze_s: f64) -> f64 {
    7.0 / 8.0 * (freeze_count + 1.0).ln() / 6.0 + 1.0 / 8.0 * mean_freeze_s.min(15.0) / 15.0
}

/// `4.85·Q_norm − 4.95·F − 1.57·S + 0.5`.
pub fn qoe_metric_b(log: &SessionLog) -> MetricB {
    let recs = &log.records;
    let m = recs.len() as f64;
    if recs.is_empty() {
        return MetricB {
            q_norm: 0.0,
            freeze: 0.0,
            switching: 0.0,
            value: 0.5,
        };
    }
    let q_max = recs.iter().map(|r| r.ssim).fold(f64::MIN, f64::max);
    let q_min = recs.iter().map(|r| r.ssim).fold(f64::MAX, f64::min);
    let q_norm = recs.iter().map(|r| r.ssim).sum::<f64>() / (m * q_max);

    let freezes: Vec<f64> = recs
        .iter()
        .map(|r| r.rebuffer_s)
        .filter(|&s| s > 0.0)
        .collect();
    let f_count = freezes.len() as f64;
    let f_mean = if freezes.is_empty() {
        0.0
    } else {
        freezes.iter().sum::<f64>() / f_count
    };
    let freeze = freeze_factor(f_count, f_mean);

    let depths: Vec<f64> = recs
        .windows(2)
        .filter(|w| w[1].level != w[0].level)
        .map(|w| (w[1].ssim - w[0].ssim).abs())
        .collect();
    let switching = if depths.is_empty() || q_max == q_min {
        0.0
    } else {
        let sw_depth = depths.iter().sum::<f64>() / depths.len() as f64;
        (depths.len() as f64 / m) * (sw_depth / (q_max - q_min))
    };

    MetricB {
        q_norm,
        freeze,
        switching,
        value: 4.85 * q_norm - 4.95 * freeze - 1.57 * switching + 0.5,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapters::MethodKind;
    use crate::log::StepRecord;
    use crate::media::Level;

    fn p() -> RewardParams {
        RewardParams::default()
    }

    fn rec(level: usize, ssim: f64, download_s: f64, buffer_s: f64, rebuffer_s: f64) -> StepRecord {
        StepRecord {
            episode: 0,
            segment: 0,
            method: MethodKind::RateBased,
            level: Level(level),
            bitrate_kbps: 1000.0,
            ssim,
            reward: 0.0,
            buffer_s,
            rebuffer_s,
            beta_est_kbps: 1000.0,
            beta_real_kbps: 1000.0,
            download_s,
            virtual_rewards: [None; 3],
        }
    }

    fn log(records: Vec<StepRecord>) -> SessionLog {
        SessionLog {
            segment_duration: 2.0,
            startup_delay: 0.0,
            records,
        }
    }

    #[test]
    fn download_time_examples() {
        assert_eq!(estimated_download_time(3000.0, 2.0, 3000.0).unwrap(), 2.0);
        assert_eq!(estimated_download_time(1500.0, 2.0, 3000.0).unwrap(), 1.0);
        assert_eq!(estimated_download_time(4000.0, 2.0, 1000.0).unwrap(), 8.0);
        assert!(estimated_download_time(4000.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn buffer_penalty_examples() {
        assert_eq!(buffer_penalty(8.0, 2.0, 2.0, &p()), (8.0, 0.0));
        assert_eq!(buffer_penalty(8.0, 2.0, 1.5, &p()), (8.5, 0.125));
        assert_eq!(buffer_penalty(1.0, 2.0, 3.0, &p()), (0.0, 8.0));
    }

    #[test]
    fn reward_examples() {
        let s = SystemState {
            q_prev: 0.9,
            beta_est: 3000.0,
            complexity: 4,
            buffer: 8.0,
        };
        assert_eq!(reward(0.9, &s, 2.0, 2.0, &p()), 0.9);
        let r = reward(0.95, &s, 1.5, 2.0, &p());
        assert!((r - 0.8499875).abs() < 1e-12, "{r}");
        let s = SystemState { buffer: 1.0, ..s };
        let r = reward(0.9, &s, 3.0, 2.0, &p());
        assert!((r - -99.1008).abs() < 1e-9, "{r}");
    }

    #[test]
    fn lt_qoe_examples() {
        assert_eq!(lt_qoe(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!((lt_qoe(&[0.7; 17]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(lt_qoe(&[0.5; 64]).unwrap(), 0.5);
        assert!(matches!(lt_qoe(&[]), Err(Error::EmptyWindow)));
    }

    #[test]
    fn metric_a_examples() {
        let one = log(vec![rec(3, 0.9, 1.0, 8.0, 0.0)]);
        assert_eq!(qoe_metric_a(&one, MetricAParams::default()), 0.9);

        let two = log(vec![rec(3, 0.90, 1.5, 8.0, 0.0), rec(4, 0.95, 1.8, 8.0, 0.0)]);
        let clamped = qoe_metric_a(&two, MetricAParams::default());
        assert!((clamped - 1.80).abs() < 1e-12, "{clamped}");
        let literal = qoe_metric_a(
            &two,
            MetricAParams {
                clamp_stall: false,
                ..Default::default()
            },
        );
        assert!((literal - 78.0).abs() < 1e-9, "{literal}");
    }

    #[test]
    fn metric_b_examples() {
        let flat = log(vec![rec(5, 0.99, 1.0, 8.0, 0.0); 10]);
        let b = qoe_metric_b(&flat);
        assert!((b.value - 5.35).abs() < 1e-12);
        assert_eq!(freeze_factor(0.0, 0.0), 0.0);
        assert!((freeze_factor(2.0, 3.0) - 0.18521).abs() < 1e-5);
    }

    #[test]
    fn metric_b_counts_freezes_and_switches() {
        let recs = vec![
            rec(1, 0.8, 1.0, 2.0, 0.0),
            rec(2, 0.9, 1.0, 2.0, 1.0),
            rec(2, 0.9, 1.0, 2.0, 5.0),
            rec(1, 0.8, 1.0, 2.0, 0.0),
        ];
        let b = qoe_metric_b(&log(recs));
        assert!((b.freeze - freeze_factor(2.0, 3.0)).abs() < 1e-15);
        // two switches of depth 0.1 over range 0.1
        assert!((b.switching - 0.5).abs() < 1e-12);
        let q_norm = (0.8 + 0.9 + 0.9 + 0.8) / (4.0 * 0.9);
        assert!((b.q_norm - q_norm).abs() < 1e-15);
    }
}
