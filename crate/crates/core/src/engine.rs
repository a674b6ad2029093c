//! Per-segment simulation loop, run configuration, scenario presets and run
//! summaries.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::{
    virtual_step, AdaptationMethod, AdapterSlot, DecisionContext, MethodKind, PdConfig,
    PdController, QLearner, QLearningConfig, QTable, RateBased, StepEnv,
};
use crate::channel::{
    BandwidthEstimator, ChannelModel, ChannelPiece, ChannelSampler, EstimatorKind,
};
use crate::controller::{controller_step, ControllerConfig, RewardHistories, Strategy};
use crate::error::{config_err, Error, Result};
use crate::log::{SessionLog, StepRecord};
use crate::media::{ComplexityStream, ComplexityTrace, Level, QualityLadder, QualityMap};
use crate::qoe::{self, MetricAParams, SystemState};

/// Named random sub-streams derived from the run seed.
#[derive(Debug, Clone, Copy)]
pub enum RngStream {
    Channel = 1,
    Complexity = 2,
    Exploration = 3,
}

pub fn stream_rng(seed: u64, stream: RngStream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfigs {
    pub pd: PdConfig,
    pub q: QLearningConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub episodes: u64,
    pub segments_per_episode: u64,
    /// Buffer capacity, seconds.
    pub b_max: f64,
    pub seed: u64,
    /// Non-selected methods advance their buffers with the bandwidth estimate
    /// instead of the realized channel sample.
    #[serde(default)]
    pub virtual_uses_estimate: bool,
    pub pool: Vec<MethodKind>,
    pub ladder: QualityLadder,
    pub quality: QualityMap,
    pub channel: ChannelModel,
    pub complexity: ComplexityTrace,
    #[serde(default)]
    pub reward: qoe::RewardParams,
    pub controller: ControllerConfig,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default)]
    pub adapters: AdapterConfigs,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            episodes: 500,
            segments_per_episode: 400,
            b_max: 20.0,
            seed: 1,
            virtual_uses_estimate: false,
            pool: MethodKind::ALL.to_vec(),
            ladder: QualityLadder::default(),
            quality: QualityMap::default(),
            channel: ChannelModel::Constant { kbps: 3000.0 },
            complexity: ComplexityTrace::default(),
            reward: qoe::RewardParams::default(),
            controller: ControllerConfig::default(),
            estimator: EstimatorKind::LastSample,
            adapters: AdapterConfigs::default(),
        }
    }
}

impl RunConfig {
    pub fn total_segments(&self) -> u64 {
        self.episodes * self.segments_per_episode
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(config_err("episodes", "must be >= 1"));
        }
        if self.segments_per_episode == 0 {
            return Err(config_err("segments_per_episode", "must be >= 1"));
        }
        self.ladder.validate()?;
        self.quality.validate()?;
        if self.quality.levels() != self.ladder.len() {
            return Err(config_err(
                "quality.ssim",
                format!(
                    "table has {} levels but the ladder has {}",
                    self.quality.levels(),
                    self.ladder.len()
                ),
            ));
        }
        self.reward.validate()?;
        if !(self.b_max >= self.reward.reference_buffer) {
            return Err(config_err("b_max", "must be >= reward.reference_buffer"));
        }
        self.channel.validate()?;
        self.complexity.validate(self.quality.complexities())?;
        self.estimator.validate()?;
        if self.pool.is_empty() {
            return Err(config_err("pool", "method pool is empty"));
        }
        for (i, m) in self.pool.iter().enumerate() {
            if self.pool[..i].contains(m) {
                return Err(config_err("pool", format!("`{m}` listed twice")));
            }
        }
        self.controller.validate(&self.pool)?;
        PdController::new(self.adapters.pd, self.ladder.segment_duration, self.b_max)?;
        self.adapters.q.validate()?;
        Ok(())
    }

    fn build_method(&self, kind: MethodKind) -> Result<Box<dyn AdaptationMethod>> {
        Ok(match kind {
            MethodKind::RateBased => Box::new(RateBased),
            MethodKind::PdController => Box::new(PdController::new(
                self.adapters.pd,
                self.ladder.segment_duration,
                self.b_max,
            )?),
            MethodKind::QLearning => Box::new(QLearner::new(
                self.adapters.q,
                &self.ladder,
                &self.quality,
                self.b_max,
                stream_rng(self.seed, RngStream::Exploration),
            )?),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes to TOML")
    }

    /// Parses and validates a configuration written by [`RunConfig::to_toml`]
    /// or by hand.
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| config_err("toml", e.message()))?;
        config.validate()?;
        Ok(config)
    }
}

/// A run in progress. [`Simulation::step`] advances one segment.
#[derive(Debug)]
pub struct Simulation {
    config: RunConfig,
    slots: Vec<AdapterSlot>,
    histories: RewardHistories,
    channel: ChannelSampler,
    complexity: ComplexityStream,
    estimator: BandwidthEstimator,
    incumbent: usize,
    next_segment: u64,
}

impl Simulation {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let slots = config
            .pool
            .iter()
            .map(|&k| config.build_method(k).map(AdapterSlot::new))
            .collect::<Result<Vec<_>>>()?;
        let capacity = match config.controller.strategy {
            Strategy::Iams { window } | Strategy::Imms { window } => window,
            Strategy::Fixed { .. } => 1,
        };
        let default = config
            .pool
            .iter()
            .position(|&k| k == config.controller.default_method)
            .unwrap_or(0);
        Ok(Simulation {
            histories: RewardHistories::new(slots.len(), capacity),
            channel: ChannelSampler::new(&config.channel, stream_rng(config.seed, RngStream::Channel))?,
            complexity: ComplexityStream::new(
                config.complexity.clone(),
                stream_rng(config.seed, RngStream::Complexity),
            ),
            estimator: BandwidthEstimator::new(config.estimator),
            incumbent: default,
            next_segment: 0,
            slots,
            config,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn slots(&self) -> &[AdapterSlot] {
        &self.slots
    }

    pub fn histories(&self) -> &RewardHistories {
        &self.histories
    }

    pub fn is_done(&self) -> bool {
        self.next_segment >= self.config.total_segments()
    }

    /// Runs one segment: sample the channel, select a method, let every pool
    /// member decide and request, then feed the realized throughput to the
    /// shared estimator. Returns `None` once all segments are done.
    pub fn step(&mut self) -> Result<Option<StepRecord>> {
        if self.is_done() {
            return Ok(None);
        }
        let t = self.next_segment;
        let cfg = &self.config;
        let beta_real = self.channel.sample(t);
        let complexity = self.complexity.next_complexity(t);
        let (beta_est, bootstrap) = match self.estimator.estimate() {
            Ok(b) => (b, false),
            Err(Error::ColdStart) => (cfg.ladder.min_bitrate(), true),
            Err(e) => return Err(e),
        };

        let selected = controller_step(
            &cfg.controller,
            &cfg.pool,
            &self.histories,
            t,
            self.incumbent,
        )?;
        self.incumbent = selected;

        let env = StepEnv {
            ladder: &cfg.ladder,
            quality: &cfg.quality,
            params: &cfg.reward,
            b_max: cfg.b_max,
            beta_est,
            complexity,
        };
        let lowest_q = cfg.quality.quality_of(Level::LOWEST, complexity)?;
        let mut rewards = vec![0.0; self.slots.len()];
        let mut virtual_rewards = [None; 3];
        let mut real = None;
        for (i, slot) in self.slots.iter_mut().enumerate() {
            let ctx = DecisionContext {
                state: SystemState {
                    q_prev: slot.client.q_prev.unwrap_or(lowest_q),
                    beta_est,
                    complexity,
                    buffer: slot.client.buffer,
                },
                ladder: &cfg.ladder,
                quality: &cfg.quality,
                b_max: cfg.b_max,
                bootstrap,
            };
            let level = slot.method.decide(&slot.client, &ctx);
            let bw = if cfg.virtual_uses_estimate && i != selected {
                beta_est
            } else {
                beta_real
            };
            let outcome = virtual_step(&mut slot.client, level, bw, &env)?;
            slot.method.observe(&outcome);
            slot.last_reward = Some(outcome.reward);
            rewards[i] = outcome.reward;
            virtual_rewards[slot.kind().index()] = Some(outcome.reward);
            if i == selected {
                real = Some(outcome);
            }
        }
        self.histories.push(&rewards);
        self.estimator.observe(beta_real);
        self.next_segment += 1;

        let o = real.expect("selected index is inside the pool");
        Ok(Some(StepRecord {
            episode: t / cfg.segments_per_episode,
            segment: t,
            method: cfg.pool[selected],
            level: o.level,
            bitrate_kbps: o.bitrate_kbps,
            ssim: o.quality,
            reward: o.reward,
            buffer_s: o.buffer_after,
            rebuffer_s: o.rebuffer_s,
            beta_est_kbps: beta_est,
            beta_real_kbps: beta_real,
            download_s: o.download_s,
            virtual_rewards,
        }))
    }

    /// Learned table of the pool's Q-learning method, if it has one.
    pub fn q_table(&self) -> Option<&QTable> {
        self.slots
            .iter()
            .find_map(|s| s.method.as_q_learner())
            .map(|q| &q.table)
    }

    /// Steps until the run is complete and returns the log of the remaining
    /// segments.
    pub fn run_to_end(&mut self) -> Result<SessionLog> {
        let mut records = Vec::with_capacity(self.config.total_segments() as usize);
        while let Some(r) = self.step()? {
            records.push(r);
        }
        Ok(SessionLog {
            segment_duration: self.config.ladder.segment_duration,
            startup_delay: records.first().map_or(0.0, |r| r.download_s),
            records,
        })
    }
}

pub fn run(config: &RunConfig) -> Result<SessionLog> {
    Simulation::new(config.clone())?.run_to_end()
}

// ---------------------------------------------------------------------------
// Scenarios

pub const SCENARIOS: [&str; 7] = [
    "constant",
    "short-fluct",
    "long-fluct",
    "markov",
    "abrupt",
    "complexity-shift",
    "combined",
];

/// Preset at full scale.
pub fn scenario(name: &str) -> Result<RunConfig> {
    scenario_scaled(name, None, None)
}

/// Preset with an optional episode count. For the scenarios with a mid-run
/// change, the change happens at `change_episode`, defaulting to half of the
/// episodes.
pub fn scenario_scaled(
    name: &str,
    episodes: Option<u64>,
    change_episode: Option<u64>,
) -> Result<RunConfig> {
    scenario_sized(name, episodes, None, change_episode)
}

/// [`scenario_scaled`] with an optional episode length as well; the change
/// point moves with it.
pub fn scenario_sized(
    name: &str,
    episodes: Option<u64>,
    segments_per_episode: Option<u64>,
    change_episode: Option<u64>,
) -> Result<RunConfig> {
    let base = RunConfig {
        segments_per_episode: segments_per_episode.unwrap_or(RunConfig::default().segments_per_episode),
        ..RunConfig::default()
    };
    let spe = base.segments_per_episode;
    let long_run = matches!(name, "abrupt" | "complexity-shift" | "combined");
    let episodes = episodes.unwrap_or(if long_run { 600 } else { 500 });
    let change_at = change_episode.unwrap_or(episodes / 2) * spe;
    let constant = ChannelModel::Constant { kbps: 3000.0 };
    let markov = ChannelModel::default_markov(0.5);
    let to_markov = ChannelModel::Piecewise {
        pieces: vec![
            ChannelPiece {
                start_segment: 0,
                model: constant.clone(),
            },
            ChannelPiece {
                start_segment: change_at,
                model: markov.clone(),
            },
        ],
    };
    let random_from = |initial| ComplexityTrace::Random {
        classes: 5,
        initial,
        from_segment: change_at,
    };
    let c4 = ComplexityTrace::Constant { level: 4 };
    let (channel, complexity) = match name {
        "constant" => (constant, c4),
        "short-fluct" => (
            ChannelModel::SquareWave {
                low_kbps: 2000.0,
                high_kbps: 4000.0,
                half_period: 10,
            },
            c4,
        ),
        "long-fluct" => (
            ChannelModel::SquareWave {
                low_kbps: 2000.0,
                high_kbps: 4000.0,
                half_period: spe,
            },
            c4,
        ),
        "markov" => (markov, c4),
        "abrupt" => (to_markov, c4),
        "complexity-shift" => (markov, random_from(5)),
        "combined" => (to_markov, random_from(4)),
        _ => {
            return Err(Error::UnknownScenario {
                name: name.to_string(),
                catalog: SCENARIOS.to_vec(),
            })
        }
    };
    Ok(RunConfig {
        episodes,
        channel,
        complexity,
        ..base
    })
}

/// Segment index where a change scenario switches regime.
pub fn change_segment(config: &RunConfig) -> Option<u64> {
    let channel_change = match &config.channel {
        ChannelModel::Piecewise { pieces } => pieces.get(1).map(|p| p.start_segment),
        _ => None,
    };
    let complexity_change = match config.complexity {
        ComplexityTrace::Random { from_segment, .. } if from_segment > 0 => Some(from_segment),
        _ => None,
    };
    channel_change.or(complexity_change)
}

// ---------------------------------------------------------------------------
// Summaries

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub segments: usize,
    pub warmup_segments: usize,
    pub lt_qoe: f64,
    pub lt_qoe_post_warmup: f64,
    pub total_rebuffer_s: f64,
    pub rebuffer_events: usize,
    pub startup_delay_s: f64,
    pub method_switches: usize,
    pub quality_switches: usize,
    pub qoe_a: f64,
    pub qoe_a_literal: f64,
    pub qoe_b: f64,
    pub selection_shares: BTreeMap<String, f64>,
}

pub fn summarize(log: &SessionLog, warmup: usize) -> Result<Summary> {
    summarize_with(log, warmup, MetricAParams::default())
}

pub fn summarize_with(log: &SessionLog, warmup: usize, metric_a: MetricAParams) -> Result<Summary> {
    let n = log.len();
    if n == 0 {
        return Err(Error::EmptyWindow);
    }
    if warmup >= n {
        return Err(config_err(
            "warmup",
            format!("warm-up of {warmup} segments leaves nothing of a {n}-segment log"),
        ));
    }
    let rewards = log.rewards();
    let recs = &log.records;
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in recs {
        *counts.entry(r.method.to_string()).or_default() += 1;
    }
    // the metric-A mode not selected by `metric_a.clamp_stall`
    let literal = qoe::qoe_metric_a(
        log,
        MetricAParams {
            clamp_stall: false,
            ..metric_a
        },
    );
    Ok(Summary {
        segments: n,
        warmup_segments: warmup,
        lt_qoe: qoe::lt_qoe(&rewards)?,
        lt_qoe_post_warmup: qoe::lt_qoe(&rewards[warmup..])?,
        total_rebuffer_s: recs.iter().map(|r| r.rebuffer_s).sum(),
        rebuffer_events: recs.iter().filter(|r| r.rebuffer_s > 0.0).count(),
        startup_delay_s: log.startup_delay,
        method_switches: recs.windows(2).filter(|w| w[0].method != w[1].method).count(),
        quality_switches: recs.windows(2).filter(|w| w[0].level != w[1].level).count(),
        qoe_a: qoe::qoe_metric_a(log, metric_a),
        qoe_a_literal: literal,
        qoe_b: qoe::qoe_metric_b(log).value,
        selection_shares: counts
            .into_iter()
            .map(|(k, c)| (k, c as f64 / n as f64))
            .collect(),
    })
}

impl Summary {
    /// One `key=value` line per field; shares as `share_<method>`.
    pub fn to_kv_string(&self) -> String {
        let mut out = format!(
            "segments={}\nwarmup_segments={}\nlt_qoe={}\nlt_qoe_post_warmup={}\n\
             total_rebuffer_s={}\nrebuffer_events={}\nstartup_delay_s={}\n\
             method_switches={}\nquality_switches={}\nqoe_a={}\nqoe_a_literal={}\nqoe_b={}\n",
            self.segments,
            self.warmup_segments,
            self.lt_qoe,
            self.lt_qoe_post_warmup,
            self.total_rebuffer_s,
            self.rebuffer_events,
            self.startup_delay_s,
            self.method_switches,
            self.quality_switches,
            self.qoe_a,
            self.qoe_a_literal,
            self.qoe_b,
        );
        for (k, v) in &self.selection_shares {
            out.push_str(&format!("share_{k}={v}\n"));
        }
        out
    }
}

/// `segment,controller,selected_method` rows, one per change of the selected
/// method (including the first segment).
pub fn switch_events_csv(log: &SessionLog, controller: &Strategy) -> String {
    let mut out = String::from("segment,controller,selected_method\n");
    let mut prev = None;
    for r in &log.records {
        if prev != Some(r.method) {
            out.push_str(&format!("{},{},{}\n", r.segment, controller, r.method));
            prev = Some(r.method);
        }
    }
    out
}
