//! The method pool: rate-based, PD-controller and tabular Q-learning
//! adaptation behind one interface, plus the per-method client state that
//! lets unselected methods keep issuing virtual requests.

use std::fmt;
use std::io::Read;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::media::{Level, QualityLadder, QualityMap};
use crate::qoe::{estimated_download_time, reward_terms, RewardParams, RewardTerms, SystemState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    #[serde(rename = "rate")]
    RateBased,
    #[serde(rename = "pd")]
    PdController,
    #[serde(rename = "q")]
    QLearning,
}

impl MethodKind {
    pub const ALL: [MethodKind; 3] = [
        MethodKind::RateBased,
        MethodKind::PdController,
        MethodKind::QLearning,
    ];

    /// Column position in per-method arrays and CSV output.
    pub fn index(self) -> usize {
        match self {
            MethodKind::RateBased => 0,
            MethodKind::PdController => 1,
            MethodKind::QLearning => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::RateBased => "rate",
            MethodKind::PdController => "pd",
            MethodKind::QLearning => "q",
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rate" => Ok(MethodKind::RateBased),
            "pd" => Ok(MethodKind::PdController),
            "q" => Ok(MethodKind::QLearning),
            _ => Err(config_err(
                "method",
                format!("unknown method `{s}` (expected rate, pd or q)"),
            )),
        }
    }
}

/// Playback client as seen by one method, whether its requests are real or
/// virtual.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClientState {
    /// Buffer occupancy in seconds, within `[0, b_max]`.
    pub buffer: f64,
    pub last_level: Option<Level>,
    pub last_bitrate: Option<f64>,
    pub q_prev: Option<f64>,
    /// Realized download time of the previous request, seconds.
    pub last_download: Option<f64>,
    pub segments: u64,
    /// Sum of download times (wall-clock request time).
    pub download_time: f64,
    pub rebuffer_time: f64,
    /// Media time played out.
    pub playback_time: f64,
    /// Media time dropped by the `b_max` clamp.
    pub overflow_time: f64,
    pub startup_delay: Option<f64>,
}

impl ClientState {
    pub fn is_fresh(&self) -> bool {
        self.segments == 0
    }
}

/// Inputs available to a method at decision time.
#[derive(Debug, Clone, Copy)]
pub struct DecisionContext<'a> {
    /// State built from this method's own client plus the shared estimate.
    pub state: SystemState,
    pub ladder: &'a QualityLadder,
    pub quality: &'a QualityMap,
    pub b_max: f64,
    /// No bandwidth estimate exists yet.
    pub bootstrap: bool,
}

/// Result of one real or virtual request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub level: Level,
    pub bitrate_kbps: f64,
    pub quality: f64,
    pub reward: f64,
    pub terms: RewardTerms,
    pub download_s: f64,
    pub rebuffer_s: f64,
    pub buffer_after: f64,
}

/// A rate-adaptation method. Implementations only choose levels and learn
/// from outcomes; buffer bookkeeping is shared via [`virtual_step`].
pub trait AdaptationMethod: fmt::Debug + Send {
    fn kind(&self) -> MethodKind;

    fn decide(&mut self, client: &ClientState, ctx: &DecisionContext<'_>) -> Level;

    fn observe(&mut self, _outcome: &StepOutcome) {}

    fn as_q_learner(&self) -> Option<&QLearner> {
        None
    }
}

// ---------------------------------------------------------------------------
// Rate-based

pub fn rate_based_decide(state: &SystemState, ladder: &QualityLadder) -> Level {
    ladder.nearest_level(state.beta_est)
}

#[derive(Debug, Clone, Default)]
pub struct RateBased;

impl AdaptationMethod for RateBased {
    fn kind(&self) -> MethodKind {
        MethodKind::RateBased
    }

    fn decide(&mut self, _client: &ClientState, ctx: &DecisionContext<'_>) -> Level {
        if ctx.bootstrap {
            return Level::LOWEST;
        }
        rate_based_decide(&ctx.state, ctx.ladder)
    }
}

// ---------------------------------------------------------------------------
// PD controller

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdConfig {
    /// Lower edge of the dead band, seconds.
    pub b_k1: f64,
    /// Upper edge of the dead band, seconds.
    pub b_k2: f64,
    /// Derivative gain; defaults to half a segment duration.
    pub k_d: Option<f64>,
    /// Proportional scale; defaults to its lower stability bound.
    pub eta: Option<f64>,
}

impl Default for PdConfig {
    fn default() -> Self {
        PdConfig {
            b_k1: 6.0,
            b_k2: 10.0,
            k_d: None,
            eta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdGains {
    pub eta: f64,
    pub k_p: f64,
    pub k_d: f64,
}

/// Lowest admissible `η` for a PD controller with derivative gain `k_d`.
pub fn pd_eta_min(segment_duration: f64, k_d: f64) -> f64 {
    let t = segment_duration;
    ((t + k_d) / (t - k_d)).sqrt() * (20.0 * t / (t + k_d)).ln() / t
}

pub fn pd_compute_gains(segment_duration: f64, k_d: f64, eta: Option<f64>) -> Result<PdGains> {
    let t = segment_duration;
    if !(k_d > 0.0 && k_d < t) {
        return Err(config_err(
            "adapters.pd.k_d",
            format!("must be in (0, {t}), got {k_d}"),
        ));
    }
    let eta_min = pd_eta_min(t, k_d);
    let eta = match eta {
        None => eta_min,
        Some(e) if e >= eta_min => e,
        Some(e) => {
            return Err(config_err(
                "adapters.pd.eta",
                format!("{e} is below the lower bound {eta_min}"),
            ))
        }
    };
    Ok(PdGains {
        eta,
        k_p: eta * (t * t - k_d * k_d).sqrt(),
        k_d,
    })
}

#[derive(Debug, Clone)]
pub struct PdController {
    pub config: PdConfig,
    pub gains: PdGains,
}

impl PdController {
    pub fn new(config: PdConfig, segment_duration: f64, b_max: f64) -> Result<Self> {
        if !(config.b_k1 > 0.0 && config.b_k1 < config.b_k2 && config.b_k2 <= b_max) {
            return Err(config_err(
                "adapters.pd.b_k1",
                format!(
                    "need 0 < b_k1 < b_k2 <= b_max, got {} / {} / {b_max}",
                    config.b_k1, config.b_k2
                ),
            ));
        }
        let k_d = config.k_d.unwrap_or(segment_duration / 2.0);
        let gains = pd_compute_gains(segment_duration, k_d, config.eta)?;
        Ok(PdController { config, gains })
    }
}

/// Buffer-driven PD update of the requested bitrate.
///
/// Holds the previous level inside `[b_k1, b_k2]`; outside it moves the rate
/// toward the nearer threshold, with a derivative term on the previous
/// download time. The continuous target is clamped to the ladder and then
/// quantized to the nearest rung.
pub fn pd_decide(
    client: &ClientState,
    state: &SystemState,
    cfg: &PdConfig,
    gains: &PdGains,
    segment_duration: f64,
    ladder: &QualityLadder,
) -> Level {
    let (Some(prev_level), Some(prev_rate), Some(prev_d)) =
        (client.last_level, client.last_bitrate, client.last_download)
    else {
        return Level::LOWEST;
    };
    let b = state.buffer;
    let threshold = if b < cfg.b_k1 {
        cfg.b_k1
    } else if b > cfg.b_k2 {
        cfg.b_k2
    } else {
        return prev_level;
    };
    let t = segment_duration;
    let bracket = gains.k_p * (b - threshold) + gains.k_d * (t - prev_d) / prev_d;
    let target = prev_rate + state.beta_est / t * bracket;
    ladder.nearest_level(target.clamp(ladder.min_bitrate(), ladder.max_bitrate()))
}

impl AdaptationMethod for PdController {
    fn kind(&self) -> MethodKind {
        MethodKind::PdController
    }

    fn decide(&mut self, client: &ClientState, ctx: &DecisionContext<'_>) -> Level {
        if ctx.bootstrap {
            return Level::LOWEST;
        }
        pd_decide(
            client,
            &ctx.state,
            &self.config,
            &self.gains,
            ctx.ladder.segment_duration,
            ctx.ladder,
        )
    }
}

// ---------------------------------------------------------------------------
// Q-learning

/// Discretized decision state. All indices except `buf_bin` are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiscreteState {
    pub q_idx: usize,
    pub beta_idx: usize,
    pub complexity: usize,
    pub buf_bin: usize,
}

/// Previous quality → nearest level at the current complexity; estimate →
/// nearest rung; buffer → 1-second floor bins over `[0, b_max]`.
pub fn discretize_state(
    state: &SystemState,
    ladder: &QualityLadder,
    quality: &QualityMap,
    b_max: f64,
) -> DiscreteState {
    let max_bin = b_max.floor().max(0.0) as usize;
    DiscreteState {
        q_idx: quality.level_for_quality(state.q_prev, state.complexity).0,
        beta_idx: ladder.nearest_level(state.beta_est).0,
        complexity: state.complexity.clamp(1, quality.complexities()),
        buf_bin: (state.buffer.max(0.0).floor() as usize).min(max_bin),
    }
}

/// Action values over the full discretized state space.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    levels: usize,
    complexities: usize,
    buf_bins: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn new(levels: usize, complexities: usize, b_max: f64) -> Self {
        let buf_bins = b_max.floor().max(0.0) as usize + 1;
        QTable {
            levels,
            complexities,
            buf_bins,
            values: vec![0.0; levels * levels * complexities * buf_bins * levels],
        }
    }

    pub fn actions(&self) -> usize {
        self.levels
    }

    pub fn states(&self) -> usize {
        self.levels * self.levels * self.complexities * self.buf_bins
    }

    fn base(&self, s: &DiscreteState) -> usize {
        debug_assert!(s.q_idx >= 1 && s.q_idx <= self.levels);
        debug_assert!(s.beta_idx >= 1 && s.beta_idx <= self.levels);
        debug_assert!(s.complexity >= 1 && s.complexity <= self.complexities);
        debug_assert!(s.buf_bin < self.buf_bins);
        let idx = (((s.q_idx - 1) * self.levels + s.beta_idx - 1) * self.complexities
            + s.complexity
            - 1)
            * self.buf_bins
            + s.buf_bin;
        idx * self.levels
    }

    pub fn row(&self, s: &DiscreteState) -> &[f64] {
        let b = self.base(s);
        &self.values[b..b + self.levels]
    }

    pub fn row_mut(&mut self, s: &DiscreteState) -> &mut [f64] {
        let b = self.base(s);
        &mut self.values[b..b + self.levels]
    }

    pub fn get(&self, s: &DiscreteState, a: Level) -> f64 {
        self.row(s)[a.idx()]
    }

    pub fn set(&mut self, s: &DiscreteState, a: Level, v: f64) {
        self.row_mut(s)[a.idx()] = v;
    }

    /// Greedy action, lowest level on ties.
    pub fn greedy(&self, s: &DiscreteState) -> Level {
        argmax_lowest(self.row(s))
    }

    pub fn max_value(&self, s: &DiscreteState) -> f64 {
        self.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `q_idx,beta_idx,c,buf_bin,action,value`, one row per entry.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("q_idx,beta_idx,c,buf_bin,action,value\n");
        for q_idx in 1..=self.levels {
            for beta_idx in 1..=self.levels {
                for complexity in 1..=self.complexities {
                    for buf_bin in 0..self.buf_bins {
                        let s = DiscreteState {
                            q_idx,
                            beta_idx,
                            complexity,
                            buf_bin,
                        };
                        for (a, v) in self.row(&s).iter().enumerate() {
                            out.push_str(&format!(
                                "{q_idx},{beta_idx},{complexity},{buf_bin},{},{v}\n",
                                a + 1
                            ));
                        }
                    }
                }
            }
        }
        out
    }

    /// Loads entries into a table of the given shape. Entries not present in
    /// the CSV keep their current value.
    pub fn load_csv<R: Read>(&mut self, reader: R) -> Result<()> {
        #[derive(Deserialize)]
        struct Row {
            q_idx: usize,
            beta_idx: usize,
            c: usize,
            buf_bin: usize,
            action: usize,
            value: f64,
        }
        let mut rdr = csv::Reader::from_reader(reader);
        for (i, row) in rdr.deserialize::<Row>().enumerate() {
            let r = row.map_err(|e| config_err("qtable", format!("row {}: {e}", i + 1)))?;
            let in_range = (1..=self.levels).contains(&r.q_idx)
                && (1..=self.levels).contains(&r.beta_idx)
                && (1..=self.complexities).contains(&r.c)
                && r.buf_bin < self.buf_bins
                && (1..=self.levels).contains(&r.action);
            if !in_range {
                return Err(config_err("qtable", format!("row {} out of range", i + 1)));
            }
            let s = DiscreteState {
                q_idx: r.q_idx,
                beta_idx: r.beta_idx,
                complexity: r.c,
                buf_bin: r.buf_bin,
            };
            self.set(&s, Level(r.action), r.value);
        }
        Ok(())
    }
}

fn argmax_lowest(values: &[f64]) -> Level {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    Level(best + 1)
}

/// Epsilon-greedy action choice. Draws one uniform number per call; a second
/// draw picks the random action when exploring.
pub fn q_decide(table: &QTable, s: &DiscreteState, epsilon: f64, rng: &mut ChaCha8Rng) -> Level {
    if rng.gen::<f64>() < epsilon {
        Level(rng.gen_range(1..=table.actions()))
    } else {
        table.greedy(s)
    }
}

/// One-step Q-learning backup.
pub fn q_update(
    table: &mut QTable,
    s: &DiscreteState,
    a: Level,
    reward: f64,
    s_next: &DiscreteState,
    alpha: f64,
    gamma: f64,
) {
    let target = reward + gamma * table.max_value(s_next);
    let q = table.get(s, a);
    table.set(s, a, q + alpha * (target - q));
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QLearningConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    /// Multiplicative decay applied after every decision.
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
}

impl Default for QLearningConfig {
    fn default() -> Self {
        QLearningConfig {
            alpha: 0.1,
            gamma: 0.9,
            epsilon_start: 1.0,
            epsilon_decay: 0.9995,
            epsilon_min: 0.01,
        }
    }
}

impl QLearningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(config_err("adapters.q.alpha", "must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(config_err("adapters.q.gamma", "must be in [0, 1)"));
        }
        for (key, v) in [
            ("adapters.q.epsilon_start", self.epsilon_start),
            ("adapters.q.epsilon_decay", self.epsilon_decay),
            ("adapters.q.epsilon_min", self.epsilon_min),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(config_err(key, "must be in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// Tabular Q-learning method. The backup for a decision is applied once the
/// next decision state is known.
#[derive(Debug, Clone)]
pub struct QLearner {
    pub config: QLearningConfig,
    pub table: QTable,
    epsilon: f64,
    rng: ChaCha8Rng,
    pending: Option<(DiscreteState, Level)>,
    last_reward: Option<f64>,
}

impl QLearner {
    pub fn new(
        config: QLearningConfig,
        ladder: &QualityLadder,
        quality: &QualityMap,
        b_max: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        Ok(QLearner {
            config,
            table: QTable::new(ladder.len(), quality.complexities(), b_max),
            epsilon: config.epsilon_start,
            rng,
            pending: None,
            last_reward: None,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl AdaptationMethod for QLearner {
    fn kind(&self) -> MethodKind {
        MethodKind::QLearning
    }

    fn decide(&mut self, _client: &ClientState, ctx: &DecisionContext<'_>) -> Level {
        let s = discretize_state(&ctx.state, ctx.ladder, ctx.quality, ctx.b_max);
        if let (Some((ps, pa)), Some(r)) = (self.pending.take(), self.last_reward.take()) {
            q_update(
                &mut self.table,
                &ps,
                pa,
                r,
                &s,
                self.config.alpha,
                self.config.gamma,
            );
        }
        let action = if ctx.bootstrap {
            Level::LOWEST
        } else {
            let a = q_decide(&self.table, &s, self.epsilon, &mut self.rng);
            self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_min);
            a
        };
        self.pending = Some((s, action));
        action
    }

    fn observe(&mut self, outcome: &StepOutcome) {
        self.last_reward = Some(outcome.reward);
    }

    fn as_q_learner(&self) -> Option<&QLearner> {
        Some(self)
    }
}

// ---------------------------------------------------------------------------
// Slots and requests

/// One pool member: its method plus the client it drives.
#[derive(Debug)]
pub struct AdapterSlot {
    pub method: Box<dyn AdaptationMethod>,
    pub client: ClientState,
    pub last_reward: Option<f64>,
}

impl AdapterSlot {
    pub fn new(method: Box<dyn AdaptationMethod>) -> Self {
        AdapterSlot {
            method,
            client: ClientState::default(),
            last_reward: None,
        }
    }

    pub fn kind(&self) -> MethodKind {
        self.method.kind()
    }
}

/// Shared per-step inputs for [`virtual_step`].
#[derive(Debug, Clone, Copy)]
pub struct StepEnv<'a> {
    pub ladder: &'a QualityLadder,
    pub quality: &'a QualityMap,
    pub params: &'a RewardParams,
    pub b_max: f64,
    pub beta_est: f64,
    pub complexity: usize,
}

/// Issues one request for `level` from `client`.
///
/// The reward is computed from the client's state before the request with the
/// estimated download time. The buffer then advances with the download time at
/// `download_bw_kbps`: `rebuffer = max(D − b, 0)`,
/// `b' = min(max(b − D, 0) + T, b_max)`. A client's first request is its
/// startup: the stall counts as playout delay rather than rebuffering.
pub fn virtual_step(
    client: &mut ClientState,
    level: Level,
    download_bw_kbps: f64,
    env: &StepEnv<'_>,
) -> Result<StepOutcome> {
    let t = env.ladder.segment_duration;
    let bitrate = env.ladder.bitrate(level);
    let q_t = env.quality.quality_of(level, env.complexity)?;
    let state = SystemState {
        q_prev: client.q_prev.unwrap_or(q_t),
        beta_est: env.beta_est,
        complexity: env.complexity,
        buffer: client.buffer,
    };
    let d_est = estimated_download_time(bitrate, t, env.beta_est)?;
    let mut terms = reward_terms(q_t, &state, d_est, t, env.params);
    let startup = client.is_fresh();
    if startup {
        terms.rebuffer = 0.0;
    }

    let d = bitrate * t / download_bw_kbps;
    let b = client.buffer;
    let stall = (d - b).max(0.0);
    let unclamped = (b - d).max(0.0) + t;
    let buffer_after = unclamped.min(env.b_max);

    client.segments += 1;
    client.download_time += d;
    client.playback_time += b - (b - d).max(0.0);
    client.overflow_time += unclamped - buffer_after;
    let rebuffer = if startup {
        client.startup_delay = Some(stall);
        0.0
    } else {
        client.rebuffer_time += stall;
        stall
    };
    client.buffer = buffer_after;
    client.last_level = Some(level);
    client.last_bitrate = Some(bitrate);
    client.q_prev = Some(q_t);
    client.last_download = Some(d);

    Ok(StepOutcome {
        level,
        bitrate_kbps: bitrate,
        quality: q_t,
        reward: terms.total(),
        terms,
        download_s: d,
        rebuffer_s: rebuffer,
        buffer_after,
    })
}
