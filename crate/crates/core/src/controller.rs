//! Method controller: picks which pool member issues the real request.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapters::MethodKind;
use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    /// Every segment, the method with the best mean reward over the last
    /// `window` segments.
    Iams { window: usize },
    /// Every `window` segments, the method with the best product of mean
    /// reward and per-segment win ratio over the last block; held for the
    /// next block.
    Imms { window: usize },
    Fixed { method: MethodKind },
}

impl Strategy {
    pub const IAMS_DEFAULT_WINDOW: usize = 2;
    pub const IMMS_DEFAULT_WINDOW: usize = 400;

    pub fn window(&self) -> usize {
        match *self {
            Strategy::Iams { window } | Strategy::Imms { window } => window,
            Strategy::Fixed { .. } => 1,
        }
    }

    /// Short label used in output paths and tables, e.g. `iams`, `fixed:pd`.
    pub fn label(&self) -> String {
        match self {
            Strategy::Iams { .. } => "iams".into(),
            Strategy::Imms { .. } => "imms".into(),
            Strategy::Fixed { method } => format!("fixed:{method}"),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Iams { window } => write!(f, "iams:{window}"),
            Strategy::Imms { window } => write!(f, "imms:{window}"),
            Strategy::Fixed { method } => write!(f, "fixed:{method}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    /// `iams[:N]`, `imms[:N]` or `fixed:<rate|pd|q>`.
    fn from_str(s: &str) -> Result<Self> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let window = |default: usize| -> Result<usize> {
            match arg {
                None => Ok(default),
                Some(a) => match a.parse::<usize>() {
                    Ok(n) if n >= 1 => Ok(n),
                    _ => Err(config_err("controller.window", format!("bad window `{a}`"))),
                },
            }
        };
        match head {
            "iams" => Ok(Strategy::Iams {
                window: window(Strategy::IAMS_DEFAULT_WINDOW)?,
            }),
            "imms" => Ok(Strategy::Imms {
                window: window(Strategy::IMMS_DEFAULT_WINDOW)?,
            }),
            "fixed" => Ok(Strategy::Fixed {
                method: arg
                    .ok_or_else(|| config_err("controller", "fixed needs a method, e.g. fixed:rate"))?
                    .parse()?,
            }),
            _ => Err(config_err(
                "controller",
                format!("unknown controller `{s}` (expected iams, imms or fixed:<method>)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub strategy: Strategy,
    /// Method used before enough rewards exist to compare.
    pub default_method: MethodKind,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            strategy: Strategy::Iams {
                window: Strategy::IAMS_DEFAULT_WINDOW,
            },
            default_method: MethodKind::RateBased,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self, pool: &[MethodKind]) -> Result<()> {
        if self.strategy.window() == 0 {
            return Err(config_err("controller.strategy.window", "must be >= 1"));
        }
        if !pool.contains(&self.default_method) {
            return Err(config_err(
                "controller.default_method",
                format!("`{}` is not in the method pool", self.default_method),
            ));
        }
        if let Strategy::Fixed { method } = self.strategy {
            if !pool.contains(&method) {
                return Err(config_err(
                    "controller.strategy.method",
                    format!("`{method}` is not in the method pool"),
                ));
            }
        }
        Ok(())
    }
}

/// Recent rewards of every pool member, aligned on segment index.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardHistories {
    capacity: usize,
    per_method: Vec<VecDeque<f64>>,
}

impl RewardHistories {
    pub fn new(methods: usize, capacity: usize) -> Self {
        RewardHistories {
            capacity: capacity.max(1),
            per_method: vec![VecDeque::with_capacity(capacity.max(1)); methods],
        }
    }

    /// Builds histories from full per-method reward lists (oldest first).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let capacity = rows.iter().map(Vec::len).max().unwrap_or(1).max(1);
        RewardHistories {
            capacity,
            per_method: rows.iter().map(|r| r.iter().copied().collect()).collect(),
        }
    }

    /// Appends one segment's rewards, one per method.
    pub fn push(&mut self, rewards: &[f64]) {
        assert_eq!(rewards.len(), self.per_method.len(), "one reward per method");
        for (h, &r) in self.per_method.iter_mut().zip(rewards) {
            if h.len() == self.capacity {
                h.pop_front();
            }
            h.push_back(r);
        }
    }

    pub fn methods(&self) -> usize {
        self.per_method.len()
    }

    pub fn len(&self) -> usize {
        self.per_method.first().map_or(0, VecDeque::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn method(&self, i: usize) -> &VecDeque<f64> {
        &self.per_method[i]
    }

    fn check_aligned(&self) -> Result<usize> {
        let n = self.len();
        if self.per_method.iter().any(|h| h.len() != n) {
            return Err(Error::History("histories are not aligned".into()));
        }
        Ok(n)
    }
}

/// Index of the largest value; the incumbent keeps the slot on exact ties,
/// otherwise the earliest maximal entry wins.
fn argmax_keep(values: &[f64], incumbent: usize) -> usize {
    let mut best = incumbent.min(values.len() - 1);
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn tail_mean(h: &VecDeque<f64>, n: usize) -> f64 {
    let n = n.min(h.len());
    h.iter().skip(h.len() - n).sum::<f64>() / n as f64
}

/// Method with the highest mean over its last `min(window, available)`
/// rewards.
pub fn iams_select(histories: &RewardHistories, window: usize, current: usize) -> Result<usize> {
    if histories.methods() == 0 || window == 0 {
        return Err(Error::History("no methods or zero window".into()));
    }
    if histories.per_method.iter().any(VecDeque::is_empty) {
        return Err(Error::History("every method needs at least one reward".into()));
    }
    let means: Vec<f64> = histories
        .per_method
        .iter()
        .map(|h| tail_mean(h, window))
        .collect();
    Ok(argmax_keep(&means, current))
}

/// Per-method `(mean reward, win ratio, product)` over the last `window`
/// segments. Ties for the per-segment maximum credit every tied method.
pub fn imms_scores(histories: &RewardHistories, window: usize) -> Result<Vec<(f64, f64, f64)>> {
    let n = histories.check_aligned()?;
    if histories.methods() == 0 || window == 0 {
        return Err(Error::History("no methods or zero window".into()));
    }
    if n < window {
        return Err(Error::History(format!("need {window} rewards, have {n}")));
    }
    let start = n - window;
    let mut wins = vec![0usize; histories.methods()];
    for t in start..n {
        let best = histories
            .per_method
            .iter()
            .map(|h| h[t])
            .fold(f64::NEG_INFINITY, f64::max);
        for (w, h) in wins.iter_mut().zip(&histories.per_method) {
            if h[t] == best {
                *w += 1;
            }
        }
    }
    Ok(histories
        .per_method
        .iter()
        .zip(wins)
        .map(|(h, w)| {
            let mean = tail_mean(h, window);
            let ratio = w as f64 / window as f64;
            (mean, ratio, mean * ratio)
        })
        .collect())
}

/// Method with the largest product of mean reward and win ratio.
pub fn imms_select(histories: &RewardHistories, window: usize, incumbent: usize) -> Result<usize> {
    let products: Vec<f64> = imms_scores(histories, window)?
        .into_iter()
        .map(|(_, _, p)| p)
        .collect();
    Ok(argmax_keep(&products, incumbent))
}

fn pool_index(pool: &[MethodKind], m: MethodKind) -> Result<usize> {
    pool.iter()
        .position(|&k| k == m)
        .ok_or_else(|| config_err("controller", format!("`{m}` is not in the method pool")))
}

/// Pool index of the method that issues the real request for segment
/// `segment_index`. `histories` holds rewards of strictly earlier segments.
pub fn controller_step(
    config: &ControllerConfig,
    pool: &[MethodKind],
    histories: &RewardHistories,
    segment_index: u64,
    incumbent: usize,
) -> Result<usize> {
    let default = pool_index(pool, config.default_method)?;
    match config.strategy {
        Strategy::Fixed { method } => pool_index(pool, method),
        Strategy::Iams { window } => {
            if segment_index < window as u64 {
                Ok(default)
            } else {
                iams_select(histories, window, incumbent)
            }
        }
        Strategy::Imms { window } => {
            let w = window as u64;
            if segment_index < w {
                Ok(default)
            } else if segment_index % w == 0 {
                imms_select(histories, window, incumbent)
            } else {
                Ok(incumbent)
            }
        }
    }
}
