//! Channel models producing the realized bandwidth of each segment, and the
//! throughput estimator shared by every adaptation method.

use std::str::FromStr;

use rand::distributions::{Distribution, WeightedIndex};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};

/// Bandwidth-generating process, one sample per segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelModel {
    Constant {
        kbps: f64,
    },
    /// Starts at `low_kbps` and flips level every `half_period` segments.
    SquareWave {
        low_kbps: f64,
        high_kbps: f64,
        half_period: u64,
    },
    /// Banded random walk over `states_kbps` driven by the matrix from
    /// [`build_markov_matrix`]. `initial_state` is 0-based.
    Markov {
        states_kbps: Vec<f64>,
        p: f64,
        initial_state: usize,
    },
    Piecewise {
        pieces: Vec<ChannelPiece>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelPiece {
    pub start_segment: u64,
    pub model: ChannelModel,
}

impl ChannelModel {
    /// Markov channel over the default five states {1..5} Mbps, starting in
    /// the middle state.
    pub fn default_markov(p: f64) -> Self {
        ChannelModel::Markov {
            states_kbps: vec![1000.0, 2000.0, 3000.0, 4000.0, 5000.0],
            p,
            initial_state: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("channel")
    }

    /// Transition matrix of the first Markov segment of this channel.
    pub fn markov_matrix(&self) -> Option<Result<TransitionMatrix>> {
        match self {
            ChannelModel::Markov { states_kbps, p, .. } => Some(build_markov_matrix(states_kbps.len(), *p)),
            ChannelModel::Piecewise { pieces } => pieces.iter().find_map(|piece| piece.model.markov_matrix()),
            _ => None,
        }
    }

    fn validate_at(&self, key: &str) -> Result<()> {
        let positive = |k: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(format!("{key}.{k}"), "bandwidth must be > 0"))
            }
        };
        match self {
            ChannelModel::Constant { kbps } => positive("kbps", *kbps),
            ChannelModel::SquareWave {
                low_kbps,
                high_kbps,
                half_period,
            } => {
                positive("low_kbps", *low_kbps)?;
                positive("high_kbps", *high_kbps)?;
                if *half_period == 0 {
                    return Err(config_err(format!("{key}.half_period"), "must be >= 1"));
                }
                Ok(())
            }
            ChannelModel::Markov {
                states_kbps,
                p,
                initial_state,
            } => {
                for &s in states_kbps {
                    positive("states_kbps", s)?;
                }
                check_markov_params(states_kbps.len(), *p).map_err(|e| match e {
                    Error::Config { key: k, reason } => config_err(format!("{key}.{k}"), reason),
                    e => e,
                })?;
                if *initial_state >= states_kbps.len() {
                    return Err(config_err(
                        format!("{key}.initial_state"),
                        format!("must be < {}", states_kbps.len()),
                    ));
                }
                Ok(())
            }
            ChannelModel::Piecewise { pieces } => {
                match pieces.first() {
                    None => return Err(config_err(format!("{key}.pieces"), "empty")),
                    Some(first) if first.start_segment != 0 => {
                        return Err(config_err(
                            format!("{key}.pieces"),
                            "first piece must start at segment 0",
                        ))
                    }
                    _ => {}
                }
                if pieces.windows(2).any(|w| w[1].start_segment <= w[0].start_segment) {
                    return Err(config_err(
                        format!("{key}.pieces"),
                        "start segments must be strictly increasing",
                    ));
                }
                for (i, piece) in pieces.iter().enumerate() {
                    piece.model.validate_at(&format!("{key}.pieces[{i}].model"))?;
                }
                Ok(())
            }
        }
    }
}

fn check_markov_params(k: usize, p: f64) -> Result<()> {
    if k < 3 {
        return Err(config_err("states_kbps", format!("need at least 3 states, got {k}")));
    }
    if !(0.0..=0.5).contains(&p) {
        return Err(config_err("p", format!("must be in [0, 0.5], got {p}")));
    }
    Ok(())
}

/// Row-stochastic k×k transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    probs: Vec<f64>,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.k
    }

    /// Probability of moving from state `i` to state `j` (0-based).
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    /// `row,col,prob` with 1-based state indices.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("row,col,prob\n");
        for i in 0..self.k {
            for j in 0..self.k {
                out.push_str(&format!("{},{},{}\n", i + 1, j + 1, self.get(i, j)));
            }
        }
        out
    }
}

/// Banded transition matrix: `2p/3` to each neighbour one state away, `p/3`
/// to each neighbour two states away. Mass for neighbours that fall off either
/// end of the chain stays on the diagonal.
pub fn build_markov_matrix(k: usize, p: f64) -> Result<TransitionMatrix> {
    check_markov_params(k, p)?;
    let mut probs = vec![0.0; k * k];
    for i in 0..k {
        let mut off = 0.0;
        for j in 0..k {
            let w = match i.abs_diff(j) {
                1 => 2.0 * p / 3.0,
                2 => p / 3.0,
                _ => 0.0,
            };
            probs[i * k + j] = w;
            off += w;
        }
        probs[i * k + i] = 1.0 - off;
    }
    Ok(TransitionMatrix { k, probs })
}

#[derive(Debug, Clone)]
enum SamplerState {
    Constant(f64),
    SquareWave {
        low: f64,
        high: f64,
        half_period: u64,
    },
    Markov {
        states: Vec<f64>,
        rows: Vec<WeightedIndex<f64>>,
        current: usize,
    },
    Piecewise(Vec<(u64, SamplerState)>),
}

impl SamplerState {
    fn build(model: &ChannelModel) -> Result<Self> {
        Ok(match model {
            ChannelModel::Constant { kbps } => SamplerState::Constant(*kbps),
            ChannelModel::SquareWave {
                low_kbps,
                high_kbps,
                half_period,
            } => SamplerState::SquareWave {
                low: *low_kbps,
                high: *high_kbps,
                half_period: *half_period,
            },
            ChannelModel::Markov {
                states_kbps,
                p,
                initial_state,
            } => {
                let matrix = build_markov_matrix(states_kbps.len(), *p)?;
                let rows = (0..matrix.size())
                    .map(|i| {
                        WeightedIndex::new(matrix.row(i))
                            .map_err(|e| config_err("channel.p", e.to_string()))
                    })
                    .collect::<Result<_>>()?;
                SamplerState::Markov {
                    states: states_kbps.clone(),
                    rows,
                    current: *initial_state,
                }
            }
            ChannelModel::Piecewise { pieces } => SamplerState::Piecewise(
                pieces
                    .iter()
                    .map(|p| Ok((p.start_segment, SamplerState::build(&p.model)?)))
                    .collect::<Result<_>>()?,
            ),
        })
    }

    fn sample(&mut self, segment_index: u64, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            SamplerState::Constant(kbps) => *kbps,
            SamplerState::SquareWave {
                low,
                high,
                half_period,
            } => {
                if (segment_index / *half_period) % 2 == 0 {
                    *low
                } else {
                    *high
                }
            }
            SamplerState::Markov {
                states,
                rows,
                current,
            } => {
                *current = rows[*current].sample(rng);
                states[*current]
            }
            SamplerState::Piecewise(pieces) => {
                let active = pieces
                    .iter()
                    .rposition(|(start, _)| *start <= segment_index)
                    .unwrap_or(0);
                let (start, model) = &mut pieces[active];
                let local = segment_index - *start;
                model.sample(local, rng)
            }
        }
    }
}

/// Per-run channel state. Call [`ChannelSampler::sample`] once per segment,
/// in order.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    state: SamplerState,
    rng: ChaCha8Rng,
}

impl ChannelSampler {
    pub fn new(model: &ChannelModel, rng: ChaCha8Rng) -> Result<Self> {
        model.validate()?;
        Ok(ChannelSampler {
            state: SamplerState::build(model)?,
            rng,
        })
    }

    pub fn sample(&mut self, segment_index: u64) -> f64 {
        self.state.sample(segment_index, &mut self.rng)
    }

    /// Current 0-based Markov state, if the active model is Markov.
    pub fn markov_state(&self) -> Option<usize> {
        match &self.state {
            SamplerState::Markov { current, .. } => Some(*current),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorKind {
    LastSample,
    Ewma { alpha: f64 },
}

impl Default for EstimatorKind {
    fn default() -> Self {
        EstimatorKind::LastSample
    }
}

impl EstimatorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EstimatorKind::Ewma { alpha } if !(alpha > 0.0 && alpha <= 1.0) => Err(config_err(
                "estimator.alpha",
                format!("must be in (0, 1], got {alpha}"),
            )),
            _ => Ok(()),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    /// `last` or `ewma:<alpha>`.
    fn from_str(s: &str) -> Result<Self> {
        let kind = match s.split_once(':') {
            None if s == "last" || s == "last_sample" => EstimatorKind::LastSample,
            Some(("ewma", a)) => EstimatorKind::Ewma {
                alpha: a
                    .parse()
                    .map_err(|_| config_err("estimator", format!("bad alpha `{a}`")))?,
            },
            _ => {
                return Err(config_err(
                    "estimator",
                    format!("expected `last` or `ewma:<alpha>`, got `{s}`"),
                ))
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Throughput estimate fed from realized per-segment throughputs.
#[derive(Debug, Clone)]
pub struct BandwidthEstimator {
    kind: EstimatorKind,
    estimate: Option<f64>,
    samples: u64,
}

impl BandwidthEstimator {
    pub fn new(kind: EstimatorKind) -> Self {
        BandwidthEstimator {
            kind,
            estimate: None,
            samples: 0,
        }
    }

    pub fn observe(&mut self, throughput_kbps: f64) {
        self.samples += 1;
        self.estimate = Some(match (self.kind, self.estimate) {
            (EstimatorKind::Ewma { alpha }, Some(prev)) => {
                alpha * throughput_kbps + (1.0 - alpha) * prev
            }
            _ => throughput_kbps,
        });
    }

    pub fn estimate(&self) -> Result<f64> {
        self.estimate.ok_or(Error::ColdStart)
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }
}
