//! Trace-driven simulator of ensemble DASH rate adaptation.
//!
//! A pool of adaptation methods (rate-based, PD controller, tabular
//! Q-learning) all issue requests every segment, real or virtual; a method
//! controller picks whose request is real using instant (IAMS) or
//! intermittent (IMMS) switching. Channels, content complexity, the reward
//! model and two session-level QoE metrics are included.

pub mod adapters;
pub mod channel;
pub mod controller;
pub mod engine;
pub mod error;
pub mod log;
pub mod media;
pub mod qoe;

pub use adapters::{AdaptationMethod, AdapterSlot, ClientState, MethodKind, QTable};
pub use channel::{BandwidthEstimator, ChannelModel, EstimatorKind, TransitionMatrix};
pub use controller::{ControllerConfig, RewardHistories, Strategy};
pub use engine::{
    change_segment, run, scenario, scenario_scaled, scenario_sized, summarize, summarize_with, RunConfig,
    Simulation, Summary,
};
pub use error::{Error, Result};
pub use log::{SessionLog, StepRecord};
pub use media::{ComplexityTrace, Level, QualityLadder, QualityMap};
pub use qoe::{lt_qoe, MetricAParams, RewardParams, SystemState};
