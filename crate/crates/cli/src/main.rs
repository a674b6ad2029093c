mod config;
mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dashsim::engine::{switch_events_csv, SCENARIOS};
use dashsim::{summarize_with, EstimatorKind, MetricAParams, SessionLog, Simulation, Strategy, Summary};
use rayon::prelude::*;
use serde::Serialize;

use config::{Overrides, Resolved};
use output::{write_atomic, write_atomic_with};

const DEFAULT_COMPARE: [&str; 5] = ["fixed:rate", "fixed:pd", "fixed:q", "iams", "imms"];

#[derive(Debug, Parser)]
#[command(name = "dashsim", version, about = "Trace-driven ensemble DASH rate-adaptation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one controller on a scenario and write its log and summary.
    Run {
        #[command(flatten)]
        setup: Setup,
        /// Controller: iams[:N], imms[:N] or fixed:<rate|pd|q>.
        #[arg(long)]
        controller: Option<Strategy>,
        /// Seed, or an inclusive range such as 1..5 (one sub-directory per seed).
        #[arg(long = "seed", visible_alias = "seeds")]
        seed: Option<Seeds>,
    },
    /// Run several controllers on the same scenario and seeds and tabulate them.
    Compare {
        #[command(flatten)]
        setup: Setup,
        /// Comma-separated controllers [default: fixed:rate,fixed:pd,fixed:q,iams,imms].
        #[arg(long, value_delimiter = ',')]
        controller: Vec<Strategy>,
        /// Seed, or an inclusive range such as 1..5.
        #[arg(long = "seeds", visible_alias = "seed")]
        seeds: Option<Seeds>,
    },
    /// Re-score an existing log.csv without re-simulating.
    Eval {
        /// Path to a log.csv written by `run` or `compare`.
        log: PathBuf,
        /// Segment duration in seconds used to rebuild download times.
        #[arg(long, default_value_t = 2.0)]
        segment_duration: f64,
        #[command(flatten)]
        scoring: Scoring,
        /// Also write eval.txt and eval.json into this directory.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Print the scenario catalog.
    ListScenarios,
}

#[derive(Debug, Args)]
struct Setup {
    /// Scenario preset (see `list-scenarios`).
    #[arg(value_name = "SCENARIO", conflicts_with = "scenario")]
    scenario_arg: Option<String>,
    /// Scenario preset, as a flag.
    #[arg(short, long)]
    scenario: Option<String>,
    /// TOML file overriding preset keys; may name the scenario with `scenario = "..."`.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Number of episodes; change scenarios move their change point to the middle.
    #[arg(long)]
    episodes: Option<u64>,
    /// Segments per episode.
    #[arg(long)]
    segments: Option<u64>,
    /// Bandwidth estimator: `last` or `ewma:<alpha>`.
    #[arg(long)]
    estimator: Option<EstimatorKind>,
    /// Advance non-selected methods' buffers with the estimate instead of the realized sample.
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    virtual_uses_estimate: Option<bool>,
    #[command(flatten)]
    scoring: Scoring,
    /// Output directory.
    #[arg(short, long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args, Clone, Copy)]
struct Scoring {
    /// Count only positive download-minus-buffer differences as stall time in metric A.
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_value_t = true, default_missing_value = "true", action = clap::ArgAction::Set)]
    clamp_stall: bool,
    /// Segments excluded from the post-warmup LT-QoE.
    #[arg(long, default_value_t = 0)]
    warmup: usize,
}

impl Scoring {
    fn metric_a(self) -> MetricAParams {
        MetricAParams {
            clamp_stall: self.clamp_stall,
            ..MetricAParams::default()
        }
    }
}

/// A single seed or an inclusive range `a..b`.
#[derive(Debug, Clone)]
struct Seeds(Vec<u64>);

impl FromStr for Seeds {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("expected a seed or a range like 1..5, got `{s}`");
        match s.split_once("..") {
            Some((a, b)) => {
                let a: u64 = a.trim().parse().map_err(|_| bad())?;
                let b: u64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                Ok(Seeds((a..=b).collect()))
            }
            None => Ok(Seeds(vec![s.trim().parse().map_err(|_| bad())?])),
        }
    }
}

impl Setup {
    fn resolve(&self, seed: Option<u64>, controller: Option<Strategy>) -> Result<Resolved> {
        let file = self.config.as_deref().map(config::load_file).transpose()?;
        let flags = Overrides {
            scenario: self.scenario_arg.clone().or_else(|| self.scenario.clone()),
            episodes: self.episodes,
            segments: self.segments,
            seed,
            controller,
            estimator: self.estimator,
            virtual_uses_estimate: self.virtual_uses_estimate,
        };
        config::resolve(file, &flags)
    }
}

#[derive(Serialize)]
struct SummaryFile<'a> {
    scenario: &'a str,
    controller: String,
    seed: u64,
    #[serde(flatten)]
    summary: &'a Summary,
}

fn header_kv(scenario: &str, controller: &Strategy, seed: u64) -> String {
    format!("scenario={scenario}\ncontroller={controller}\nseed={seed}\n")
}

struct Finished {
    log: SessionLog,
    summary: Summary,
}

/// Runs one resolved configuration and writes every artifact into `dir`.
fn run_one(resolved: &Resolved, scoring: Scoring, dir: &Path) -> Result<Finished> {
    let cfg = &resolved.config;
    let strategy = cfg.controller.strategy;
    let mut sim = Simulation::new(cfg.clone())?;
    let log = sim.run_to_end()?;
    let summary = summarize_with(&log, scoring.warmup, scoring.metric_a())?;

    write_atomic_with(&dir.join("log.csv"), |w| Ok(log.write_csv(w)?))?;
    let kv = header_kv(&resolved.scenario, &strategy, cfg.seed) + &summary.to_kv_string();
    write_atomic(&dir.join("summary.txt"), kv.as_bytes())?;
    let json = serde_json::to_string_pretty(&SummaryFile {
        scenario: &resolved.scenario,
        controller: strategy.to_string(),
        seed: cfg.seed,
        summary: &summary,
    })?;
    write_atomic(&dir.join("summary.json"), (json + "\n").as_bytes())?;
    write_atomic(&dir.join("switches.csv"), switch_events_csv(&log, &strategy).as_bytes())?;
    write_atomic(&dir.join("config.toml"), cfg.to_toml().as_bytes())?;
    write_atomic(&dir.join("quality_map.csv"), cfg.quality.to_csv().as_bytes())?;
    if let Some(m) = cfg.channel.markov_matrix() {
        write_atomic(&dir.join("markov_matrix.csv"), m?.to_csv().as_bytes())?;
    }
    if let Some(q) = sim.q_table() {
        write_atomic(&dir.join("q_table.csv"), q.to_csv().as_bytes())?;
    }
    Ok(Finished { log, summary })
}

fn path_label(s: &Strategy) -> String {
    s.label().replace(':', "-")
}

fn cmd_run(setup: &Setup, controller: Option<Strategy>, seeds: Option<Seeds>) -> Result<()> {
    let seeds = seeds.map(|s| s.0);
    match seeds.as_deref() {
        None | Some([_]) => {
            let seed = seeds.as_ref().map(|s| s[0]);
            let resolved = setup.resolve(seed, controller)?;
            let done = run_one(&resolved, setup.scoring, &setup.out)?;
            println!("wrote {} rows to {}", done.log.len(), setup.out.display());
            print!("{}", done.summary.to_kv_string());
        }
        Some(many) => {
            let jobs = many
                .iter()
                .map(|&seed| setup.resolve(Some(seed), controller))
                .collect::<Result<Vec<_>>>()?;
            jobs.par_iter()
                .map(|r| run_one(r, setup.scoring, &setup.out.join(format!("seed-{}", r.config.seed))).map(|_| ()))
                .collect::<Result<Vec<_>>>()?;
            println!("wrote {} runs to {}", jobs.len(), setup.out.display());
        }
    }
    Ok(())
}

fn cmd_compare(setup: &Setup, controllers: Vec<Strategy>, seeds: Option<Seeds>) -> Result<()> {
    let controllers = if controllers.is_empty() {
        DEFAULT_COMPARE
            .iter()
            .map(|c| c.parse().expect("default controllers parse"))
            .collect()
    } else {
        controllers
    };
    let seeds = match seeds {
        Some(s) => s.0,
        None => vec![setup.resolve(None, None)?.config.seed],
    };
    let mut jobs = Vec::new();
    for c in &controllers {
        for &seed in &seeds {
            jobs.push(setup.resolve(Some(seed), Some(*c))?);
        }
    }
    let results = jobs
        .par_iter()
        .map(|r| {
            let dir = setup
                .out
                .join(path_label(&r.config.controller.strategy))
                .join(format!("seed-{}", r.config.seed));
            run_one(r, setup.scoring, &dir).map(|f| f.summary)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = String::from("controller,seed,lt_qoe,total_rebuffer_s,qoe_a,qoe_b\n");
    for (r, s) in jobs.iter().zip(&results) {
        table.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.config.controller.strategy, r.config.seed, s.lt_qoe, s.total_rebuffer_s, s.qoe_a, s.qoe_b
        ));
    }
    write_atomic(&setup.out.join("compare.csv"), table.as_bytes())?;

    println!(
        "{:<12} {:>5} {:>10} {:>14} {:>14} {:>9}",
        "controller", "seed", "lt_qoe", "rebuffer_s", "qoe_a", "qoe_b"
    );
    for (r, s) in jobs.iter().zip(&results) {
        println!(
            "{:<12} {:>5} {:>10.5} {:>14.2} {:>14.2} {:>9.4}",
            r.config.controller.strategy.label(),
            r.config.seed,
            s.lt_qoe,
            s.total_rebuffer_s,
            s.qoe_a,
            s.qoe_b
        );
    }
    Ok(())
}

fn cmd_eval(path: &Path, segment_duration: f64, scoring: Scoring, out: Option<&Path>) -> Result<()> {
    if !(segment_duration > 0.0) {
        bail!("segment-duration: must be > 0, got {segment_duration}");
    }
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let log = SessionLog::read_csv(file, segment_duration).with_context(|| format!("reading {}", path.display()))?;
    if log.is_empty() {
        bail!("{}: log has no data rows", path.display());
    }
    let summary = summarize_with(&log, scoring.warmup, scoring.metric_a())?;
    let kv = summary.to_kv_string();
    print!("{kv}");
    if let Some(dir) = out {
        write_atomic(&dir.join("eval.txt"), kv.as_bytes())?;
        let json = serde_json::to_string_pretty(&summary)?;
        write_atomic(&dir.join("eval.json"), (json + "\n").as_bytes())?;
    }
    Ok(())
}

fn cmd_list() {
    let about = |name: &str| match name {
        "constant" => "3000 kbps constant channel, complexity 4",
        "short-fluct" => "square wave 2000/4000 kbps, 10-segment half period",
        "long-fluct" => "square wave 2000/4000 kbps, one-episode half period",
        "markov" => "5-state Markov channel, p = 0.5",
        "abrupt" => "constant channel switching to Markov halfway",
        "complexity-shift" => "Markov channel, complexity 5 then random per segment halfway",
        "combined" => "abrupt channel change and complexity change together",
        _ => "",
    };
    for name in SCENARIOS {
        println!("{name:<18} {}", about(name));
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            setup,
            controller,
            seed,
        } => cmd_run(&setup, controller, seed),
        Command::Compare {
            setup,
            controller,
            seeds,
        } => cmd_compare(&setup, controller, seeds),
        Command::Eval {
            log,
            segment_duration,
            scoring,
            out,
        } => cmd_eval(&log, segment_duration, scoring, out.as_deref()),
        Command::ListScenarios => {
            cmd_list();
            Ok(())
        }
    }
}
