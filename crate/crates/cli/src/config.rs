//! Resolves a run configuration: scenario preset, then the config file, then
//! command-line flags.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dashsim::{scenario_sized, EstimatorKind, RunConfig, Strategy};
use toml::{Table, Value};

/// Keys a config file may carry besides the `RunConfig` fields.
const SCENARIO_KEY: &str = "scenario";

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub scenario: Option<String>,
    pub episodes: Option<u64>,
    pub segments: Option<u64>,
    pub seed: Option<u64>,
    pub controller: Option<Strategy>,
    pub estimator: Option<EstimatorKind>,
    pub virtual_uses_estimate: Option<bool>,
}

/// Scenario name plus resolved configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: String,
    pub config: RunConfig,
}

pub fn load_file(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<Table>()
        .with_context(|| format!("parsing {}", path.display()))
}

fn file_u64(file: &Table, key: &str) -> Result<Option<u64>> {
    match file.get(key) {
        None => Ok(None),
        Some(Value::Integer(i)) if *i > 0 => Ok(Some(*i as u64)),
        Some(v) => bail!("{key}: expected a positive integer, got {v}"),
    }
}

/// Overlays `top` onto `base`. A table whose `kind` differs from the base's
/// replaces it outright, so switching e.g. the channel model does not leave
/// fields of the old variant behind.
fn merge(base: &mut Table, top: Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) if b.get("kind") == t.get("kind") || t.get("kind").is_none() => {
                merge(b, t)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub fn resolve(file: Option<Table>, flags: &Overrides) -> Result<Resolved> {
    let mut file = file.unwrap_or_default();
    let from_file = match file.remove(SCENARIO_KEY) {
        None => None,
        Some(Value::String(s)) => Some(s),
        Some(v) => bail!("{SCENARIO_KEY}: expected a string, got {v}"),
    };
    let Some(scenario) = flags.scenario.clone().or(from_file) else {
        bail!("no scenario given: pass a scenario name or a config file with a `{SCENARIO_KEY}` key");
    };
    let episodes = flags.episodes.or(file_u64(&file, "episodes")?);
    let segments = flags.segments.or(file_u64(&file, "segments_per_episode")?);
    let preset = scenario_sized(&scenario, episodes, segments, None)?;

    let mut table: Table = preset.to_toml().parse().expect("preset serializes to a TOML table");
    merge(&mut table, file);
    let mut config: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("config: {}", e.message()))?;

    if let Some(e) = flags.episodes {
        config.episodes = e;
    }
    if let Some(s) = flags.segments {
        config.segments_per_episode = s;
    }
    if let Some(seed) = flags.seed {
        config.seed = seed;
    }
    if let Some(strategy) = flags.controller {
        config.controller.strategy = strategy;
    }
    if let Some(estimator) = flags.estimator {
        config.estimator = estimator;
    }
    if let Some(v) = flags.virtual_uses_estimate {
        config.virtual_uses_estimate = v;
    }
    config.validate()?;
    Ok(Resolved { scenario, config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use dashsim::{ChannelModel, MethodKind};

    fn flags(scenario: &str) -> Overrides {
        Overrides {
            scenario: Some(scenario.into()),
            ..Overrides::default()
        }
    }

    #[test]
    fn flags_beat_file_beat_preset() {
        let file: Table = "seed = 7\nepisodes = 3\n[controller.strategy]\nkind = \"imms\"\nwindow = 10\n"
            .parse()
            .unwrap();
        let r = resolve(Some(file.clone()), &flags("markov")).unwrap();
        assert_eq!(r.config.seed, 7);
        assert_eq!(r.config.episodes, 3);
        assert_eq!(r.config.controller.strategy, Strategy::Imms { window: 10 });
        assert_eq!(r.config.channel, ChannelModel::default_markov(0.5));

        let over = Overrides {
            seed: Some(2),
            controller: Some(Strategy::Fixed {
                method: MethodKind::PdController,
            }),
            ..flags("markov")
        };
        let r = resolve(Some(file), &over).unwrap();
        assert_eq!(r.config.seed, 2);
        assert_eq!(r.config.controller.strategy.label(), "fixed:pd");
    }

    #[test]
    fn switching_variant_replaces_table() {
        let file: Table = "[channel]\nkind = \"constant\"\nkbps = 1500.0\n".parse().unwrap();
        let r = resolve(Some(file), &flags("markov")).unwrap();
        assert_eq!(r.config.channel, ChannelModel::Constant { kbps: 1500.0 });
    }

    #[test]
    fn scenario_can_come_from_file() {
        let file: Table = "scenario = \"abrupt\"\nepisodes = 4\n".parse().unwrap();
        let r = resolve(Some(file), &Overrides::default()).unwrap();
        assert_eq!(r.scenario, "abrupt");
        assert_eq!(dashsim::change_segment(&r.config), Some(800));
        assert!(resolve(None, &Overrides::default()).is_err());
    }

    #[test]
    fn bad_keys_are_named() {
        let file: Table = "b_max = -1.0\n".parse().unwrap();
        let err = resolve(Some(file), &flags("constant")).unwrap_err().to_string();
        assert!(err.contains("b_max"), "{err}");
        let file: Table = "[reward]\nw_bogus = 1.0\n".parse().unwrap();
        let err = resolve(Some(file), &flags("constant")).unwrap_err().to_string();
        assert!(err.contains("w_bogus"), "{err}");
    }
}
