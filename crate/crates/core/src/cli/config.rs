use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::analysis::EvalOptions;
use crate::error::{Error, Result};
use crate::memplan::preset;
use crate::model::NetworkConfig;
use crate::training::TrainConfig;

/// Train / eval config file. Every table and key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: NetworkConfig,
    pub train: TrainConfig,
    pub eval: EvalOptions,
    /// Share of `--data` held out for validation when `--val` is absent.
    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: NetworkConfig::default(),
            train: TrainConfig::default(),
            eval: EvalOptions::default(),
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub configs: Vec<SweepEntry>,
}

/// One sweep row: either a preset name or a model table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub preset: Option<String>,
    pub model: Option<NetworkConfig>,
    pub accuracy: Option<f64>,
}

impl SweepEntry {
    pub fn resolve(&self) -> Result<NetworkConfig> {
        match (&self.preset, &self.model) {
            (Some(p), None) => {
                preset(p).ok_or_else(|| Error::Config(format!("unknown preset `{p}`")))
            }
            (None, Some(m)) => Ok(m.clone()),
            _ => Err(Error::Config(
                "each sweep entry needs exactly one of `preset` or `model`".into(),
            )),
        }
    }
}

/// Closest candidate by Jaro-Winkler similarity, if reasonably close.
fn suggest<'a>(key: &str, candidates: impl Iterator<Item = &'a str>) -> Option<String> {
    candidates
        .map(|c| (strsim::jaro_winkler(key, c), c))
        .filter(|(s, _)| *s >= 0.7)
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, c)| c.to_string())
}

/// Backticked names after `expected` in a serde error message.
fn expected_names(msg: &str) -> Vec<&str> {
    msg.split_once("expected")
        .map(|(_, rest)| rest.split('`').skip(1).step_by(2).collect())
        .unwrap_or_default()
}

fn config_error(msg: &str) -> Error {
    let flat = msg.split_whitespace().collect::<Vec<_>>().join(" ");
    if let Some((_, rest)) = flat.split_once("unknown field `") {
        let key = rest.split('`').next().unwrap_or_default().to_string();
        let suggestion = suggest(&key, expected_names(rest).into_iter());
        return Error::ConfigKey { key, suggestion };
    }
    if let Some((_, rest)) = flat.split_once("unknown variant `") {
        let value = rest.split('`').next().unwrap_or_default();
        let hint = suggest(value, expected_names(rest).into_iter())
            .map(|s| format!(" (did you mean `{s}`?)"))
            .unwrap_or_default();
        return Error::Config(format!("unknown value `{value}`{hint}"));
    }
    Error::Config(flat)
}

/// Deserialize TOML; unknown keys name the nearest valid key.
pub fn parse_toml<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| config_error(&e.to_string()))
}

pub fn load_toml<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingPath(path.to_path_buf()))?;
    parse_toml(&text)
}

/// Whether the TOML document sets the nested key `path`.
pub fn has_key(text: &str, path: &[&str]) -> Result<bool> {
    let root: toml::Value = toml::from_str(text).map_err(|e| config_error(&e.to_string()))?;
    let mut v = &root;
    for k in path {
        match v.get(k) {
            Some(next) => v = next,
            None => return Ok(false),
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misspelled_key_gets_suggestion() {
        let e = parse_toml::<RunConfig>("[model]\nlayerz = 3\n").unwrap_err();
        match e {
            Error::ConfigKey { key, suggestion } => {
                assert_eq!(key, "layerz");
                assert_eq!(suggestion.as_deref(), Some("layers"));
            }
            other => panic!("{other:?}"),
        }
        let e = parse_toml::<RunConfig>("[train]\nbatch_sise = 8\n").unwrap_err();
        assert!(e.to_string().contains("batch_size"), "{e}");
    }

    #[test]
    fn misspelled_variant_gets_suggestion() {
        let e = parse_toml::<RunConfig>("[model.conv]\nvariant = \"eidd\"\n").unwrap_err();
        assert!(e.to_string().contains("`eid`"), "{e}");
    }

    #[test]
    fn empty_file_is_defaults() {
        assert_eq!(parse_toml::<RunConfig>("").unwrap(), RunConfig::default());
    }

    #[test]
    fn nested_key_presence() {
        let t = "[model.conv]\nmax_delay = 4\n";
        assert!(has_key(t, &["model", "conv", "max_delay"]).unwrap());
        assert!(!has_key(t, &["model", "conv", "taps"]).unwrap());
    }

    #[test]
    fn sweep_entries_resolve() {
        let s: SweepFile = parse_toml("[[configs]]\npreset = \"scifar-mgrade-cd\"\naccuracy = 0.8\n[[configs]]\n[configs.model]\nlayers = 1\n").unwrap();
        assert_eq!(s.configs.len(), 2);
        assert_eq!(s.configs[1].resolve().unwrap().layers, 1);
        assert!(SweepEntry::default().resolve().is_err());
    }
}
