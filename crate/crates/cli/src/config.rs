//! Run configuration: a flat JSON object with dotted keys, overridable by
//! `MGDPR_<KEY>` environment variables (uppercased, dots as underscores).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use mgdpr_core::market_data::{DateRange, DEFAULT_COVERAGE};
use mgdpr_core::model::ModelConfig;
use mgdpr_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const ENV_PREFIX: &str = "MGDPR_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory of raw per-instrument CSV files.
    pub data: PathBuf,
    pub cache: PathBuf,
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train: DateRange,
    pub val: DateRange,
    pub test: DateRange,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataOptions {
    /// Minimum fraction of calendar days a ticker must cover.
    pub coverage: f64,
}

impl Default for DataOptions {
    fn default() -> Self {
        Self {
            coverage: DEFAULT_COVERAGE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_market")]
    pub market: String,
    pub paths: Paths,
    pub split: SplitConfig,
    #[serde(default)]
    pub data: DataOptions,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_market() -> String {
    "custom".into()
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

/// Keys the user set explicitly, so derived values can be checked rather
/// than silently replaced.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub explicit: Vec<String>,
}

fn flatten_into(prefix: &str, value: Value, out: &mut BTreeMap<String, Value>) {
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k } else { format!("{prefix}.{k}") };
                flatten_into(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other);
        }
    }
}

pub fn flatten(value: Value) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::new();
    flatten_into("", value, &mut out);
    out
}

fn unflatten(flat: &BTreeMap<String, Value>) -> Result<Value, CliError> {
    let mut root = Map::new();
    for (key, value) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for part in &parts[..parts.len() - 1] {
            let entry = node.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
            node = entry
                .as_object_mut()
                .ok_or_else(|| CliError::config(format!("key {key:?} collides with a scalar key")))?;
        }
        node.insert(parts[parts.len() - 1].to_string(), value.clone());
    }
    Ok(Value::Object(root))
}

/// Every key a configuration file may set.
fn known_keys() -> Vec<String> {
    let d = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let range = DateRange::new(d, d);
    let template = RunConfig {
        market: default_market(),
        paths: Paths {
            data: PathBuf::new(),
            cache: PathBuf::new(),
            output: PathBuf::new(),
        },
        split: SplitConfig {
            train: range,
            val: range,
            test: range,
        },
        data: DataOptions::default(),
        model: ModelConfig::default(),
        train: TrainConfig::default(),
        seeds: default_seeds(),
    };
    let mut keys: Vec<String> = flatten(serde_json::to_value(template).expect("serializable"))
        .into_keys()
        .filter(|k| k != "train.seed")
        .collect();
    keys.push("model.preset".into());
    keys
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"))
}

fn preset(name: &str) -> Result<ModelConfig, CliError> {
    match name {
        "nasdaq" => Ok(ModelConfig::nasdaq(2)),
        "nyse" => Ok(ModelConfig::nyse(2)),
        "sse" => Ok(ModelConfig::sse(2)),
        other => Err(CliError::config(format!(
            "unknown model.preset {other:?} (expected nasdaq, nyse or sse)"
        ))),
    }
}

/// Parses a configuration file, applies `env` overrides and resolves relative
/// paths against the file's directory.
pub fn load(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> Result<Loaded, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("config {} is not valid JSON: {e}", path.display())))?;
    if !value.is_object() {
        return Err(CliError::config(format!("config {} must be a JSON object", path.display())));
    }
    let mut flat = flatten(value);

    let known = known_keys();
    let env: BTreeMap<String, String> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    for key in &known {
        if let Some(raw) = env.get(&env_name(key)) {
            let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            log::info!("{} overrides {key}", env_name(key));
            flat.insert(key.clone(), parsed);
        }
    }
    if let Some(unknown) = flat.keys().find(|k| !known.contains(k)) {
        let hint = if unknown == "train.seed" { "; list seeds under \"seeds\"" } else { "" };
        return Err(CliError::config(format!("unknown config key {unknown:?}{hint}")));
    }
    let explicit: Vec<String> = flat.keys().cloned().collect();

    let model_base = match flat.remove("model.preset") {
        None => ModelConfig::default(),
        Some(Value::String(name)) => preset(&name)?,
        Some(other) => return Err(CliError::config(format!("model.preset must be a string, got {other}"))),
    };
    for (k, v) in flatten(serde_json::to_value(model_base).expect("serializable")) {
        flat.entry(format!("model.{k}")).or_insert(v);
    }

    let mut config: RunConfig = serde_json::from_value(unflatten(&flat)?)
        .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    for p in [&mut config.paths.data, &mut config.paths.cache, &mut config.paths.output] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    config.validate()?;
    Ok(Loaded { config, explicit })
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::config("seeds must list at least one seed"));
        }
        if !(self.data.coverage > 0.0 && self.data.coverage <= 1.0) {
            return Err(CliError::config(format!("data.coverage {} outside (0, 1]", self.data.coverage)));
        }
        let s = &self.split;
        for (name, r) in [("train", s.train), ("val", s.val), ("test", s.test)] {
            if r.start > r.end {
                return Err(CliError::config(format!("split.{name} ends before it starts")));
            }
        }
        if s.train.end >= s.val.start || s.val.end >= s.test.start {
            return Err(CliError::config("split ranges must be disjoint and ordered train < val < test"));
        }
        self.model.validate().map_err(|e| CliError::config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }

    pub fn panel_dir(&self) -> PathBuf {
        self.paths.cache.join("panel")
    }

    pub fn graph_dir(&self) -> PathBuf {
        self.paths.cache.join("graphs")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.paths.output.join(format!("seed_{seed}"))
    }

    /// Flat, fully expanded form; loading it back reproduces this config.
    pub fn resolved(&self) -> BTreeMap<String, Value> {
        let mut flat = flatten(serde_json::to_value(self).expect("serializable"));
        flat.remove("train.seed");
        flat
    }

    /// SHA-256 of every setting that influences results (paths and seeds
    /// excluded), as hex.
    pub fn hash(&self) -> String {
        let mut flat = self.resolved();
        flat.retain(|k, _| !k.starts_with("paths.") && k != "seeds");
        let bytes = serde_json::to_vec(&flat).expect("serializable");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("run.json");
        std::fs::write(&p, body).unwrap();
        p
    }

    const MINIMAL: &str = r#"{
        "paths.data": "raw", "paths.cache": "cache", "paths.output": "out",
        "split.train.start": "2020-01-01", "split.train.end": "2020-06-30",
        "split.val.start": "2020-07-01", "split.val.end": "2020-09-30",
        "split.test.start": "2020-10-01", "split.test.end": "2020-12-31"
    }"#;

    #[test]
    fn defaults_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        let loaded = load(&write(dir.path(), MINIMAL), []).unwrap();
        let c = loaded.config;
        assert_eq!(c.model.tau, 21);
        assert_eq!(c.train.epochs, 900);
        assert_eq!(c.seeds, vec![0]);
        assert_eq!(c.paths.data, dir.path().join("raw"));
    }

    #[test]
    fn env_overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let env = [
            ("MGDPR_TRAIN_EPOCHS".to_string(), "12".to_string()),
            ("MGDPR_MODEL_ADJACENCY".to_string(), "raw".to_string()),
            ("HOME".to_string(), "/x".to_string()),
        ];
        let c = load(&write(dir.path(), MINIMAL), env).unwrap().config;
        assert_eq!(c.train.epochs, 12);
        assert_eq!(c.model.adjacency, mgdpr_core::model::AdjacencyMode::Raw);
    }

    #[test]
    fn presets_apply_under_explicit_keys() {
        let dir = tempfile::tempdir().unwrap();
        let body = MINIMAL.replace('}', r#", "model.preset": "sse", "model.layers": 2}"#);
        let c = load(&write(dir.path(), &body), []).unwrap().config;
        assert_eq!((c.model.layers, c.model.expansion_steps), (2, 3));
    }

    #[test]
    fn unknown_keys_and_bad_splits_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let typo = MINIMAL.replace('}', r#", "train.epoch": 3}"#);
        assert!(load(&write(dir.path(), &typo), []).unwrap_err().to_string().contains("train.epoch"));
        let overlap = MINIMAL.replace("2020-07-01", "2020-06-01");
        assert!(load(&write(dir.path(), &overlap), []).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let c = load(&write(dir.path(), MINIMAL), []).unwrap().config;
        let body = serde_json::to_string(&c.resolved()).unwrap();
        let again = load(&write(dir.path(), &body), []).unwrap().config;
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn hash_ignores_paths_but_not_hyperparameters() {
        let dir = tempfile::tempdir().unwrap();
        let a = load(&write(dir.path(), MINIMAL), []).unwrap().config;
        let mut b = a.clone();
        b.paths.output = PathBuf::from("/elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.train.learning_rate = 1e-3;
        assert_ne!(a.hash(), b.hash());
    }
}
