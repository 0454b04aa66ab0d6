//! Run configuration: one TOML file plus `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use bayesic::agent_embedding::EmbeddingConfig;
use bayesic::dataset::CsvSchema;
use bayesic::duration_model::DurationConfig;
use bayesic::poi_model::PoiConfig;
use bayesic::synthgen::{AnomalySpec, GeneratorConfig};
use bayesic::training::{PipelineConfig, TrainingConfig};
use serde::{Deserialize, Serialize};

pub const CONFIG_ENV: &str = "BAYESIC_CONFIG";

/// Every setting of a run. `seed` has no default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds generation, injection and training.
    pub seed: u64,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub anomalies: AnomalySpec,
    #[serde(default)]
    pub schema: CsvSchema,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub poi: PoiConfig,
    #[serde(default)]
    pub duration: DurationConfig,
}

impl RunConfig {
    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            training: TrainingConfig { seed: self.seed, ..self.training.clone() },
            embedding: self.embedding.clone(),
            poi: self.poi.clone(),
            duration: self.duration.clone(),
        }
    }
}

/// Config path from the flag, else from `BAYESIC_CONFIG`.
pub fn config_path(flag: Option<&Path>) -> Option<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(CONFIG_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

/// Reads the file (if any), applies overrides in order, then validates.
pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => toml::Table::new(),
    };
    for item in overrides {
        apply_override(&mut table, item)?;
    }
    if table
        .get("training")
        .and_then(|t| t.as_table())
        .is_some_and(|t| t.contains_key("seed"))
    {
        bail!("`training.seed` is not a config key; set the top-level `seed`");
    }
    if !table.contains_key("seed") {
        bail!("missing `seed`: seeds are mandatory (set `seed = ...` or pass `--set seed=...`)");
    }
    let mut config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| anyhow!("invalid config: {}", e.message()))?;
    config.training.seed = config.seed;
    config.pipeline().validate().context("invalid model configuration")?;
    Ok(config)
}

/// Sets a dotted `key=value`; the value is read as TOML, else as a string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{item}` is not of the form key=value"))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        bail!("override `{item}` has an empty key segment");
    }
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.split('.').collect();
    let (last, parents) = parts.split_last().expect("at least one segment");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override `{key}`: `{p}` is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_typed_values() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "seed=7").unwrap();
        apply_override(&mut t, "training.epochs = 3").unwrap();
        apply_override(&mut t, "training.use_poi=false").unwrap();
        apply_override(&mut t, "anomalies.kind=work").unwrap();
        apply_override(&mut t, "training.learning_rate=5e-4").unwrap();
        assert_eq!(t["seed"].as_integer(), Some(7));
        assert_eq!(t["training"]["epochs"].as_integer(), Some(3));
        assert_eq!(t["training"]["use_poi"].as_bool(), Some(false));
        assert_eq!(t["anomalies"]["kind"].as_str(), Some("work"));
        assert_eq!(t["training"]["learning_rate"].as_float(), Some(5e-4));
        assert!(apply_override(&mut t, "novalue").is_err());
        assert!(apply_override(&mut t, "a..b=1").is_err());
        assert!(apply_override(&mut t, "seed.x=1").is_err());
    }

    #[test]
    fn seed_is_mandatory() {
        let err = resolve(None, &[]).unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
        let c = resolve(None, &["seed=3".into()]).unwrap();
        assert_eq!(c.pipeline().training.seed, 3);
        assert!(resolve(None, &["seed=3".into(), "training.seed=4".into()]).is_err());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = resolve(None, &["seed=1".into(), "training.epoch=3".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("epoch"), "{err:#}");
        let err = resolve(None, &["seed=1".into(), "bogus=3".into()]).unwrap_err();
        assert!(format!("{err:#}").contains("bogus"), "{err:#}");
    }

    #[test]
    fn invalid_model_config_is_rejected() {
        assert!(resolve(None, &["seed=1".into(), "training.epochs=0".into()]).is_err());
    }
}
