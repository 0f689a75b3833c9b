//! Config resolution: defaults, then the TOML file, then `CROWDNAV_*`
//! environment variables, then command-line flags.
//!
//! Environment variables map one-to-one onto config keys as
//! `CROWDNAV_<SECTION>_<KEY>` (e.g. `CROWDNAV_ENV_BETA=0.3`,
//! `CROWDNAV_TRAIN_GAMMA=0.95`).

use anyhow::{bail, Context, Result};
use crowdnav::env::EnvConfig;
use crowdnav::rl::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const ENV_PREFIX: &str = "CROWDNAV";

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub env: EnvConfig,
    pub train: TrainConfig,
}

/// Loads the config file (defaults when absent) and applies environment
/// overrides. Flag overrides happen at the command layer.
pub fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config file {}", p.display()))?;
            text.parse::<toml::Value>()
                .with_context(|| format!("cannot parse config file {}", p.display()))?
        }
        None => toml::Value::Table(Default::default()),
    };
    apply_env_overrides(&mut value)?;
    let cfg: FileConfig = value
        .try_into()
        .context("config does not match the expected schema")?;
    Ok(cfg)
}

/// Rewrites config entries from `CROWDNAV_<SECTION>_<KEY>` variables. Typed
/// by the default config, so every known key accepts an override even when
/// the file omits it.
fn apply_env_overrides(value: &mut toml::Value) -> Result<()> {
    let defaults = toml::Value::try_from(FileConfig::default()).expect("defaults serialize");
    let root = value
        .as_table_mut()
        .context("config root must be a table")?;
    for (section, template) in defaults.as_table().unwrap() {
        let template = template.as_table().unwrap();
        for (key, default_entry) in template {
            let var = format!(
                "{ENV_PREFIX}_{}_{}",
                section.to_uppercase(),
                key.to_uppercase()
            );
            let Ok(raw) = std::env::var(&var) else {
                continue;
            };
            let parsed = parse_as(&raw, default_entry)
                .with_context(|| format!("invalid value in {var}: `{raw}`"))?;
            root.entry(section.clone())
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .context("config section must be a table")?
                .insert(key.clone(), parsed);
        }
    }
    Ok(())
}

fn parse_as(raw: &str, like: &toml::Value) -> Result<toml::Value> {
    Ok(match like {
        toml::Value::Integer(_) => toml::Value::Integer(raw.parse()?),
        toml::Value::Float(_) => toml::Value::Float(raw.parse()?),
        toml::Value::Boolean(_) => toml::Value::Boolean(raw.parse()?),
        toml::Value::String(_) => toml::Value::String(raw.to_string()),
        other => bail!("unsupported config entry type {}", other.type_str()),
    })
}
