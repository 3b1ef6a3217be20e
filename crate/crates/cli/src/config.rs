//! Config files merged with command-line flags, flags winning.
//!
//! A config file is a TOML document with global keys (`seed`, `jobs`,
//! `out_dir`) and one table per command. The resolved values are written
//! back as `run_config.toml`, which can be passed to `--config` to replay a
//! run.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Bad flags, a bad config file or missing inputs; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn load_file(path: Option<&Path>) -> Result<toml::Table> {
    let Some(path) = path else {
        return Ok(toml::Table::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<toml::Table>()
        .map_err(|e| usage(format!("config {}: {}", path.display(), e.to_string().trim_end())))
}

/// Overlay `flags` on `base` and deserialize the result.
fn overlay<C: DeserializeOwned>(mut base: toml::Table, flags: &impl Serialize, what: &str) -> Result<C> {
    let flags = toml::Table::try_from(flags).context("serializing flags")?;
    base.extend(flags);
    toml::Value::Table(base)
        .try_into()
        .map_err(|e| usage(format!("{what}: {}", e.to_string().trim_end())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalConfig {
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub jobs: usize,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Default, Serialize)]
pub struct GlobalFlags {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

/// Global settings: top-level scalar keys of the file overlaid by flags.
pub fn resolve_global(file: &toml::Table, flags: &GlobalFlags) -> Result<GlobalConfig> {
    let base: toml::Table = file
        .iter()
        .filter(|(_, v)| !v.is_table())
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    overlay(base, flags, "global settings")
}

/// Command settings: the file's `[section]` table overlaid by flags.
pub fn resolve_command<C: DeserializeOwned>(
    file: &toml::Table,
    section: &str,
    flags: &impl Serialize,
) -> Result<C> {
    let base = match file.get(section) {
        None => toml::Table::new(),
        Some(toml::Value::Table(t)) => t.clone(),
        Some(_) => return Err(usage(format!("config key {section:?} must be a table"))),
    };
    overlay(base, flags, &format!("[{section}] settings"))
}

/// The effective configuration of one run.
pub fn render(global: &GlobalConfig, section: &str, command: &impl Serialize) -> Result<String> {
    let mut table = toml::Table::try_from(global)?;
    table.insert(section.to_string(), toml::Value::try_from(command)?);
    Ok(toml::to_string(&table)?)
}
