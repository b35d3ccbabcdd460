//! Run configuration file (TOML). Any flag can come from here; command-line
//! flags win. The effective configuration is echoed into the output
//! directory so a run can be reproduced exactly.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use todeval::harness::RunConfig;

use crate::Resolved;

#[derive(Debug, Default, Deserialize)]
pub struct FileConfig {
    pub split: Option<PathBuf>,
    pub lang: Option<String>,
    pub ontology_dir: Option<PathBuf>,
    pub banks_dir: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub provider: Option<String>,
    pub script: Option<PathBuf>,
    pub model: Option<String>,
    pub cache_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub max_output_tokens: Option<u32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<FileConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Serialize)]
struct EffectiveConfig<'a> {
    split: &'a Path,
    lang: Option<String>,
    ontology_dir: &'a Path,
    banks_dir: &'a Path,
    templates_dir: Option<&'a Path>,
    provider: &'a str,
    script: Option<&'a Path>,
    model: &'a str,
    cache_dir: Option<&'a Path>,
    workers: usize,
    max_output_tokens: u32,
    mode: String,
    subtasks: Vec<String>,
    trace: bool,
}

pub fn write_effective(path: &Path, resolved: &Resolved, run: &RunConfig) -> Result<()> {
    let effective = EffectiveConfig {
        split: &resolved.split,
        lang: resolved.lang.map(|l| l.code().to_string()),
        ontology_dir: &resolved.ontology_dir,
        banks_dir: &resolved.banks_dir,
        templates_dir: resolved.templates_dir.as_deref(),
        provider: &resolved.provider,
        script: resolved.script.as_deref(),
        model: &resolved.model,
        cache_dir: resolved.cache_dir.as_deref(),
        workers: run.workers,
        max_output_tokens: run.decoding.max_output_tokens,
        mode: serde_json::to_value(run.mode)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default(),
        subtasks: run
            .subtasks
            .iter()
            .filter_map(|s| serde_json::to_value(s).ok()?.as_str().map(String::from))
            .collect(),
        trace: run.collect_traces,
    };
    let text = toml::to_string_pretty(&effective).context("serializing effective config")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
