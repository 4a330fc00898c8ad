//! TOML run configuration. Command-line flags win over file values.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use docie_core::{ModelConfig, ReportFormat, SplitFractions, SynthConfig, TrainConfig};
use serde::Deserialize;
use serde_json::Value;

use crate::UsageError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Narrow layers sized for CPU runs.
    #[default]
    Desk,
    /// Full layer widths.
    Full,
}

/// Input and output locations. Relative paths in a config file resolve
/// against the file's directory.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub gold: Option<PathBuf>,
    pub pred: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub labeled: Option<PathBuf>,
    pub corrected: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.train,
            &mut self.dev,
            &mut self.gold,
            &mut self.pred,
            &mut self.model,
            &mut self.kb,
            &mut self.labeled,
            &mut self.corrected,
            &mut self.output,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub documents: usize,
    /// Start from the noisy generator settings instead of the clean ones.
    pub noisy: bool,
    /// Generator fields, merged over the chosen base settings.
    pub generator: Option<toml::Table>,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            documents: 300,
            noisy: false,
            generator: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlignSection {
    /// Threshold used when no labeled file is given.
    pub epsilon: f64,
    /// Candidate thresholds for selection on labeled documents.
    pub grid: Vec<f64>,
}

impl Default for AlignSection {
    fn default() -> Self {
        AlignSection {
            epsilon: 0.5,
            grid: (0..=20).map(|i| i as f64 / 20.0).collect(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub format: ReportFormat,
    pub jobs: Option<usize>,
    pub preset: Preset,
    /// Model fields, deep-merged over the preset.
    pub model: Option<toml::Table>,
    pub training: TrainConfig,
    pub synth: SynthSection,
    pub split: Option<SplitFractions>,
    pub kbalign: AlignSection,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(UsageError(format!("config file not found: {}", path.display())).into());
        }
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| UsageError(format!("invalid config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.rebase(base);
        Ok(cfg)
    }

    pub fn model_config(&self, preset: Preset) -> Result<ModelConfig> {
        let base = match preset {
            Preset::Desk => ModelConfig::desk(),
            Preset::Full => ModelConfig::default(),
        };
        overlay(&base, self.model.as_ref(), "model")
    }

    pub fn synth_config(&self, noisy: bool) -> Result<SynthConfig> {
        let base = if noisy { SynthConfig::noisy() } else { SynthConfig::default() };
        overlay(&base, self.synth.generator.as_ref(), "synth.generator")
    }
}

/// Deserializes `base` with the fields of `table` merged in recursively.
fn overlay<T>(base: &T, table: Option<&toml::Table>, section: &str) -> Result<T>
where
    T: serde::Serialize + for<'de> Deserialize<'de>,
{
    let mut value = serde_json::to_value(base)?;
    if let Some(t) = table {
        merge(&mut value, serde_json::to_value(t)?);
    }
    serde_json::from_value(value).map_err(|e| UsageError(format!("invalid [{section}] settings: {e}")).into())
}

fn merge(dst: &mut Value, src: Value) {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (k, v) in s {
                match d.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        d.insert(k, v);
                    }
                }
            }
        }
        (d, s) => *d = s,
    }
}
