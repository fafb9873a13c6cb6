//! Run configuration file: a structured-text (TOML) schema binding the
//! model, training, data-generation, sweep, and noise-study settings.
//! Unknown keys are rejected; the file hash is recorded in run manifests for
//! provenance.

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::synthdata::{GridSpec, MaterialConstants, SynthParams};
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

fn default_schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_n_points() -> usize {
    32
}
fn default_h_range() -> (f64, f64) {
    (2.0, 20.0)
}
fn default_p_range() -> (f64, f64) {
    (40.0, 190.0)
}
fn default_val_fraction() -> f64 {
    0.15
}
fn default_test_fraction() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: String,
    pub n_points: usize,
    pub h_range: (f64, f64),
    pub p_range: (f64, f64),
    pub grid: GridSpec,
    pub material: MaterialConstants,
    pub synth: SynthParams,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: "data".into(),
            n_points: default_n_points(),
            h_range: default_h_range(),
            p_range: default_p_range(),
            grid: GridSpec::default(),
            material: MaterialConstants::default(),
            synth: SynthParams::default(),
            val_fraction: default_val_fraction(),
            test_fraction: default_test_fraction(),
        }
    }
}

fn default_cq_values() -> Vec<usize> {
    vec![0, 3, 5, 8]
}
fn default_folds() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub cq_values: Vec<usize>,
    pub folds: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            cq_values: default_cq_values(),
            folds: default_folds(),
        }
    }
}

fn default_shots_grid() -> Vec<usize> {
    vec![100, 500, 1000, 5000, 10000]
}
fn default_repeats() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseStudyConfig {
    pub shots_grid: Vec<usize>,
    pub n_repeats: usize,
    /// Path to a noise profile TOML; empty selects the built-in profile.
    pub profile: String,
}

impl Default for NoiseStudyConfig {
    fn default() -> Self {
        NoiseStudyConfig {
            shots_grid: default_shots_grid(),
            n_repeats: default_repeats(),
            profile: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub output_dir: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub noise: NoiseStudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: default_schema_version(),
            seed: 0,
            output_dir: "runs".into(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            sweep: SweepConfig::default(),
            noise: NoiseStudyConfig::default(),
        }
    }
}

/// Configuration plus the hash of the exact bytes it was parsed from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub hash: String,
    pub path: String,
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let config: RunConfig =
        toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
    if config.schema_version != SCHEMA_VERSION {
        return Err(Error::config(format!(
            "config schema version {} unsupported (expected {SCHEMA_VERSION})",
            config.schema_version
        )));
    }
    config.model.validate()?;
    Ok(config)
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    let hash: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let text =
        String::from_utf8(bytes).map_err(|e| Error::config(format!("config not utf-8: {e}")))?;
    Ok(LoadedConfig {
        config: parse_config(&text)?,
        hash,
        path: path.display().to_string(),
    })
}

/// Per-run provenance record written next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub schema_version: u32,
    pub config_hash: String,
    pub config_path: String,
    pub seed: u64,
    pub crate_version: String,
    pub duration_secs: f64,
}

pub fn write_manifest(dir: &Path, manifest: &RunManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Data(format!("manifest encode: {e}")))?;
    std::fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}
