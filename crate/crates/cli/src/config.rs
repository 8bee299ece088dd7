//! The run configuration file (TOML) and its hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use igd_core::reverse::SamplerConfig;
use igd_core::schedule::ScheduleConfig;
use igd_nn::{DiscoDitConfig, TrainerConfig};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    /// An enumerable all-discrete target given as a full probability table,
    /// states indexed by their tokens read as base-|X| digits with position 0
    /// most significant.
    ToyDiscrete {
        #[serde(default = "default_toy_len")]
        length: usize,
        #[serde(default = "default_toy_vocab")]
        vocab: u32,
        #[serde(default = "default_toy_probs")]
        probs: Vec<f64>,
    },
    /// One binary label and one scalar: label-dependent Gaussians.
    ToyMixed {
        #[serde(default = "default_mixed_probs")]
        label_probs: Vec<f64>,
        #[serde(default = "default_mixed_means")]
        means: Vec<f64>,
        #[serde(default = "default_mixed_sigma")]
        sigma: f64,
    },
    Ring {
        #[serde(default = "default_ring_labels")]
        labels: usize,
        #[serde(default = "default_ring_sigma")]
        sigma: f64,
    },
    Sat {
        #[serde(default = "default_sat_n")]
        n: usize,
        #[serde(default = "default_sat_train")]
        train_instances: usize,
        #[serde(default = "default_sat_test")]
        test_instances: usize,
        #[serde(default)]
        data_seed: u64,
    },
    Tabular {
        manifest: PathBuf,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
        #[serde(default)]
        data_seed: u64,
    },
}

fn default_toy_len() -> usize {
    3
}
fn default_toy_vocab() -> u32 {
    2
}
fn default_toy_probs() -> Vec<f64> {
    vec![0.35, 0.025, 0.025, 0.25, 0.025, 0.15, 0.15, 0.025]
}
fn default_mixed_probs() -> Vec<f64> {
    vec![0.4, 0.6]
}
fn default_mixed_means() -> Vec<f64> {
    vec![-1.0, 1.0]
}
fn default_mixed_sigma() -> f64 {
    0.5
}
fn default_ring_labels() -> usize {
    4
}
fn default_ring_sigma() -> f64 {
    0.15
}
fn default_sat_n() -> usize {
    4
}
fn default_sat_train() -> usize {
    20_000
}
fn default_sat_test() -> usize {
    200
}
fn default_test_fraction() -> f64 {
    0.2
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::ToyDiscrete { .. } => "toy-discrete",
            TaskConfig::ToyMixed { .. } => "toy-mixed",
            TaskConfig::Ring { .. } => "ring",
            TaskConfig::Sat { .. } => "sat",
            TaskConfig::Tabular { .. } => "tabular",
        }
    }
}

/// Sample counts and bounds of the oracle suite run by `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub mc_samples: usize,
    pub consistency_samples: usize,
    pub contraction_pairs: usize,
    pub terminal_tv: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            mc_samples: 200_000,
            consistency_samples: 200_000,
            contraction_pairs: 10_000,
            terminal_tv: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset: Option<PathBuf>,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub task: TaskConfig,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: DiscoDitConfig,
    #[serde(default)]
    pub trainer: TrainerConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

#[derive(Serialize)]
struct Hashed<'a> {
    task: &'a TaskConfig,
    schedule: &'a ScheduleConfig,
    model: &'a DiscoDitConfig,
    discrete_loss: igd_nn::DiscreteLoss,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    /// Reads the file. Relative paths in it resolve against the file's
    /// directory; `IGD_DATASET`, `IGD_CHECKPOINTS` and `IGD_REPORTS` override
    /// them as given.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.paths.dataset.as_mut() {
            rebase(d);
        }
        rebase(&mut cfg.paths.checkpoints);
        rebase(&mut cfg.paths.reports);
        if let TaskConfig::Tabular { manifest, .. } = &mut cfg.task {
            rebase(manifest);
        }
        if let Ok(v) = std::env::var("IGD_DATASET") {
            cfg.paths.dataset = Some(PathBuf::from(v));
        }
        if let Ok(v) = std::env::var("IGD_CHECKPOINTS") {
            cfg.paths.checkpoints = PathBuf::from(v);
        }
        if let Ok(v) = std::env::var("IGD_REPORTS") {
            cfg.paths.reports = PathBuf::from(v);
        }
        Ok(cfg)
    }

    /// SHA-256 over the task, schedule, model and discrete-loss flavor: the
    /// settings a checkpoint is only valid for.
    pub fn hash(&self) -> String {
        let h = Hashed {
            task: &self.task,
            schedule: &self.schedule,
            model: &self.model,
            discrete_loss: self.trainer.discrete_loss,
        };
        let json = serde_json::to_vec(&h).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// The effective configuration, every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate_sections(&self) -> Result<()> {
        self.model.validate()?;
        self.trainer.validate()?;
        self.sampler.validate()?;
        let v = &self.verify;
        if v.mc_samples == 0
            || v.consistency_samples == 0
            || v.contraction_pairs < 2
            || v.terminal_tv.is_nan()
            || v.terminal_tv <= 0.0
        {
            return Err(CliError::Validation(
                "verify counts must be positive and terminal_tv > 0".into(),
            ));
        }
        Ok(())
    }
}
