//! Experiment configuration files and the metrics CSV schema.
//!
//! One JSON config describes a full experiment: geometry, data paths,
//! training settings (optionally a list of seeds for repeated runs), and a
//! list of attack sweeps to run against the trained checkpoint. Unknown
//! fields are rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::AttackKind;
use crate::error::{Error, Result};
use crate::graph::Mode;
use crate::loss::LossKind;
use crate::network::{parse_geometry, DEFAULT_U_MAX};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    pub geometry: String,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    pub data: DataPaths,
    pub train: TrainSection,
    #[serde(default)]
    pub attacks: Vec<AttackSection>,
    pub output_csv: PathBuf,
    pub checkpoint: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Defaults per family: square error for radial and sigmoid networks,
    /// softmax cross-entropy for ReLU.
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default = "default_mode")]
    pub gradient_mode: Mode,
    #[serde(default)]
    pub regularizer_c: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Run once per seed and append summary rows; overrides `seed`.
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    /// Evaluate on only the first n test examples (speeds up sweeps).
    #[serde(default)]
    pub test_limit: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: AttackKind,
    pub epsilons: Vec<f64>,
    #[serde(default = "default_ifgsm_steps")]
    pub ifgsm_steps: usize,
    #[serde(default = "default_pgd_steps")]
    pub pgd_steps: usize,
    #[serde(default = "default_pgd_restarts")]
    pub pgd_restarts: usize,
    #[serde(default = "default_attack_seed")]
    pub seed: u64,
    /// Attacks differentiate the real loss by default; pseudo mode is for
    /// probing how much the training surrogate helps an attacker.
    #[serde(default = "default_attack_mode")]
    pub gradient_mode: Mode,
    #[serde(default)]
    pub limit: Option<usize>,
}

fn default_u_max() -> f64 {
    DEFAULT_U_MAX
}

fn default_batch() -> usize {
    100
}

fn default_mode() -> Mode {
    Mode::Pseudo
}

fn default_attack_mode() -> Mode {
    Mode::True
}

fn default_seed() -> u64 {
    1
}

fn default_attack_seed() -> u64 {
    7
}

fn default_ifgsm_steps() -> usize {
    10
}

fn default_pgd_steps() -> usize {
    100
}

fn default_pgd_restarts() -> usize {
    20
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    parse_geometry(&cfg.geometry)?;
    if !(cfg.u_max.is_finite() && cfg.u_max > crate::network::U_LO) {
        return Err(Error::Config(format!(
            "u_max must be finite and above {}, got {}",
            crate::network::U_LO,
            cfg.u_max
        )));
    }
    if cfg.train.batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    if cfg.train.seeds.as_ref().is_some_and(|s| s.is_empty()) {
        return Err(Error::Config("seeds list must not be empty".into()));
    }
    if cfg.experiment_id.is_empty() {
        return Err(Error::Config("experiment_id must not be empty".into()));
    }
    for (i, a) in cfg.attacks.iter().enumerate() {
        if a.epsilons.is_empty() {
            return Err(Error::Config(format!("attack {i} has no epsilons")));
        }
        for &e in &a.epsilons {
            if !(e.is_finite() && e >= 0.0) {
                return Err(Error::Config(format!(
                    "attack {i} epsilon {e} must be finite and nonnegative"
                )));
            }
        }
        if a.kind == AttackKind::Ifgsm && a.ifgsm_steps == 0 {
            return Err(Error::Config(format!("attack {i} needs ifgsm_steps >= 1")));
        }
        if a.kind == AttackKind::Pgd && (a.pgd_steps == 0 || a.pgd_restarts == 0) {
            return Err(Error::Config(format!(
                "attack {i} needs pgd_steps and pgd_restarts >= 1"
            )));
        }
    }
    Ok(())
}

/// One row of the metrics CSV. Epoch rows carry loss/accuracy/bound, attack
/// rows carry epsilon and attacked accuracy, summary rows aggregate the
/// final accuracy across seeds. Accuracies are fractions in [0,1].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub experiment_id: String,
    pub geometry: String,
    pub seed: u64,
    /// "epoch:N", "attack:<kind>", "summary:mean" or "summary:stddev".
    pub record: String,
    pub epsilon: Option<f64>,
    pub train_loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub sensitivity_bound: Option<f64>,
    pub wall_s: f64,
}

pub struct MetricsWriter {
    w: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        Ok(MetricsWriter {
            w: csv::Writer::from_writer(std::fs::File::create(path)?),
        })
    }

    pub fn write(&mut self, rec: &MetricsRecord) -> Result<()> {
        self.w
            .serialize(rec)
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w
            .flush()
            .map_err(|e| Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }
}

/// Sample mean and standard deviation (n-1 denominator; 0 for one value).
pub fn mean_stddev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
