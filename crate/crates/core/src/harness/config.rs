//! Experiment configuration: a versioned TOML file describing one
//! algorithm x dataset x seed-grid run.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{FixMatchConfig, SupervisedConfig};
use crate::data::AugmentConfig;
use crate::diffcore::SgdConfig;
use crate::error::{Error, Result};
use crate::scomatch::ScoMatchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Scomatch,
    Fixmatch,
    Supervised,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Algorithm::Scomatch => "scomatch",
            Algorithm::Fixmatch => "fixmatch",
            Algorithm::Supervised => "supervised",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Mnist,
    Csv,
}

/// Synthetic benchmark parameters; the ID class count comes from `[split]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_ood_clusters: usize,
    pub dim: usize,
    pub cluster_separation: f64,
    pub per_cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MnistSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    /// Optional explicit test files; without them the test pool is held out
    /// from the training files.
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvSpec {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub synthetic: Option<SyntheticSpec>,
    pub mnist: Option<MnistSpec>,
    pub csv: Option<CsvSpec>,
}

/// Split sizes; the per-seed split RNG seed is derived from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub num_id_classes: usize,
    pub labels_per_class: usize,
    pub unlabeled_size: usize,
    pub mismatch_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Hidden layer widths, bottom-up.
    pub hidden: Vec<usize>,
}

/// SSL hyperparameters shared by SCOMatch and FixMatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub mu: usize,
    pub tau: f64,
    pub lambda: f64,
    pub ema_alpha: f64,
}

/// SCOMatch-specific knobs; absent fields take the derived defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoSpec {
    pub tau_min: f64,
    /// Defaults to `8 * K`.
    pub queue_capacity: Option<usize>,
    pub enqueue_per_iter: usize,
    /// Defaults to `min(batch_size, queue_capacity)`.
    pub queue_warmup_min: Option<usize>,
    pub cpl_decay: f64,
    pub ood_class_enabled: bool,
    pub use_open_loss: bool,
    pub use_close_loss: bool,
    pub open_weak_term: bool,
    pub dual_head: bool,
}

impl Default for ScoSpec {
    fn default() -> Self {
        ScoSpec {
            tau_min: 0.5,
            queue_capacity: None,
            enqueue_per_iter: 1,
            queue_warmup_min: None,
            cpl_decay: 0.999,
            ood_class_enabled: true,
            use_open_loss: true,
            use_close_loss: true,
            open_weak_term: true,
            dual_head: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub total_iterations: u64,
    pub eval_every: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_on")]
    pub eval_on: EvalTarget,
    pub dataset: DatasetSpec,
    pub split: SplitSpec,
    #[serde(default)]
    pub augment: AugmentConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub optimizer: SgdConfig,
    pub train: TrainSpec,
    #[serde(default)]
    pub scomatch: ScoSpec,
}

fn default_eval_on() -> EvalTarget {
    EvalTarget::Teacher
}

pub const CONFIG_VERSION: u32 = 1;

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(s).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("config encode: {e}")))
    }

    pub fn k(&self) -> usize {
        self.split.num_id_classes
    }

    /// Full semantic validation; every complaint names its field.
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "version: expected {CONFIG_VERSION}, got {}",
                self.version
            )));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds: must not be empty".into()));
        }
        if self.total_iterations == 0 {
            return Err(Error::Config("total_iterations: must be > 0".into()));
        }
        if self.eval_every == 0 || self.eval_every > self.total_iterations {
            return Err(Error::Config(
                "eval_every: must be in 1..=total_iterations".into(),
            ));
        }
        match self.dataset.kind {
            DatasetKind::Synthetic => {
                let spec = self.dataset.synthetic.as_ref().ok_or_else(|| {
                    Error::Config("dataset.synthetic: required for kind = \"synthetic\"".into())
                })?;
                if spec.num_ood_clusters == 0 || spec.dim < 2 || spec.per_cluster == 0 {
                    return Err(Error::Config(
                        "dataset.synthetic: need num_ood_clusters >= 1, dim >= 2, per_cluster >= 1"
                            .into(),
                    ));
                }
            }
            DatasetKind::Mnist => {
                let spec = self.dataset.mnist.as_ref().ok_or_else(|| {
                    Error::Config("dataset.mnist: required for kind = \"mnist\"".into())
                })?;
                for (field, path) in [
                    ("train_images", Some(&spec.train_images)),
                    ("train_labels", Some(&spec.train_labels)),
                    ("test_images", spec.test_images.as_ref()),
                    ("test_labels", spec.test_labels.as_ref()),
                ] {
                    if let Some(p) = path {
                        if !p.exists() {
                            return Err(Error::Config(format!(
                                "dataset.mnist.{field}: {} does not exist",
                                p.display()
                            )));
                        }
                    }
                }
                if spec.test_images.is_some() != spec.test_labels.is_some() {
                    return Err(Error::Config(
                        "dataset.mnist: test_images and test_labels go together".into(),
                    ));
                }
            }
            DatasetKind::Csv => {
                let spec = self.dataset.csv.as_ref().ok_or_else(|| {
                    Error::Config("dataset.csv: required for kind = \"csv\"".into())
                })?;
                if !spec.path.exists() {
                    return Err(Error::Config(format!(
                        "dataset.csv.path: {} does not exist",
                        spec.path.display()
                    )));
                }
            }
        }
        if self.split.num_id_classes < 2 {
            return Err(Error::Config("split.num_id_classes: must be >= 2".into()));
        }
        if !(0.0..=1.0).contains(&self.split.mismatch_ratio) {
            return Err(Error::Config("split.mismatch_ratio: must be in [0, 1]".into()));
        }
        self.augment
            .validate()
            .map_err(|e| Error::Config(format!("augment: {e}")))?;
        self.optimizer
            .validate()
            .map_err(|e| Error::Config(format!("optimizer: {e}")))?;
        if self.algorithm == Algorithm::Scomatch {
            self.scomatch_config()?.validate()?;
        }
        if self.algorithm == Algorithm::Fixmatch {
            self.fixmatch_config().validate()?;
        }
        Ok(())
    }

    pub fn scomatch_config(&self) -> Result<ScoMatchConfig> {
        let k = self.k();
        let queue_capacity = self.scomatch.queue_capacity.unwrap_or(8 * k);
        let queue_warmup_min = self
            .scomatch
            .queue_warmup_min
            .unwrap_or_else(|| self.train.batch_size.min(queue_capacity));
        Ok(ScoMatchConfig {
            num_id_classes: k,
            batch_size: self.train.batch_size,
            mu: self.train.mu,
            tau: self.train.tau,
            tau_min: self.scomatch.tau_min,
            lambda: self.train.lambda,
            ema_alpha: self.train.ema_alpha,
            queue_capacity,
            enqueue_per_iter: self.scomatch.enqueue_per_iter,
            queue_warmup_min,
            cpl_decay: self.scomatch.cpl_decay,
            ood_class_enabled: self.scomatch.ood_class_enabled,
            use_open_loss: self.scomatch.use_open_loss,
            use_close_loss: self.scomatch.use_close_loss,
            open_weak_term: self.scomatch.open_weak_term,
            dual_head: self.scomatch.dual_head,
        })
    }

    pub fn fixmatch_config(&self) -> FixMatchConfig {
        FixMatchConfig {
            num_id_classes: self.k(),
            batch_size: self.train.batch_size,
            mu: self.train.mu,
            tau: self.train.tau,
            lambda: self.train.lambda,
            ema_alpha: self.train.ema_alpha,
        }
    }

    pub fn supervised_config(&self) -> SupervisedConfig {
        SupervisedConfig {
            num_id_classes: self.k(),
            batch_size: self.train.batch_size,
            ema_alpha: self.train.ema_alpha,
        }
    }

    /// Fingerprint of everything that shapes the training trajectory
    /// (algorithm, data, model, hyperparameters, eval cadence). Resume
    /// refuses checkpoints from a different fingerprint. Output paths, the
    /// seed grid and the horizon are deliberately excluded so a run can be
    /// extended.
    pub fn fingerprint(&self) -> u64 {
        #[derive(Serialize)]
        struct View<'a> {
            algorithm: &'a Algorithm,
            eval_every: u64,
            eval_on: &'a EvalTarget,
            dataset: &'a DatasetSpec,
            split: &'a SplitSpec,
            augment: &'a AugmentConfig,
            model: &'a ModelSpec,
            optimizer: &'a SgdConfig,
            train: &'a TrainSpec,
            scomatch: &'a ScoSpec,
        }
        let view = View {
            algorithm: &self.algorithm,
            eval_every: self.eval_every,
            eval_on: &self.eval_on,
            dataset: &self.dataset,
            split: &self.split,
            augment: &self.augment,
            model: &self.model,
            optimizer: &self.optimizer,
            train: &self.train,
            scomatch: &self.scomatch,
        };
        let text = toml::to_string(&view).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Fingerprint of the data-defining tables only; `compare` refuses to
    /// tabulate runs whose data fingerprints differ.
    pub fn dataset_fingerprint(&self) -> u64 {
        #[derive(Serialize)]
        struct View<'a> {
            dataset: &'a DatasetSpec,
            split: &'a SplitSpec,
            augment: &'a AugmentConfig,
        }
        let view = View {
            dataset: &self.dataset,
            split: &self.split,
            augment: &self.augment,
        };
        let text = toml::to_string(&view).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}
