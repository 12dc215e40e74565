//! Experiment configuration: one TOML file describes the dataset, the
//! model, the training and fine-tuning schedules, and the search. Unknown
//! keys are rejected so typos fail loudly, and every command writes the
//! fully resolved configuration (defaults filled in) beside its outputs so
//! a run can always be reproduced from its artifacts alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use eagle_core::pruner::ImportanceCriterion;
use eagle_core::search::{RecalibStats, SearchConfig};
use eagle_core::trainer::TrainConfig;
use eagle_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Big-endian IDX image/label file pairs.
    Idx,
    /// CIFAR-style binary batches (label byte + channel-major pixels).
    Cifar,
    /// Built-in synthetic Gaussian-blob task; needs no files on disk.
    Blobs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    #[serde(default)]
    pub train_images: Option<PathBuf>,
    #[serde(default)]
    pub train_labels: Option<PathBuf>,
    #[serde(default)]
    pub test_images: Option<PathBuf>,
    #[serde(default)]
    pub test_labels: Option<PathBuf>,
    #[serde(default)]
    pub train_bins: Vec<PathBuf>,
    #[serde(default)]
    pub test_bins: Vec<PathBuf>,
    /// Number of classes; also drives the blob generator.
    #[serde(default = "d_classes")]
    pub classes: usize,
    /// Blob generator knobs; ignored for file-backed datasets.
    #[serde(default = "d_per_class")]
    pub per_class: usize,
    #[serde(default = "d_test_per_class")]
    pub test_per_class: usize,
    #[serde(default = "d_image_size")]
    pub image_size: usize,
    /// Per-channel normalization; identity when omitted.
    #[serde(default)]
    pub mean: Option<Vec<f64>>,
    #[serde(default)]
    pub std: Option<Vec<f64>>,
    #[serde(default = "d_subval_fraction")]
    pub subval_fraction: f64,
    #[serde(default = "d_recalib_fraction")]
    pub recalib_fraction: f64,
    /// Seed for split carving and blob synthesis.
    #[serde(default)]
    pub seed: u64,
}

fn d_classes() -> usize {
    10
}
fn d_per_class() -> usize {
    200
}
fn d_test_per_class() -> usize {
    50
}
fn d_image_size() -> usize {
    16
}
fn d_subval_fraction() -> f64 {
    0.05
}
fn d_recalib_fraction() -> f64 {
    1.0 / 30.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    MicroCnn,
    MicroMobilenet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub arch: ArchKind,
    pub widths: Vec<usize>,
    #[serde(default)]
    pub init_seed: u64,
}

/// TOML-facing mirror of the core training schedule. Two independent
/// sections use it: `[train]` (full model, step-decay defaults) and
/// `[finetune]` (short low-rate schedule).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    #[serde(default)]
    pub lr_milestones: Vec<usize>,
    #[serde(default = "d_lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "d_momentum")]
    pub momentum: f64,
    #[serde(default = "d_weight_decay")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
}

fn d_lr_decay() -> f64 {
    0.1
}
fn d_momentum() -> f64 {
    0.9
}
fn d_weight_decay() -> f64 {
    5e-4
}

impl ScheduleSection {
    fn default_train() -> Self {
        let d = TrainConfig::desk_train(0);
        ScheduleSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            base_lr: d.base_lr,
            lr_milestones: d.lr_milestones,
            lr_decay: d.lr_decay,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            seed: 0,
        }
    }

    fn default_finetune() -> Self {
        let d = TrainConfig::desk_finetune(0);
        ScheduleSection {
            epochs: d.epochs,
            batch_size: d.batch_size,
            base_lr: d.base_lr,
            lr_milestones: d.lr_milestones,
            lr_decay: d.lr_decay,
            momentum: d.momentum,
            weight_decay: d.weight_decay,
            seed: 0,
        }
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            lr_milestones: self.lr_milestones.clone(),
            lr_decay: self.lr_decay,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default = "d_candidate_count")]
    pub candidate_count: usize,
    #[serde(default = "d_max_ratio")]
    pub max_ratio: f64,
    #[serde(default = "d_first_layer_max_ratio")]
    pub first_layer_max_ratio: f64,
    #[serde(default)]
    pub flops_target: Option<f64>,
    #[serde(default = "d_flops_tolerance")]
    pub flops_tolerance: f64,
    #[serde(default = "d_attempt_budget")]
    pub attempt_budget: usize,
    #[serde(default = "d_recalib_iterations")]
    pub recalib_iterations: usize,
    /// Defaults to the training batch size when omitted.
    #[serde(default)]
    pub recalib_batch_size: Option<usize>,
    #[serde(default = "d_recalib_stats")]
    pub recalib_stats: RecalibStats,
    #[serde(default = "d_top_k")]
    pub top_k_to_finetune: usize,
    #[serde(default = "d_criterion")]
    pub criterion: ImportanceCriterion,
    #[serde(default)]
    pub seed: u64,
}

fn d_candidate_count() -> usize {
    50
}
fn d_max_ratio() -> f64 {
    0.7
}
fn d_first_layer_max_ratio() -> f64 {
    0.2
}
fn d_flops_tolerance() -> f64 {
    0.02
}
fn d_attempt_budget() -> usize {
    10_000
}
fn d_recalib_iterations() -> usize {
    100
}
fn d_recalib_stats() -> RecalibStats {
    RecalibStats::Momentum
}
fn d_top_k() -> usize {
    2
}
fn d_criterion() -> ImportanceCriterion {
    ImportanceCriterion::L1Norm
}

impl Default for SearchSection {
    fn default() -> Self {
        SearchSection {
            candidate_count: d_candidate_count(),
            max_ratio: d_max_ratio(),
            first_layer_max_ratio: d_first_layer_max_ratio(),
            flops_target: None,
            flops_tolerance: d_flops_tolerance(),
            attempt_budget: d_attempt_budget(),
            recalib_iterations: d_recalib_iterations(),
            recalib_batch_size: None,
            recalib_stats: d_recalib_stats(),
            top_k_to_finetune: d_top_k(),
            criterion: d_criterion(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "d_out_dir")]
    pub out_dir: PathBuf,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    #[serde(default = "ScheduleSection::default_train")]
    pub train: ScheduleSection,
    #[serde(default = "ScheduleSection::default_finetune")]
    pub finetune: ScheduleSection,
    #[serde(default)]
    pub search: SearchSection,
}

fn d_out_dir() -> PathBuf {
    PathBuf::from("eagle-out")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: ExperimentConfig = toml::from_str(text)
            .map_err(|e| Error::InvalidArgument(format!("config parse error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::InvalidArgument(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self.dataset.kind {
            DatasetKind::Idx => {
                for (name, path) in [
                    ("train_images", &self.dataset.train_images),
                    ("train_labels", &self.dataset.train_labels),
                    ("test_images", &self.dataset.test_images),
                    ("test_labels", &self.dataset.test_labels),
                ] {
                    if path.is_none() {
                        return Err(Error::InvalidArgument(format!(
                            "dataset kind \"idx\" requires dataset.{name}"
                        )));
                    }
                }
            }
            DatasetKind::Cifar => {
                if self.dataset.train_bins.is_empty() || self.dataset.test_bins.is_empty() {
                    return Err(Error::InvalidArgument(
                        "dataset kind \"cifar\" requires dataset.train_bins and dataset.test_bins"
                            .into(),
                    ));
                }
            }
            DatasetKind::Blobs => {
                if self.dataset.classes < 2 || self.dataset.per_class == 0 {
                    return Err(Error::InvalidArgument(
                        "blob dataset needs at least 2 classes and 1 sample per class".into(),
                    ));
                }
            }
        }
        if self.dataset.classes < 2 {
            return Err(Error::InvalidArgument(
                "dataset.classes must be at least 2".into(),
            ));
        }
        if self.model.widths.is_empty() {
            return Err(Error::InvalidArgument("model.widths must not be empty".into()));
        }
        self.train.to_train_config().validate()?;
        self.finetune.to_train_config().validate()?;
        self.resolved_search().validate()?;
        Ok(())
    }

    /// The search configuration with cross-section defaults resolved: split
    /// fractions come from the dataset section and the recalibration batch
    /// size falls back to the training batch size.
    pub fn resolved_search(&self) -> SearchConfig {
        SearchConfig {
            candidate_count: self.search.candidate_count,
            max_ratio: self.search.max_ratio,
            first_layer_max_ratio: self.search.first_layer_max_ratio,
            flops_target: self.search.flops_target,
            flops_tolerance: self.search.flops_tolerance,
            attempt_budget: self.search.attempt_budget,
            recalib_iterations: self.search.recalib_iterations,
            recalib_batch_size: self.search.recalib_batch_size.unwrap_or(self.train.batch_size),
            recalib_stats: self.search.recalib_stats,
            subval_fraction: self.dataset.subval_fraction,
            recalib_fraction: self.dataset.recalib_fraction,
            top_k_to_finetune: self.search.top_k_to_finetune,
            seed: self.search.seed,
        }
    }

    /// Overrides every section seed at once (the --seed flag).
    pub fn override_seeds(&mut self, seed: u64) {
        self.dataset.seed = seed;
        self.model.init_seed = seed;
        self.train.seed = seed;
        self.finetune.seed = seed;
        self.search.seed = seed;
    }

    /// Writes the fully resolved configuration beside the run's outputs.
    pub fn write_resolved(&self, out_dir: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::InvalidArgument(format!("config serialization failed: {e}")))?;
        std::fs::create_dir_all(out_dir)?;
        std::fs::write(out_dir.join("resolved_config.toml"), text)?;
        Ok(())
    }
}
