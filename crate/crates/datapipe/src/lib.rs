//! Dataset ingestion and feature engineering for the logistic-regression
//! experiments.
//!
//! Two classes are drawn from MNIST or CIFAR-10, each image is reduced to its
//! average intensity and symmetry per channel, the features are expanded to
//! a second-order polynomial space, standardized column by column and
//! completed with an intercept. Rows are then split across agents in
//! contiguous blocks.

pub mod cache;
pub mod design;
pub mod error;
pub mod features;
pub mod formats;

use std::path::{Path, PathBuf};

use ipg_core::SeededRng;
use serde::{Deserialize, Serialize};

pub use design::{
    build_design_cifar, build_design_like, build_design_mnist, ColumnStats, DesignMatrix,
};
pub use error::{DataError, Result};
pub use features::{all_of_classes, intensity_symmetry, select_binary, BinarySet, SymmetryMode};
pub use formats::{load_cifar10, load_mnist, RawImageSet, Split};

/// Bumped whenever feature extraction changes, invalidating caches.
pub const PIPELINE_VERSION: u32 = 1;

/// Default number of training instances drawn from the two classes.
pub const DEFAULT_INSTANCES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    /// Default `(positive, negative)` classes: digits one and five, or
    /// airplane and automobile.
    pub fn default_classes(self) -> (u8, u8) {
        match self {
            Self::Mnist => (1, 5),
            Self::Cifar10 => (0, 1),
        }
    }

    pub fn subdir(self) -> &'static str {
        match self {
            Self::Mnist => "mnist",
            Self::Cifar10 => "cifar10",
        }
    }
}

/// What to extract from a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub symmetry: SymmetryMode,
    /// `(positive, negative)`; dataset default when absent.
    #[serde(default)]
    pub classes: Option<(u8, u8)>,
}

fn default_instances() -> usize {
    DEFAULT_INSTANCES
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, seed: u64) -> Self {
        Self {
            kind,
            instances: DEFAULT_INSTANCES,
            seed,
            symmetry: SymmetryMode::default(),
            classes: None,
        }
    }

    pub fn classes(&self) -> (u8, u8) {
        self.classes.unwrap_or_else(|| self.kind.default_classes())
    }
}

/// Training design and a held-out design standardized with the training
/// statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub train: DesignMatrix,
    pub test: DesignMatrix,
    pub fingerprint: String,
}

fn load(kind: DatasetKind, dir: &Path, split: Split) -> Result<RawImageSet> {
    match kind {
        DatasetKind::Mnist => load_mnist(dir, split),
        DatasetKind::Cifar10 => load_cifar10(dir, split),
    }
}

fn source_files(kind: DatasetKind, dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map(|rd| rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect())
        .unwrap_or_default();
    if kind == DatasetKind::Cifar10 {
        let nested = dir.join("cifar-10-batches-bin");
        if let Ok(rd) = std::fs::read_dir(nested) {
            files.extend(rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()));
        }
    }
    files.retain(|p| {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        name.contains("ubyte") || name.ends_with(".bin") || name.ends_with(".bin.gz")
    });
    files.sort();
    files
}

/// Runs the pipeline on the dataset under `dir`. The training sample is
/// `spec.instances` seeded draws from the two classes; the held-out design
/// holds every official test image of those classes. With `cache_dir`,
/// designs are reused when the inputs and spec fingerprint match.
pub fn prepare(spec: &DatasetSpec, dir: &Path, cache_dir: Option<&Path>) -> Result<PreparedData> {
    let inputs = cache::file_fingerprint(&source_files(spec.kind, dir))?;
    let spec_json = serde_json::to_vec(spec).map_err(|e| DataError::Cache(e.to_string()))?;
    let fp = cache::fingerprint(&[
        &PIPELINE_VERSION.to_le_bytes(),
        inputs.as_bytes(),
        &spec_json,
    ]);
    let names = ("train", "test");
    if let Some(cd) = cache_dir {
        if let (Some((train, _)), Some((test, _))) = (
            cache::read_cache(cd, &format!("{}_{}", spec.kind.subdir(), names.0), &fp)?,
            cache::read_cache(cd, &format!("{}_{}", spec.kind.subdir(), names.1), &fp)?,
        ) {
            return Ok(PreparedData {
                train,
                test,
                fingerprint: fp,
            });
        }
    }

    let (pos, neg) = spec.classes();
    let mut rng = SeededRng::new(spec.seed, 0);
    let raw = load(spec.kind, dir, Split::Train)?;
    let sel = select_binary(&raw, pos, neg, spec.instances, &mut rng)?;
    let train = match spec.kind {
        DatasetKind::Mnist => build_design_mnist(&sel, spec.symmetry)?,
        DatasetKind::Cifar10 => build_design_cifar(&sel, spec.symmetry)?,
    };
    let raw_test = load(spec.kind, dir, Split::Test)?;
    let test = build_design_like(&train, &all_of_classes(&raw_test, pos, neg)?, spec.symmetry)?;

    if let Some(cd) = cache_dir {
        for (design, split) in [(&train, names.0), (&test, names.1)] {
            let meta = cache::CacheMeta {
                format_version: cache::CACHE_FORMAT_VERSION,
                pipeline_version: PIPELINE_VERSION,
                shape: [design.nrows(), design.ncols()],
                column_stats: design.column_stats.clone(),
                column_names: design.column_names.clone(),
                seed: spec.seed,
                fingerprint: fp.clone(),
                source: dir.display().to_string(),
            };
            cache::write_cache(cd, &format!("{}_{split}", spec.kind.subdir()), design, &meta)?;
        }
    }
    Ok(PreparedData {
        train,
        test,
        fingerprint: fp,
    })
}
