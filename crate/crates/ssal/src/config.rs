//! Run configuration files.
//!
//! A TOML file whose keys mirror [`TrainConfig`], plus a `data` table that
//! picks the dataset. Keys may be written flat (`loss.tau = 0.07`) or as
//! tables (`[loss]`). Unknown keys are errors; omitted keys take defaults.
//!
//! ```toml
//! steps = 3000
//! warmup_epochs = 15
//! seed = 0
//! batch.labeled = 8
//! batch.unlabeled = 56
//! loss.lambda3 = 0.08
//! active.strategy = "margin"
//! active.n0 = 6
//! active.budget = 30
//! model.backbone = "mlp:64,64"
//! data.dataset = "blobs"
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use ssal_core::datasets::{make_synthetic_blobs, make_synthetic_blobs_test, Dataset, Split};
use ssal_core::trainer::TrainConfig;

use crate::cifar::{load_cifar, CifarVariant};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    #[default]
    Blobs,
    Cifar10,
    Cifar100,
}

impl FromStr for DatasetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "blobs" => Ok(DatasetKind::Blobs),
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            "svhn" => Err("SVHN is not supported; use cifar10, cifar100 or blobs".into()),
            other => Err(format!("unknown dataset `{other}` (expected cifar10, cifar100 or blobs)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dataset: DatasetKind,
    /// Directory holding the CIFAR binary batches.
    pub dir: Option<PathBuf>,
    pub blobs_classes: usize,
    pub blobs_per_class: usize,
    pub blobs_test_per_class: usize,
    pub blobs_side: usize,
    /// Seed of the synthetic data, kept apart from the training seed.
    pub blobs_seed: u64,
    /// Keep only the first `n` training images.
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dataset: DatasetKind::Blobs,
            dir: None,
            blobs_classes: 3,
            blobs_per_class: 100,
            blobs_test_per_class: 100,
            blobs_side: 16,
            blobs_seed: 7,
            train_limit: None,
            test_limit: None,
        }
    }
}

impl DataConfig {
    /// Train and test sets.
    pub fn load(&self) -> Result<(Dataset, Dataset)> {
        let (train, test) = match self.dataset {
            DatasetKind::Blobs => (
                make_synthetic_blobs(self.blobs_classes, self.blobs_per_class, self.blobs_side, self.blobs_seed)?,
                make_synthetic_blobs_test(
                    self.blobs_classes,
                    self.blobs_test_per_class,
                    self.blobs_side,
                    self.blobs_seed.wrapping_add(1),
                )?,
            ),
            DatasetKind::Cifar10 | DatasetKind::Cifar100 => {
                let variant = match self.dataset {
                    DatasetKind::Cifar10 => CifarVariant::Cifar10,
                    _ => CifarVariant::Cifar100,
                };
                let dir = self.dir.clone().ok_or_else(|| Error::Config {
                    path: PathBuf::from("data.dir"),
                    msg: "CIFAR datasets need data.dir or --data-dir".into(),
                })?;
                (
                    load_cifar(&dir, variant, Split::Train)?,
                    load_cifar(&dir, variant, Split::Test)?,
                )
            }
        };
        let cut = |ds: Dataset, n: Option<usize>| match n {
            Some(n) => ds.truncated(n),
            None => ds,
        };
        Ok((cut(train, self.train_limit), cut(test, self.test_limit)))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let err = |msg: String| Error::Config {
            path: origin.to_path_buf(),
            msg,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| err(e.to_string()))?;
        let data = match table.remove("data") {
            Some(v) => v.try_into().map_err(|e: toml::de::Error| err(format!("data: {e}")))?,
            None => DataConfig::default(),
        };
        let train: TrainConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| err(e.to_string()))?;
        train.validate().map_err(|e| err(e.to_string()))?;
        Ok(RunConfig { train, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    /// The configuration as a TOML document `load` accepts.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::try_from(&self.train).unwrap_or_default();
        if let Ok(data) = toml::Value::try_from(&self.data) {
            table.insert("data".into(), data);
        }
        toml::to_string_pretty(&table).unwrap_or_default()
    }
}
