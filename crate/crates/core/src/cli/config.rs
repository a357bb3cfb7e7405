use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackConfig;
use crate::data::{gen_synthetic, load_idx, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Where examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DataSource {
    /// Generated data; the test split uses `test_per_class` samples and the
    /// next seed.
    Synthetic {
        #[serde(flatten)]
        spec: SyntheticSpec,
        test_per_class: usize,
    },
    /// An IDX image/label pair.
    Idx { images: PathBuf, labels: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            spec: SyntheticSpec::default(),
            test_per_class: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl DataSource {
    pub fn load(&self, split: Split) -> Result<Dataset> {
        match self {
            DataSource::Synthetic { spec, test_per_class } => match split {
                Split::Train => gen_synthetic(spec),
                Split::Test => gen_synthetic(&SyntheticSpec {
                    per_class: *test_per_class,
                    seed: spec.seed.wrapping_add(1),
                    ..spec.clone()
                }),
            },
            DataSource::Idx { images, labels } => load_idx(images, labels),
        }
    }
}

/// Manual threshold values that replace calibrated ones.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdOverrides {
    pub tau_enc: Option<f64>,
    pub tau_dec: Option<f64>,
    /// Confidence used by `calibrate`.
    pub confidence: Option<f64>,
}

/// Everything a command may need, as read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataSource,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub thresholds: ThresholdOverrides,
    pub inversion_steps: usize,
    pub out_dir: PathBuf,
    /// Overrides the training and attack seeds when set.
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataSource::default(),
            train: TrainConfig::default(),
            attack: AttackConfig::default(),
            thresholds: ThresholdOverrides::default(),
            inversion_steps: 300,
            out_dir: PathBuf::from("out"),
            seed: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}
