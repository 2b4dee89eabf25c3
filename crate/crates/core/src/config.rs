//! Run configuration: the JSON file schema, profiles, command-line
//! overrides and the resolved settings every command works from.
//!
//! Every field of the file is optional. Profile defaults fill whatever the
//! file leaves out; explicit file values win over the profile, and command
//! line overrides win over both.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array::ArrayConfig;
use crate::codebook::TrainingPlan;
use crate::error::{Error, Result};
use crate::mlp::{LossKind, TrainConfig};
use crate::partition::{Coverage, PartitionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Profile {
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "ci-small")]
    CiSmall,
}

impl std::str::FromStr for Profile {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Profile::Full),
            "ci-small" => Ok(Profile::CiSmall),
            other => Err(format!("unknown profile '{other}' (expected full or ci-small)")),
        }
    }
}

/// Defaults a profile contributes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileDefaults {
    pub dataset_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden_layers: Vec<usize>,
}

impl Profile {
    pub fn defaults(self) -> ProfileDefaults {
        match self {
            Profile::Full => ProfileDefaults {
                dataset_size: 100_000,
                epochs: 200,
                batch_size: 1000,
                learning_rate: 1e-3,
                hidden_layers: vec![1024, 512, 512, 256, 128, 64],
            },
            Profile::CiSmall => ProfileDefaults {
                dataset_size: 20_000,
                epochs: 100,
                batch_size: 100,
                learning_rate: 1e-3,
                hidden_layers: vec![256, 128, 128, 64, 32, 32],
            },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySection {
    pub num_elements: Option<usize>,
    pub element_spacing_m: Option<f64>,
    pub carrier_frequency_hz: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverageSection {
    pub r_min_m: Option<f64>,
    pub r_max_m: Option<f64>,
    pub psi_min_deg: Option<f64>,
    pub psi_max_deg: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionSection {
    pub correlation: Option<f64>,
    pub beta_delta: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub size: Option<usize>,
    pub split: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub decay: Option<f64>,
    pub seed: Option<u64>,
    pub hidden_layers: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub workdir: Option<PathBuf>,
}

/// The config file as written by the user.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub array: ArraySection,
    #[serde(default)]
    pub coverage: CoverageSection,
    #[serde(default)]
    pub partition: PartitionSection,
    pub users: Option<usize>,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(default)]
    pub training: TrainingSection,
    pub profile: Option<Profile>,
    #[serde(default)]
    pub paths: PathsSection,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(vec![format!("config: {e}")]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub profile: Option<Profile>,
    pub workdir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageSettings {
    pub r_min_m: f64,
    pub r_max_m: f64,
    pub psi_min_deg: f64,
    pub psi_max_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionSettings {
    pub correlation: Option<f64>,
    /// Takes precedence over `correlation` when set.
    pub beta_delta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSettings {
    pub size: usize,
    pub split: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub seed: u64,
    pub hidden_layers: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSettings {
    pub workdir: PathBuf,
}

/// Fully resolved settings; this is what gets echoed into the workdir.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub array: ArrayConfig,
    pub coverage: CoverageSettings,
    pub partition: PartitionSettings,
    pub users: usize,
    pub dataset: DatasetSettings,
    pub training: TrainingSettings,
    pub profile: Profile,
    pub paths: PathSettings,
}

impl RunConfig {
    /// Merges file, profile defaults and overrides, then validates. All
    /// violations are reported together.
    pub fn resolve(file: ConfigFile, overrides: Overrides) -> Result<Self> {
        let profile = overrides.profile.or(file.profile).unwrap_or_default();
        let pd = profile.defaults();
        let reference = ArrayConfig::xl_ula_24();
        let cov = Coverage::reference();
        let t = file.training;
        let cfg = RunConfig {
            array: ArrayConfig {
                num_elements: file.array.num_elements.unwrap_or(reference.num_elements),
                element_spacing: file.array.element_spacing_m.unwrap_or(reference.element_spacing),
                carrier_frequency: file.array.carrier_frequency_hz.unwrap_or(reference.carrier_frequency),
            },
            coverage: CoverageSettings {
                r_min_m: file.coverage.r_min_m.unwrap_or(cov.r_min),
                r_max_m: file.coverage.r_max_m.unwrap_or(cov.r_max),
                psi_min_deg: file.coverage.psi_min_deg.unwrap_or(cov.psi_min.to_degrees()),
                psi_max_deg: file.coverage.psi_max_deg.unwrap_or(cov.psi_max.to_degrees()),
            },
            partition: PartitionSettings {
                correlation: match (file.partition.correlation, file.partition.beta_delta) {
                    (None, None) => Some(0.7),
                    (c, _) => c,
                },
                beta_delta: file.partition.beta_delta,
            },
            users: file.users.unwrap_or(3),
            dataset: DatasetSettings {
                size: file.dataset.size.unwrap_or(pd.dataset_size),
                split: file.dataset.split.unwrap_or(0.8),
                seed: overrides.seed.or(file.dataset.seed).unwrap_or(0),
            },
            training: TrainingSettings {
                epochs: t.epochs.unwrap_or(pd.epochs),
                batch_size: t.batch_size.unwrap_or(pd.batch_size),
                learning_rate: t.learning_rate.unwrap_or(pd.learning_rate),
                decay: t.decay.unwrap_or(0.97),
                seed: overrides.seed.or(t.seed).unwrap_or(0),
                hidden_layers: t.hidden_layers.unwrap_or(pd.hidden_layers),
            },
            profile,
            paths: PathSettings {
                workdir: overrides.workdir.or(file.paths.workdir).unwrap_or_else(|| PathBuf::from("ncbf-work")),
            },
        };
        let problems = cfg.violations();
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = self.array.violations();
        v.extend(self.coverage().violations());
        if let Some(b) = self.partition.beta_delta {
            if !(b > 0.0 && b.is_finite()) {
                v.push(format!("partition.beta_delta must be > 0 (got {b})"));
            }
        } else if let Some(r) = self.partition.correlation {
            if !(r > 0.0 && r < 1.0) {
                v.push(format!("partition.correlation must lie in (0, 1) (got {r})"));
            }
        }
        if self.users < 1 {
            v.push("users must be >= 1".to_string());
        }
        if self.dataset.size < 1 {
            v.push("dataset.size must be >= 1".to_string());
        }
        if !(self.dataset.split > 0.0 && self.dataset.split <= 1.0) {
            v.push(format!("dataset.split must lie in (0, 1] (got {})", self.dataset.split));
        }
        if self.training.hidden_layers.contains(&0) {
            v.push("training.hidden_layers entries must be >= 1".to_string());
        }
        v.extend(self.train_config(LossKind::CircularMae).violations());
        v
    }

    pub fn coverage(&self) -> Coverage {
        let c = &self.coverage;
        Coverage::from_degrees(c.r_min_m, c.r_max_m, c.psi_min_deg, c.psi_max_deg)
    }

    pub fn partition_spec(&self) -> Result<PartitionSpec> {
        match (self.partition.beta_delta, self.partition.correlation) {
            (Some(b), _) => PartitionSpec::with_beta(self.coverage(), b),
            (None, Some(r)) => PartitionSpec::from_correlation(self.coverage(), r),
            (None, None) => Err(Error::invalid("partition needs a correlation or beta_delta")),
        }
    }

    pub fn train_config(&self, loss: LossKind) -> TrainConfig {
        TrainConfig {
            epochs: self.training.epochs,
            batch_size: self.training.batch_size,
            learning_rate: self.training.learning_rate,
            decay: self.training.decay,
            seed: self.training.seed,
            ..TrainConfig::new(loss)
        }
    }

    pub fn training_plan(&self) -> TrainingPlan {
        TrainingPlan {
            num_users: self.users,
            hidden_layers: self.training.hidden_layers.clone(),
            dataset_size: self.dataset.size,
            split: self.dataset.split,
            dataset_seed: self.dataset.seed,
            training: self.train_config(LossKind::CircularMae),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn workdir(&self) -> &Path {
        &self.paths.workdir
    }

    pub fn grid_path(&self) -> PathBuf {
        self.workdir().join("grid.json")
    }

    pub fn data_dir(&self) -> PathBuf {
        self.workdir().join("data")
    }

    pub fn codebook_dir(&self) -> PathBuf {
        self.workdir().join("codebook")
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.workdir().join("eval")
    }
}
