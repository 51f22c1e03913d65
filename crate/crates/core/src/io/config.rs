//! TOML run configuration. Unknown keys anywhere are rejected; every
//! missing key takes its default.
//!
//! ```toml
//! seed = 7
//!
//! [train]
//! epochs = 100
//! batch_size = 4
//!
//! [train.weights]
//! eta = 100.0
//!
//! [data]
//! profile = "kits"
//! min_component = 150
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{BoundaryParams, DatasetProfile, PhantomConfig};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// One of `kits`, `lits`, `luna`.
    pub profile: String,
    pub hu_lo: Option<f32>,
    pub hu_hi: Option<f32>,
    pub min_component: Option<usize>,
    /// Voxels of context kept around each tumor before resampling.
    pub pad: usize,
    pub boundary: BoundaryParams,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { profile: "kits".into(), hu_lo: None, hu_hi: None, min_component: None, pad: 20, boundary: BoundaryParams::default() }
    }
}

impl DataConfig {
    /// The named profile with any overrides applied.
    pub fn profile(&self) -> Result<DatasetProfile> {
        let mut p = DatasetProfile::by_name(&self.profile).ok_or_else(|| Error::Config(format!("unknown dataset profile {:?} (expected kits, lits, or luna)", self.profile)))?;
        if let Some(v) = self.hu_lo {
            p.hu_lo = v;
        }
        if let Some(v) = self.hu_hi {
            p.hu_hi = v;
        }
        if let Some(v) = self.min_component {
            p.min_component = v;
        }
        if !(p.hu_lo < p.hu_hi) {
            return Err(Error::Config(format!("HU window [{}, {}] is empty", p.hu_lo, p.hu_hi)));
        }
        Ok(p)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub cubes: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub phantom: PhantomConfig,
    pub eval: EvalConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.set_seed(cfg.seed);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.profile()?;
        self.phantom.validate()?;
        self.eval.validate()
    }
}
