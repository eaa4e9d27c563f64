//! The JSON run configuration shared by every CLI subcommand.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::TrainConfig;
use crate::epie::EpieConfig;
use crate::error::{Error, Result};
use crate::networks::NetworkConfig;
use crate::provenance::config_hash;
use crate::simulate::{step_for_overlap, NoiseSpec, PhantomConfig};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScanConfig {
    /// Raster step; takes precedence over `overlap_percent`.
    pub step_pixels: Option<usize>,
    /// Nominal overlap `(1 - step / FWHM) * 100`, used when no step is given.
    pub overlap_percent: Option<f64>,
}

impl ScanConfig {
    pub fn resolve_step(&self, probe_fwhm: f64) -> Result<usize> {
        match (self.step_pixels, self.overlap_percent) {
            (Some(0), _) => Err(Error::InvalidConfig("scan.step_pixels must be at least 1".into())),
            (Some(s), _) => Ok(s),
            (None, Some(o)) if o < 100.0 => Ok(step_for_overlap(o, probe_fwhm)),
            (None, Some(o)) => Err(Error::InvalidConfig(format!("scan.overlap_percent {o} must be below 100"))),
            (None, None) => Ok(step_for_overlap(40.0, probe_fwhm)),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub phantom: PhantomConfig,
    pub scan: ScanConfig,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub networks: NetworkConfig,
    pub epie: EpieConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidConfig(m) => Error::InvalidConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.train.validate()?;
        self.networks.validate()?;
        self.epie.validate()
    }

    pub fn to_value(&self) -> Result<serde_json::Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}
