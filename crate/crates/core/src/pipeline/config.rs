use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csr::{self, NullModel};
use crate::decomp::Gauge;
use crate::error::{Error, Result};
use crate::geoproj::{CityCenter, EarthModel, GeoCoordinate, DEFAULT_EARTH_RADIUS};
use crate::grid::{GridSpec, VarianceEstimator};
use crate::taylor::DEFAULT_POISSON_BAND;

pub const DEFAULT_SEED: u64 = 2019;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvelopeConfig {
    pub enabled: bool,
    pub sims: usize,
    pub r_max: f64,
    pub r_step: f64,
    pub null_model: NullModel,
}

impl Default for EnvelopeConfig {
    fn default() -> Self {
        EnvelopeConfig {
            enabled: true,
            sims: 99,
            r_max: 2000.0,
            r_step: 10.0,
            null_model: NullModel::Binomial,
        }
    }
}

impl EnvelopeConfig {
    pub fn r_grid(&self) -> Vec<f64> {
        csr::r_grid(self.r_max, self.r_step)
    }
}

/// Everything that controls a run. Loaded from TOML; every field has a
/// default, so an empty document is a valid configuration.
///
/// ```toml
/// seed = 2019
/// min_nonzero = 5
/// rank_cutoff = 30
/// poisson_band = 0.1
/// variance_estimator = "sample"   # or "population"
/// earth_radius = 6371004.0
///
/// [grid]
/// window_extent = 40000.0
/// subarea_divisions = 4
/// quadrat_divisions = 5
///
/// [envelope]
/// enabled = true
/// sims = 99
/// r_max = 2000.0
/// r_step = 10.0
/// null_model = "binomial"         # or "poisson"
///
/// [gauge]
/// rule = "min_norm"               # or rule = "fixed_facility_mean", value = 0.5
///
/// [centers]
/// Beijing = { lng = 116.413648, lat = 39.913561 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub seed: u64,
    pub centers: BTreeMap<String, GeoCoordinate>,
    pub earth_radius: f64,
    pub grid: GridSpec,
    pub min_nonzero: usize,
    pub rank_cutoff: usize,
    pub poisson_band: f64,
    pub variance_estimator: VarianceEstimator,
    pub envelope: EnvelopeConfig,
    pub gauge: Gauge,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        let bj = CityCenter::beijing();
        AnalysisConfig {
            seed: DEFAULT_SEED,
            centers: BTreeMap::from([(bj.name, bj.center)]),
            earth_radius: DEFAULT_EARTH_RADIUS,
            grid: GridSpec::default(),
            min_nonzero: 5,
            rank_cutoff: 30,
            poisson_band: DEFAULT_POISSON_BAND,
            variance_estimator: VarianceEstimator::Sample,
            envelope: EnvelopeConfig::default(),
            gauge: Gauge::MinNorm,
        }
    }
}

impl AnalysisConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: AnalysisConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.grid.validate().map_err(cfg)?;
        EarthModel::new(self.earth_radius).map_err(cfg)?;
        for (name, c) in &self.centers {
            c.validate().map_err(|e| Error::Config(format!("center {name}: {e}")))?;
        }
        if self.rank_cutoff == 0 {
            return Err(Error::Config("rank_cutoff must be >= 1".into()));
        }
        if !(self.poisson_band.is_finite() && self.poisson_band >= 0.0) {
            return Err(Error::Config(format!("poisson_band must be >= 0, got {}", self.poisson_band)));
        }
        if let Gauge::FixedFacilityMean(v) = self.gauge {
            if !v.is_finite() {
                return Err(Error::Config("gauge value must be finite".into()));
            }
        }
        let env = &self.envelope;
        if env.sims == 0 {
            return Err(Error::Config("envelope.sims must be >= 1".into()));
        }
        if !(env.r_step.is_finite() && env.r_step > 0.0 && env.r_max.is_finite() && env.r_max >= 0.0) {
            return Err(Error::Config("envelope r_max must be >= 0 and r_step > 0".into()));
        }
        Ok(())
    }

    pub fn earth(&self) -> EarthModel {
        EarthModel {
            radius: self.earth_radius,
        }
    }

    pub fn center(&self, city: &str) -> Option<CityCenter> {
        self.centers.get(city).map(|c| CityCenter {
            name: city.to_string(),
            center: *c,
        })
    }
}
