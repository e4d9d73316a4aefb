//! Versioned TOML configuration files. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use simplexsm::simulation::Estimator;
use simplexsm::{Family, ModelSpec, WeightKind};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// Counts if there is a `total` column or every value is an integer and some row sums above 1.
    #[default]
    Auto,
    Proportions,
    Counts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorChoice {
    /// Score matching on (possibly count-derived) proportions.
    #[default]
    Continuous,
    /// Product weight with factorial moments; count data only.
    Factorial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightConfig {
    pub kind: WeightKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_c: Option<f64>,
    /// Sets `a_c^2` to this quantile of the uncapped weights when `a_c` is absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_quantile: Option<f64>,
}

impl Default for WeightConfig {
    fn default() -> Self {
        WeightConfig { kind: WeightKind::CappedMin, a_c: None, cap_quantile: Some(0.9) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub version: u32,
    pub family: Family,
    /// Fixed shape parameters for the hybrid family; zeros when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<Vec<f64>>,
    /// Estimate `b` (otherwise fixed at zero).
    #[serde(default = "yes")]
    pub estimate_linear: bool,
    /// Further parameters held fixed, by label (`a12`, `b3`, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub weight: WeightConfig,
    #[serde(default)]
    pub estimator: EstimatorChoice,
    #[serde(default)]
    pub data: DataKind,
    #[serde(default)]
    pub ridge: f64,
    /// One-based data rows to drop before fitting.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exclude_rows: Vec<usize>,
}

fn yes() -> bool {
    true
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            version: SCHEMA_VERSION,
            family: Family::TruncatedGaussian,
            beta: None,
            estimate_linear: true,
            fixed: BTreeMap::new(),
            weight: WeightConfig::default(),
            estimator: EstimatorChoice::Continuous,
            data: DataKind::Auto,
            ridge: 0.0,
            exclude_rows: Vec::new(),
        }
    }
}

/// Model for `simulate`: a registered preset or an explicit spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    pub n: usize,
    /// Multinomial total per row; counts are written alongside the latent proportions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<u64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub total: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ac_product: Option<f64>,
    pub estimators: Vec<Estimator>,
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ridge: f64,
    /// Externally computed columns shown next to ours in the summary CSV.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub baselines: Vec<BaselineConfig>,
}

fn default_replicates() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineConfig {
    pub name: String,
    pub parameter: String,
    pub se: f64,
    pub rmse: f64,
    pub rbias: f64,
}

pub trait Versioned {
    fn version(&self) -> u32;
}

macro_rules! versioned {
    ($($t:ty),*) => {$(
        impl Versioned for $t {
            fn version(&self) -> u32 {
                self.version
            }
        }
    )*};
}

versioned!(FitConfig, SimulateConfig, BenchConfig);

pub fn parse<T: DeserializeOwned + Versioned>(text: &str, path: &Path) -> Result<T, CliError> {
    let cfg: T = toml::from_str(text)
        .map_err(|e| CliError::input("config", format!("{}: {}", path.display(), e.message())))?;
    if cfg.version() != SCHEMA_VERSION {
        return Err(CliError::input(
            "config",
            format!("{}: schema version {} is not supported (expected {SCHEMA_VERSION})", path.display(), cfg.version()),
        ));
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        let p = Path::new("fit.toml");
        let ok = "version = 1\nfamily = \"hybrid\"\nbeta = [0.0, 0.0, 0.0]\n[weight]\nkind = \"capped-min\"\na_c = 0.1\n";
        let cfg: FitConfig = parse(ok, p).unwrap();
        assert_eq!(cfg.weight.a_c, Some(0.1));
        assert!(cfg.estimate_linear);
        assert!(parse::<FitConfig>(&format!("{ok}tolerance = 3\n"), p).is_err());
        assert!(parse::<FitConfig>(&ok.replace("version = 1", "version = 2"), p).is_err());
        assert!(parse::<FitConfig>("family = \"hybrid\"\n", p).is_err());
    }

    #[test]
    fn bench_estimators_are_numbers() {
        let cfg: BenchConfig =
            parse("version = 1\npreset = 3\nestimators = [1, 2]\nn = 100\n", Path::new("b.toml")).unwrap();
        assert_eq!(cfg.estimators, vec![Estimator::CappedMin, Estimator::CappedProduct]);
        assert_eq!(cfg.replicates, 100);
        assert!(parse::<BenchConfig>("version = 1\nestimators = [9]\nn = 1\n", Path::new("b.toml")).is_err());
    }
}
