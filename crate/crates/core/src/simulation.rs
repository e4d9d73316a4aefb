//! Replicated simulate-then-estimate studies over the preset models.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ContinuousDataset, CountDataset};
use crate::diagnostics::dirichlet_moment_fit;
use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec};
use crate::sampler::{sample_model, sample_multinomial_compound, RngConfig};
use crate::score::{fit_continuous, fit_counts, CountEstimator, FitResult};
use crate::stats::{mean, population_sd, quantile};
use crate::weight::WeightSpec;

/// Largest tolerated share of failed replicates per estimator.
pub const MAX_FAILURE_RATE: f64 = 0.2;

/// Estimator roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Estimator {
    CappedMin = 1,
    CappedProduct = 2,
    Product = 3,
    Min = 4,
    /// Product weight with factorial moments from counts.
    Factorial = 5,
    /// Dirichlet method of moments.
    DirichletMoments = 6,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::CappedMin,
        Estimator::CappedProduct,
        Estimator::Product,
        Estimator::Min,
        Estimator::Factorial,
        Estimator::DirichletMoments,
    ];

    pub fn number(self) -> u8 {
        self as u8
    }

    /// Weight used by score-matching estimators, given the two cap choices.
    pub fn weight(self, ac_min: f64, ac_product: f64) -> Result<Option<WeightSpec>> {
        Ok(match self {
            Estimator::CappedMin => Some(WeightSpec::capped_min(ac_min)?),
            Estimator::CappedProduct => Some(WeightSpec::capped_product(ac_product)?),
            Estimator::Product | Estimator::Factorial => Some(WeightSpec::product()),
            Estimator::Min => Some(WeightSpec::min()),
            Estimator::DirichletMoments => None,
        })
    }
}

impl TryFrom<u8> for Estimator {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.number() == v)
            .ok_or_else(|| format!("unknown estimator {v}; expected 1-6"))
    }
}

impl From<Estimator> for u8 {
    fn from(e: Estimator) -> u8 {
        e.number()
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// A registered simulation model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preset {
    pub id: u32,
    pub description: String,
    /// Latent model; its `estimated` mask marks the free parameters.
    pub model: ModelSpec,
    /// Multinomial total for discrete models.
    pub total: Option<u64>,
    pub ac_min: f64,
    pub ac_product: f64,
}

/// Interaction block of the five-category hybrid model.
pub fn model1_interaction() -> DMatrix<f64> {
    DMatrix::from_row_slice(
        4,
        4,
        &[
            -127480.0, 14068.4, 1782.26, -240.077, //
            14068.4, -8191.17, -8.00268, 374.694, //
            1782.26, -8.00268, -46.6387, 9.02763, //
            -240.077, 374.694, 9.02763, -39.2089,
        ],
    )
}

fn continuous_presets() -> Result<Vec<Preset>> {
    let m1 = ModelSpec::hybrid(model1_interaction(), DVector::zeros(4), vec![-0.8, -0.85, 0.0, -0.2, 0.0])?
        .with_linear_fixed();
    let m2 = ModelSpec::hybrid(
        DMatrix::from_row_slice(2, 2, &[-63602.0, 15145.0, 15145.0, -5694.0]),
        DVector::zeros(2),
        vec![-0.75; 3],
    )?
    .with_linear_fixed();
    let m3 = ModelSpec::truncated_gaussian(
        DMatrix::from_row_slice(2, 2, &[-26.3678, 5.9598, 5.9598, -35.8885]),
        DVector::zeros(2),
    )?
    .with_linear_fixed();
    let tg10 = |a: f64, b: f64| {
        ModelSpec::truncated_gaussian(DMatrix::identity(9, 9) * a, DVector::from_element(9, b))
    };
    let dir = |b: Vec<f64>| ModelSpec::dirichlet(b);
    let mix = |k: usize| {
        let mut v = vec![-0.8; k];
        v.extend(vec![9.0; 10 - k]);
        v
    };
    let rows: Vec<(u32, &str, ModelSpec, f64, f64)> = vec![
        (1, "hybrid, p = 5", m1, 0.01, 1e-4),
        // models 2 and 3 take the caps of their discrete counterparts 14 and 15
        (2, "hybrid, p = 3", m2, 0.01, 1e-3),
        (3, "truncated gaussian, p = 3", m3, 0.1, 0.02),
        (4, "truncated gaussian, p = 10, A = -5000 I", tg10(-5000.0, 400.0)?, 0.1, 2e-7),
        (5, "truncated gaussian, p = 10, A = -500 I", tg10(-500.0, 40.0)?, 0.02, 1e-7),
        (6, "truncated gaussian, p = 10, A = -50 I", tg10(-50.0, 4.0)?, 0.02, 1e-7),
        (7, "dirichlet, p = 3", dir(vec![-0.5, 0.7, 540.0])?, 0.01, 1e-3),
        (8, "dirichlet, p = 10, beta = -0.8", dir(vec![-0.8; 10])?, 0.002, 1e-8),
        (9, "dirichlet, p = 10, beta = 9", dir(vec![9.0; 10])?, 0.17, 6e-6),
        (10, "dirichlet, p = 10, five small shapes", dir(mix(5))?, 0.002, 2e-9),
        (11, "dirichlet, p = 10, two small shapes", dir(mix(2))?, 0.005, 2e-7),
        (12, "dirichlet, p = 10, eight small shapes", dir(mix(8))?, 0.001, 5e-11),
    ];
    Ok(rows
        .into_iter()
        .map(|(id, d, model, ac_min, ac_product)| Preset {
            id,
            description: d.to_string(),
            model,
            total: None,
            ac_min,
            ac_product,
        })
        .collect())
}

/// All registered models, ordered by id.
pub fn presets() -> Vec<Preset> {
    let mut out = continuous_presets().expect("preset parameters are valid");
    let discrete = [(13, 1, 0.01, 1e-4), (14, 2, 0.01, 1e-3), (15, 3, 0.1, 0.02), (16, 7, 0.01, 1e-3)];
    for (id, latent, ac_min, ac_product) in discrete {
        let base = out.iter().find(|p| p.id == latent).expect("latent preset").clone();
        out.push(Preset {
            id,
            description: format!("multinomial, m = 2000, latent model {latent}"),
            model: base.model,
            total: Some(2000),
            ac_min,
            ac_product,
        });
    }
    out
}

pub fn preset(id: u32) -> Result<Preset> {
    presets()
        .into_iter()
        .find(|p| p.id == id)
        .ok_or_else(|| Error::Config(format!("unknown model preset {id}; expected 1-16")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub model: ModelSpec,
    /// Multinomial total; `None` for continuous data.
    pub total: Option<u64>,
    pub ac_min: f64,
    pub ac_product: f64,
    pub estimators: Vec<Estimator>,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub ridge: f64,
    #[serde(default)]
    pub preset: Option<u32>,
}

impl StudyConfig {
    pub fn from_preset(id: u32, n: usize, replicates: usize, estimators: Vec<Estimator>, seed: u64) -> Result<Self> {
        let p = preset(id)?;
        Ok(StudyConfig {
            model: p.model,
            total: p.total,
            ac_min: p.ac_min,
            ac_product: p.ac_product,
            estimators,
            n,
            replicates,
            seed,
            ridge: 0.0,
            preset: Some(id),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.replicates < 2 {
            return Err(Error::Config("a study needs at least two replicates".into()));
        }
        if self.n == 0 {
            return Err(Error::Config("sample size must be positive".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.total == Some(0) {
            return Err(Error::Config("multinomial total must be positive".into()));
        }
        for &e in &self.estimators {
            e.weight(self.ac_min, self.ac_product)?;
            match e {
                Estimator::Factorial if self.total.is_none() => {
                    return Err(Error::Config("estimator 5 needs count data (set a multinomial total)".into()))
                }
                Estimator::Factorial if self.model.family == Family::Dirichlet => {
                    return Err(Error::Config("estimator 5 does not apply to dirichlet models".into()))
                }
                Estimator::DirichletMoments if self.model.family != Family::Dirichlet => {
                    return Err(Error::Config("estimator 6 applies only to dirichlet models".into()))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Labels and true values of the estimated parameters.
    pub fn truth(&self) -> (Vec<String>, Vec<f64>) {
        if self.model.family == Family::Dirichlet {
            let labels = (1..=self.model.p).map(|j| format!("beta{j}")).collect();
            return (labels, self.model.shape.clone());
        }
        let map = self.model.index_map();
        let pi = self.model.pi();
        let free: Vec<usize> = (0..map.q()).filter(|&i| self.model.estimated[i]).collect();
        (free.iter().map(|&i| map.label(i).to_string()).collect(), free.iter().map(|&i| pi[i]).collect())
    }
}

/// Outcome of one estimator on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub estimator: Estimator,
    /// Estimates of the free parameters, in `truth()` order; empty on failure.
    pub estimates: Vec<f64>,
    pub standard_errors: Vec<Option<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub estimator: String,
    pub parameter: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Standard deviation over replicates, divisor `R`.
    pub se: f64,
    pub rmse: f64,
    pub rbias: f64,
    /// 5%, 50%, 95% percentiles of the estimated standard errors.
    pub se_estimator: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub config: StudyConfig,
    pub cells: Vec<CellSummary>,
    /// Failed replicates per estimator number.
    pub failures: Vec<(Estimator, usize)>,
    pub replicates: Vec<ReplicateRecord>,
}

fn free_estimates(fit: &FitResult) -> (Vec<f64>, Vec<Option<f64>>) {
    fit.parameters.iter().filter(|p| p.estimated).map(|p| (p.estimate, p.se)).unzip()
}

enum Sample {
    Continuous(ContinuousDataset),
    Counts(CountDataset),
}

fn run_estimator(config: &StudyConfig, sample: &Sample, e: Estimator) -> Result<(Vec<f64>, Vec<Option<f64>>)> {
    let model = &config.model;
    let weight = e.weight(config.ac_min, config.ac_product)?;
    match (e, sample) {
        (Estimator::DirichletMoments, Sample::Continuous(d)) => {
            let b = dirichlet_moment_fit(d)?;
            let n = b.len();
            Ok((b, vec![None; n]))
        }
        (Estimator::DirichletMoments, Sample::Counts(c)) => {
            let b = dirichlet_moment_fit(&c.to_proportions()?)?;
            let n = b.len();
            Ok((b, vec![None; n]))
        }
        (Estimator::Factorial, Sample::Counts(c)) => {
            let fit = fit_counts(c, model, weight.expect("weighted"), CountEstimator::Factorial, config.ridge)?;
            Ok(free_estimates(&fit))
        }
        (_, Sample::Continuous(d)) => {
            let fit = fit_continuous(d, model, weight.expect("weighted"), config.ridge)?;
            Ok(free_estimates(&fit))
        }
        (_, Sample::Counts(c)) => {
            let fit = fit_counts(c, model, weight.expect("weighted"), CountEstimator::Proportions, config.ridge)?;
            Ok(free_estimates(&fit))
        }
    }
}

fn run_replicate(config: &StudyConfig, r: usize) -> Vec<ReplicateRecord> {
    let mut rng = RngConfig::new(config.seed, r as u64).rng();
    let sample = sample_model(&config.model, config.n, &mut rng).and_then(|(latent, _)| match config.total {
        Some(m) => Ok(Sample::Counts(sample_multinomial_compound(&latent, &[m], &mut rng)?)),
        None => Ok(Sample::Continuous(latent)),
    });
    config
        .estimators
        .iter()
        .map(|&e| {
            let outcome = sample.as_ref().map_err(|err| err.to_string()).and_then(|s| {
                run_estimator(config, s, e).map_err(|err| err.to_string())
            });
            match outcome {
                Ok((estimates, standard_errors)) => {
                    ReplicateRecord { replicate: r, estimator: e, estimates, standard_errors, error: None }
                }
                Err(msg) => ReplicateRecord {
                    replicate: r,
                    estimator: e,
                    estimates: Vec::new(),
                    standard_errors: Vec::new(),
                    error: Some(msg),
                },
            }
        })
        .collect()
}

/// Runs `R` replicates on independent streams `(seed, r)` and summarises each
/// (estimator, parameter) cell against the model's true values.
///
/// Failed replicates are excluded and counted; more than 20% failures for any
/// estimator fails the study.
pub fn run_study(config: &StudyConfig) -> Result<StudySummary> {
    config.validate()?;
    let records: Vec<ReplicateRecord> =
        (0..config.replicates).into_par_iter().flat_map_iter(|r| run_replicate(config, r)).collect();
    let (labels, truth) = config.truth();
    let mut cells = Vec::new();
    let mut failures = Vec::new();
    for &e in &config.estimators {
        let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.estimator == e && r.error.is_none()).collect();
        let failed = config.replicates - ok.len();
        failures.push((e, failed));
        if failed as f64 > MAX_FAILURE_RATE * config.replicates as f64 {
            let first = records
                .iter()
                .find(|r| r.estimator == e && r.error.is_some())
                .and_then(|r| r.error.clone())
                .unwrap_or_default();
            return Err(Error::Study(format!(
                "estimator {e}: {failed} of {} replicates failed (first error: {first})",
                config.replicates
            )));
        }
        if ok.len() < 2 {
            return Err(Error::Study(format!("estimator {e}: fewer than two successful replicates")));
        }
        for (k, label) in labels.iter().enumerate() {
            let est: Vec<f64> = ok.iter().map(|r| r.estimates[k]).collect();
            let m = mean(&est);
            let bias = m - truth[k];
            let se = population_sd(&est);
            let rmse = mean(&est.iter().map(|v| (v - truth[k]).powi(2)).collect::<Vec<_>>()).sqrt();
            let ses: Vec<f64> = ok.iter().filter_map(|r| r.standard_errors[k]).collect();
            let se_estimator = (!ses.is_empty()).then(|| [quantile(&ses, 0.05), quantile(&ses, 0.5), quantile(&ses, 0.95)]);
            cells.push(CellSummary {
                estimator: e.to_string(),
                parameter: label.clone(),
                truth: truth[k],
                mean: m,
                bias,
                se,
                rmse,
                rbias: if se > 0.0 { bias / se } else { f64::NAN },
                se_estimator,
            });
        }
    }
    Ok(StudySummary { config: config.clone(), cells, failures, replicates: records })
}

/// Externally computed results displayed alongside the study's own cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineCell {
    pub estimator: String,
    pub parameter: String,
    pub se: f64,
    pub rmse: f64,
    pub rbias: f64,
}

impl StudySummary {
    pub fn cell(&self, estimator: Estimator, parameter: &str) -> Option<&CellSummary> {
        let key = estimator.to_string();
        self.cells.iter().find(|c| c.estimator == key && c.parameter == parameter)
    }

    /// Summary table: one row per parameter and estimator, with baseline rows appended.
    pub fn write_summary_csv<W: Write>(&self, writer: W, baselines: &[BaselineCell]) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["estimator", "parameter", "truth", "se", "rmse", "rbias", "se_p05", "se_p50", "se_p95"])?;
        let f = |v: f64| v.to_string();
        for c in &self.cells {
            let pct = c.se_estimator.map(|p| p.map(f)).unwrap_or_default();
            w.write_record([
                c.estimator.clone(),
                c.parameter.clone(),
                f(c.truth),
                f(c.se),
                f(c.rmse),
                f(c.rbias),
                pct[0].clone(),
                pct[1].clone(),
                pct[2].clone(),
            ])?;
        }
        let (labels, truth) = self.config.truth();
        for b in baselines {
            let t = labels.iter().position(|l| *l == b.parameter).map(|k| f(truth[k])).unwrap_or_default();
            w.write_record([
                b.estimator.clone(),
                b.parameter.clone(),
                t,
                f(b.se),
                f(b.rmse),
                f(b.rbias),
                String::new(),
                String::new(),
                String::new(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Raw per-replicate estimates, one row per (replicate, estimator).
    pub fn write_replicates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let (labels, _) = self.config.truth();
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["replicate".to_string(), "estimator".to_string()];
        header.extend(labels.iter().cloned());
        header.extend(labels.iter().map(|l| format!("se_{l}")));
        header.push("error".into());
        w.write_record(&header)?;
        for r in &self.replicates {
            let mut row = vec![r.replicate.to_string(), r.estimator.to_string()];
            if r.error.is_some() {
                row.extend(std::iter::repeat_n(String::new(), 2 * labels.len()));
            } else {
                row.extend(r.estimates.iter().map(|v| v.to_string()));
                row.extend(r.standard_errors.iter().map(|v| v.map(|s| s.to_string()).unwrap_or_default()));
            }
            row.push(r.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_covers_all_models() {
        let all = presets();
        assert_eq!(all.iter().map(|p| p.id).collect::<Vec<_>>(), (1..=16).collect::<Vec<_>>());
        let m1 = preset(1).unwrap();
        assert_eq!(m1.model.pi().len(), 14);
        assert_eq!(m1.model.estimated.iter().filter(|&&e| e).count(), 10);
        assert_eq!(preset(13).unwrap().total, Some(2000));
        assert_eq!(preset(9).unwrap().ac_min, 0.17);
        assert_eq!(preset(12).unwrap().ac_product, 5e-11);
        assert!(preset(17).is_err());
    }

    #[test]
    fn config_compatibility_is_enforced() {
        assert!(StudyConfig::from_preset(3, 100, 10, vec![Estimator::Factorial], 1).unwrap().validate().is_err());
        assert!(StudyConfig::from_preset(15, 100, 10, vec![Estimator::Factorial], 1).unwrap().validate().is_ok());
        assert!(StudyConfig::from_preset(3, 100, 10, vec![Estimator::DirichletMoments], 1).unwrap().validate().is_err());
        assert!(StudyConfig::from_preset(3, 100, 1, vec![Estimator::CappedMin], 1).unwrap().validate().is_err());
    }

    #[test]
    fn small_study_identity_and_reproducibility() {
        let cfg = StudyConfig::from_preset(3, 300, 6, vec![Estimator::CappedMin, Estimator::Min], 42).unwrap();
        let a = run_study(&cfg).unwrap();
        let b = run_study(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.cells.len(), 6);
        for c in &a.cells {
            assert!((c.rmse.powi(2) - (c.se.powi(2) + c.bias.powi(2))).abs() < 1e-8 * (1.0 + c.rmse.powi(2)));
            let p = c.se_estimator.unwrap();
            assert!(p[0] <= p[1] && p[1] <= p[2]);
        }
    }
}
