//! End-to-end fits and their labelled, serialisable result.

use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::dirichlet::DirichletWorkspace;
use super::moments::FactorialWorkspace;
use super::solve::{solve, standard_errors, Solution};
use super::workspace::EstimatorWorkspace;
use super::EstimatingEquations;
use crate::data::{ContinuousDataset, CountDataset, SphereData};
use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec};
use crate::weight::{WeightKind, WeightSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CountEstimator {
    /// Plug in `u_hat = x / m` and use the continuous estimator.
    Proportions,
    /// Product weight with factorial-moment estimates.
    Factorial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterEstimate {
    pub label: String,
    pub estimate: f64,
    /// `None` for fixed parameters or when no per-observation terms exist.
    pub se: Option<f64>,
    pub z_score: Option<f64>,
    pub estimated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub family: Family,
    pub estimator: String,
    pub weight: WeightSpec,
    pub n: usize,
    pub p: usize,
    pub parameters: Vec<ParameterEstimate>,
    /// Labels indexing `covariance`.
    pub covariance_labels: Vec<String>,
    /// Plug-in covariance of `sqrt(n)` times the estimated parameters.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// `None` when the free block of `W` is exactly singular.
    pub condition_number: Option<f64>,
    pub ridge: f64,
    /// Fitted model, with estimates substituted.
    pub model: ModelSpec,
}

impl FitResult {
    pub fn estimate(&self, label: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.label == label).map(|p| p.estimate)
    }

    pub fn se(&self, label: &str) -> Option<f64> {
        self.parameters.iter().find(|p| p.label == label).and_then(|p| p.se)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.estimate).collect()
    }

    /// CSV with columns `parameter, estimate, estimate_over_se`.
    pub fn write_table_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parameter", "estimate", "estimate_over_se"])?;
        for p in &self.parameters {
            let z = p.z_score.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([p.label.as_str(), &p.estimate.to_string(), &z])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn package(
    eq: &dyn EstimatingEquations,
    sol: &Solution,
    to_output: impl Fn(f64) -> f64,
    se_scale: f64,
    model: ModelSpec,
    weight: WeightSpec,
    estimator: &str,
) -> Result<FitResult> {
    let labels = eq.labels();
    let n = eq.n();
    let cov = standard_errors(eq, sol)?;
    let mut parameters = Vec::with_capacity(labels.len());
    for (i, label) in labels.iter().enumerate() {
        let slot = sol.free.iter().position(|&f| f == i);
        let estimate = to_output(sol.pi[i]);
        let se = match (&cov, slot) {
            (Some(c), Some(k)) => Some(se_scale * (c[(k, k)].max(0.0) / n as f64).sqrt()),
            _ => None,
        };
        parameters.push(ParameterEstimate {
            label: label.clone(),
            estimate,
            se,
            z_score: se.map(|s| estimate / s),
            estimated: slot.is_some(),
        });
    }
    let k = sol.free.len();
    let covariance = cov.map(|c| {
        (0..k).map(|a| (0..k).map(|b| se_scale * se_scale * c[(a, b)]).collect()).collect()
    });
    Ok(FitResult {
        family: model.family,
        estimator: estimator.to_string(),
        weight,
        n,
        p: model.p,
        parameters,
        covariance_labels: sol.free.iter().map(|&i| labels[i].clone()).collect(),
        covariance,
        condition_number: sol.condition_number.is_finite().then_some(sol.condition_number),
        ridge: sol.ridge,
        model,
    })
}

pub(crate) fn fit_dirichlet_sphere(
    data: &SphereData,
    weight: WeightSpec,
    ridge: f64,
    estimator: &str,
) -> Result<FitResult> {
    let ws = DirichletWorkspace::assemble(data, weight)?;
    let p = data.p();
    let sol = solve(&ws, &vec![true; p], &DVector::zeros(p), ridge)?;
    let beta: Vec<f64> = sol.pi.iter().map(|v| (v - 1.0) / 2.0).collect();
    let model = ModelSpec::dirichlet(beta.iter().map(|&b| b.max(-1.0 + 1e-12)).collect())?;
    package(&ws, &sol, |v| (v - 1.0) / 2.0, 0.5, model, weight, estimator)
}

fn fit_sphere(
    data: &SphereData,
    model: &ModelSpec,
    weight: WeightSpec,
    ridge: f64,
    estimator: &str,
) -> Result<FitResult> {
    model.validate()?;
    if data.p() != model.p {
        return Err(Error::InvalidDimension(format!("data has p = {}, model has p = {}", data.p(), model.p)));
    }
    if model.family == Family::Dirichlet {
        return fit_dirichlet_sphere(data, weight, ridge, estimator);
    }
    let ws = EstimatorWorkspace::assemble(data, weight, &model.shape)?;
    let sol = solve(&ws, &model.estimated, &model.pi(), ridge)?;
    let fitted = model.with_pi(&sol.pi);
    package(&ws, &sol, |v| v, 1.0, fitted, weight, estimator)
}

/// Fits `model`'s family to compositional data. Entries of `pi` flagged as fixed in
/// `model.estimated` keep their values from `model`.
pub fn fit_continuous(
    data: &ContinuousDataset,
    model: &ModelSpec,
    weight: WeightSpec,
    ridge: f64,
) -> Result<FitResult> {
    fit_sphere(&data.sqrt_transform(), model, weight, ridge, "continuous")
}

/// Fits `model`'s family to count data.
pub fn fit_counts(
    counts: &CountDataset,
    model: &ModelSpec,
    weight: WeightSpec,
    estimator: CountEstimator,
    ridge: f64,
) -> Result<FitResult> {
    match estimator {
        CountEstimator::Proportions => {
            fit_sphere(&counts.to_proportions()?.sqrt_transform(), model, weight, ridge, "proportions")
        }
        CountEstimator::Factorial => {
            model.validate()?;
            if weight.kind() != WeightKind::Product {
                return Err(Error::Config(format!(
                    "the factorial-moment estimator needs the uncapped product weight, got {}",
                    weight.kind()
                )));
            }
            if model.family == Family::Dirichlet {
                return Err(Error::Config("the factorial-moment estimator does not apply to the dirichlet family".into()));
            }
            if counts.p() != model.p {
                return Err(Error::InvalidDimension(format!("data has p = {}, model has p = {}", counts.p(), model.p)));
            }
            let ws = FactorialWorkspace::new(counts, &model.shape)?;
            let sol = solve(&ws, &model.estimated, &model.pi(), ridge)?;
            let fitted = model.with_pi(&sol.pi);
            package(&ws, &sol, |v| v, 1.0, fitted, weight, "factorial")
        }
    }
}
