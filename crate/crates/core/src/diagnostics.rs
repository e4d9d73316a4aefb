//! Model checking: simulate from a fitted model, round to the count grid and
//! compare marginals with the observed data.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ContinuousDataset;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::sampler::{sample_model, RejectionStats};
use crate::stats::{mean, quantile_sorted, sample_sd};

/// Number of probability points in each qq table.
pub const QQ_POINTS: usize = 99;

/// `round(u m) / m`, halves rounded away from zero.
pub fn round_value(u: f64, m: u64) -> f64 {
    (u * m as f64).round() / m as f64
}

/// Rounds every value onto the `1/m` grid. Rows are not renormalised.
pub fn round_to_grid(values: &[f64], m: u64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidTotal { row: 0, total: 0 });
    }
    Ok(values.iter().map(|&u| round_value(u, m)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Whether the pooled sample contains repeated values; the asymptotic
    /// p-value assumes continuous data.
    pub ties: bool,
}

/// Complementary Kolmogorov distribution `P(K > lambda)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
        let mut s = 0.0;
        let mut k = 1.0f64;
        loop {
            let t = y.powf(k * k);
            s += t;
            if t < 1e-17 * s.max(1e-300) || k > 50.0 {
                break;
            }
            k += 2.0;
        }
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * s).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * lambda * lambda).exp();
        let mut s = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let t = x.powi(k * k);
            s += sign * t;
            sign = -sign;
            if t < 1e-17 {
                break;
            }
        }
        (2.0 * s).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value and the usual
/// small-sample correction `(sqrt(ne) + 0.12 + 0.11 / sqrt(ne)) D`.
pub fn ks_compare(observed: &[f64], simulated: &[f64]) -> Result<KsResult> {
    if observed.is_empty() || simulated.is_empty() {
        return Err(Error::InvalidData("KS comparison needs non-empty samples".into()));
    }
    if observed.iter().chain(simulated).any(|v| v.is_nan()) {
        return Err(Error::InvalidData("KS comparison input contains NaN".into()));
    }
    let mut a = observed.to_vec();
    let mut b = simulated.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    let mut ties = a.windows(2).any(|w| w[0] == w[1]) || b.windows(2).any(|w| w[0] == w[1]);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        if a[i] == b[j] {
            ties = true;
        }
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_q(lambda), ties })
}

/// Method-of-moments Dirichlet fit, returning `beta` (shape minus one).
///
/// The precision comes from the first category's mean and variance,
/// `alpha_0 = m_1 (1 - m_1) / v_1 - 1`, and `alpha_j = m_j alpha_0`.
pub fn dirichlet_moment_fit(data: &ContinuousDataset) -> Result<Vec<f64>> {
    dirichlet_moment_fit_from(data, 0)
}

/// As [`dirichlet_moment_fit`], taking the precision from category `k` (zero-based).
pub fn dirichlet_moment_fit_from(data: &ContinuousDataset, k: usize) -> Result<Vec<f64>> {
    if data.n() < 2 {
        return Err(Error::InvalidData("moment fit needs at least two rows".into()));
    }
    if k >= data.p() {
        return Err(Error::InvalidDimension(format!("category {} out of range", k + 1)));
    }
    let m: Vec<f64> = (0..data.p()).map(|j| mean(&data.column(j))).collect();
    if let Some(j) = m.iter().position(|&x| x == 0.0) {
        return Err(Error::UnidentifiableCategory(j + 1));
    }
    let v = sample_sd(&data.column(k)).powi(2);
    if v <= 0.0 {
        return Err(Error::InvalidData(format!("category {} is constant", k + 1)));
    }
    let alpha0 = m[k] * (1.0 - m[k]) / v - 1.0;
    if alpha0 <= 0.0 {
        return Err(Error::InvalidData("data are more dispersed than any Dirichlet".into()));
    }
    Ok(m.iter().map(|x| x * alpha0 - 1.0).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub name: String,
    /// Observed column identically zero; KS entries are omitted.
    pub degenerate: bool,
    pub ks: Option<KsResult>,
    pub observed_mean: f64,
    pub observed_sd: f64,
    pub simulated_mean: f64,
    pub simulated_sd: f64,
    /// `(observed, simulated)` quantile pairs at `k / (QQ_POINTS + 1)`.
    pub qq: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub n_observed: usize,
    pub n_simulated: usize,
    pub grid_total: Option<u64>,
    pub categories: Vec<CategoryReport>,
    pub sampler: Option<RejectionStats>,
}

fn qq_pairs(a: &[f64], b: &[f64]) -> Vec<(f64, f64)> {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    (1..=QQ_POINTS)
        .map(|k| {
            let q = k as f64 / (QQ_POINTS + 1) as f64;
            (quantile_sorted(&a, q), quantile_sorted(&b, q))
        })
        .collect()
}

/// Compares each observed marginal with `n_sim` draws from `fitted`, optionally
/// rounded to the `1/m` grid.
pub fn marginal_report<R: Rng + ?Sized>(
    observed: &ContinuousDataset,
    fitted: &ModelSpec,
    grid_total: Option<u64>,
    n_sim: usize,
    rng: &mut R,
) -> Result<DiagnosticReport> {
    if observed.p() != fitted.p {
        return Err(Error::InvalidDimension(format!(
            "observed data have p = {}, fitted model has p = {}",
            observed.p(),
            fitted.p
        )));
    }
    if n_sim == 0 || observed.n() == 0 {
        return Err(Error::InvalidData("marginal report needs non-empty samples".into()));
    }
    let (sim, stats) = sample_model(fitted, n_sim, rng)?;
    let mut categories = Vec::with_capacity(observed.p());
    for j in 0..observed.p() {
        let obs = observed.column(j);
        let mut s = sim.column(j);
        if let Some(m) = grid_total {
            s = round_to_grid(&s, m)?;
        }
        let degenerate = obs.iter().all(|&v| v == 0.0);
        categories.push(CategoryReport {
            name: observed.names()[j].clone(),
            degenerate,
            ks: if degenerate { None } else { Some(ks_compare(&obs, &s)?) },
            observed_mean: mean(&obs),
            observed_sd: sample_sd(&obs),
            simulated_mean: mean(&s),
            simulated_sd: sample_sd(&s),
            qq: qq_pairs(&obs, &s),
        });
    }
    Ok(DiagnosticReport {
        n_observed: observed.n(),
        n_simulated: n_sim,
        grid_total,
        categories,
        sampler: stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{sample_dirichlet, RngConfig};
    use proptest::prelude::*;

    #[test]
    fn rounding_examples() {
        assert_eq!(round_value(0.0123, 2000), 25.0 / 2000.0);
        assert_eq!(round_value(0.0, 17), 0.0);
        assert_eq!(round_value(1.0 / 2000.0, 2000), 1.0 / 2000.0);
        // 0.5 / m rounds away from zero
        assert_eq!(round_value(0.25, 2), 0.5);
    }

    #[test]
    fn ks_extremes() {
        let x = [0.1, 0.2, 0.3];
        let r = ks_compare(&x, &x).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!(r.ties);
        let r = ks_compare(&[0.0; 4], &[1.0; 6]).unwrap();
        assert_eq!(r.statistic, 1.0);
        assert!(r.p_value < 0.05);
    }

    #[test]
    fn kolmogorov_tail_values() {
        // P(K > 1.36) ~ 0.049, P(K > 1.63) ~ 0.0098
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_q(1.628) - 0.01).abs() < 1e-3);
        // continuity between the two series
        assert!((kolmogorov_q(1.18 - 1e-9) - kolmogorov_q(1.18)).abs() < 1e-9);
        assert!((kolmogorov_q(0.5) - 0.9639).abs() < 1e-3);
    }

    #[test]
    fn moment_fit_recovers_dirichlet() {
        let beta = [0.5, 2.0, -0.3];
        let d = sample_dirichlet(&beta, 40_000, &mut RngConfig::new(4, 0).rng()).unwrap();
        let fit = dirichlet_moment_fit(&d).unwrap();
        for j in 0..3 {
            assert!((fit[j] - beta[j]).abs() < 0.1 * (1.0 + beta[j].abs()), "{fit:?}");
        }
    }

    #[test]
    fn degenerate_category_is_flagged() {
        let obs = ContinuousDataset::new(3, vec![0.0, 0.4, 0.6, 0.0, 0.5, 0.5]).unwrap();
        let spec = ModelSpec::dirichlet(vec![0.0; 3]).unwrap();
        let rep = marginal_report(&obs, &spec, Some(100), 500, &mut RngConfig::new(1, 0).rng()).unwrap();
        assert!(rep.categories[0].degenerate && rep.categories[0].ks.is_none());
        assert!(!rep.categories[1].degenerate);
        assert!(rep.categories.iter().all(|c| c.observed_sd.is_finite() && c.simulated_mean.is_finite()));
    }

    proptest! {
        #[test]
        fn round_to_grid_is_idempotent(u in proptest::collection::vec(0.0f64..1.0, 1..20), m in 1u64..5000) {
            let once = round_to_grid(&u, m).unwrap();
            prop_assert_eq!(round_to_grid(&once, m).unwrap(), once);
        }

        #[test]
        fn ks_symmetric_and_monotone_invariant(
            a in proptest::collection::vec(0.0f64..1.0, 1..40),
            b in proptest::collection::vec(0.0f64..1.0, 1..40),
        ) {
            let ab = ks_compare(&a, &b).unwrap();
            let ba = ks_compare(&b, &a).unwrap();
            prop_assert!((ab.statistic - ba.statistic).abs() < 1e-15);
            let sa: Vec<f64> = a.iter().map(|v| v.sqrt()).collect();
            let sb: Vec<f64> = b.iter().map(|v| v.sqrt()).collect();
            let t = ks_compare(&sa, &sb).unwrap();
            prop_assert!((ab.statistic - t.statistic).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&ab.statistic));
        }
    }
}
