//! Seeded Monte Carlo checks of estimators, samplers and diagnostics.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use simplexsm::diagnostics::{ks_compare, marginal_report};
use simplexsm::sampler::{sample_dirichlet, sample_hybrid, sample_model, sample_multinomial_compound, RngConfig};
use simplexsm::score::{EstimatorWorkspace, FactorialWorkspace};
use simplexsm::simulation::{preset, run_study, Estimator, StudyConfig};
use simplexsm::stats::{mean, population_sd};
use simplexsm::{fit_continuous, ContinuousDataset, ModelSpec, WeightSpec};

#[test]
fn model3_fit_lies_in_three_se_ellipsoid() {
    let pr = preset(3).unwrap();
    let (data, _) = sample_model(&pr.model, 100_000, &mut RngConfig::new(31, 0).rng()).unwrap();
    let fit = fit_continuous(&data, &pr.model, WeightSpec::capped_min(0.1).unwrap(), 0.0).unwrap();
    let truth = [("a11", -26.3678), ("a22", -35.8885), ("a12", 5.9598)];
    let idx: Vec<usize> =
        truth.iter().map(|(l, _)| fit.covariance_labels.iter().position(|c| c == l).unwrap()).collect();
    let cov = fit.covariance.as_ref().unwrap();
    let sigma = DMatrix::from_fn(3, 3, |i, j| cov[idx[i]][idx[j]] / fit.n as f64);
    let err = DVector::from_iterator(3, truth.iter().map(|(l, t)| fit.estimate(l).unwrap() - t));
    let m2 = err.dot(&(sigma.try_inverse().unwrap() * &err));
    assert!(m2.sqrt() < 3.0, "Mahalanobis distance {}", m2.sqrt());
}

#[test]
fn model6_se_estimator_brackets_the_true_se() {
    let s = run_study(&StudyConfig::from_preset(6, 1000, 100, vec![Estimator::CappedMin], 32).unwrap()).unwrap();
    let cell = s.cell(Estimator::CappedMin, "a11").unwrap();
    let [lo, median, hi] = cell.se_estimator.unwrap();
    assert!(lo <= median && median <= hi);
    assert!((median / 7.1114 - 1.0).abs() < 0.35, "median estimated SE {median}");
}

#[test]
fn model3_capped_min_is_nearly_unbiased() {
    let s = run_study(&StudyConfig::from_preset(3, 1000, 100, vec![Estimator::CappedMin], 33).unwrap()).unwrap();
    for label in ["a11", "a22", "a12"] {
        let rbias = s.cell(Estimator::CappedMin, label).unwrap().rbias;
        assert!(rbias.abs() < 1.0, "{label}: rbias {rbias}");
    }
}

#[test]
fn dirichlet_fit_recovers_large_shapes() {
    let pr = preset(9).unwrap();
    let (data, _) = sample_model(&pr.model, 100_000, &mut RngConfig::new(34, 0).rng()).unwrap();
    let fit = fit_continuous(&data, &pr.model, WeightSpec::capped_min(pr.ac_min).unwrap(), 0.0).unwrap();
    for j in 1..=10 {
        let label = format!("beta{j}");
        let (est, se) = (fit.estimate(&label).unwrap(), fit.se(&label).unwrap());
        assert!((est - 9.0).abs() < 3.0 * se, "{label}: {est} +- {se}");
    }
}

#[test]
fn hybrid_sampler_agrees_with_truncated_gaussian() {
    let tg = preset(3).unwrap().model;
    let hybrid = ModelSpec::hybrid(tg.interaction_matrix(), tg.linear_vector(), vec![0.0; 3]).unwrap();
    let (a, _) = sample_model(&tg, 20_000, &mut RngConfig::new(35, 0).rng()).unwrap();
    let (b, stats) = sample_hybrid(&hybrid, 20_000, &mut RngConfig::new(35, 1).rng(), 1.0, 1000).unwrap();
    assert!(stats.accepted <= stats.attempted);
    for j in 0..3 {
        let ks = ks_compare(&a.column(j), &b.column(j)).unwrap();
        assert!(ks.p_value > 0.01, "coordinate {j}: {ks:?}");
    }
}

#[test]
fn fitted_microbiome_model_is_samplable() {
    let spec = preset(1).unwrap().model;
    let (u, stats) = sample_hybrid(&spec, 2000, &mut RngConfig::new(36, 0).rng(), 1.0, 1000).unwrap();
    assert!(stats.accepted <= stats.attempted && stats.acceptance_rate() > 0.0);
    for j in 0..5 {
        let m = mean(&u.column(j));
        assert!(m.is_finite() && m > 0.0 && m < 1.0, "category {j}: {m}");
    }
}

#[test]
fn multinomial_compounding_adds_sampling_variance() {
    // Var(x/m) = Var(u) + (E u - E u^2) / m
    let m = 20u64;
    let mut rng = RngConfig::new(37, 0).rng();
    let latent = sample_dirichlet(&[1.0, 0.5, 3.0], 200_000, &mut rng).unwrap();
    let counts = sample_multinomial_compound(&latent, &[m], &mut rng).unwrap();
    let props = counts.to_proportions().unwrap();
    for j in 0..3 {
        let u = latent.column(j);
        let eu2 = mean(&u.iter().map(|v| v * v).collect::<Vec<_>>());
        let expected = population_sd(&u).powi(2) + (mean(&u) - eu2) / m as f64;
        let observed = population_sd(&props.column(j)).powi(2);
        assert!((observed / expected - 1.0).abs() < 0.05, "category {j}: {observed} vs {expected}");
    }
}

#[test]
fn factorial_and_continuous_w_converge_for_large_totals() {
    let mut rng = RngConfig::new(38, 0).rng();
    let latent = sample_dirichlet(&[1.0, 2.0, 1.5], 3000, &mut rng).unwrap();
    let counts = sample_multinomial_compound(&latent, &[1_000_000], &mut rng).unwrap();
    let shape = [0.0; 3];
    let fac = FactorialWorkspace::new(&counts, &shape).unwrap();
    let cont = EstimatorWorkspace::assemble(&latent.sqrt_transform(), WeightSpec::product(), &shape).unwrap();
    let gap = (&fac.w - &cont.w).amax();
    assert!(gap < 1e-3, "max |W_fac - W_cont| = {gap}");
}

#[test]
fn ks_null_calibration() {
    let mut rng = RngConfig::new(39, 0).rng();
    let mut passed = 0;
    for _ in 0..100 {
        let a: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        if ks_compare(&a, &b).unwrap().p_value > 0.01 {
            passed += 1;
        }
    }
    assert!(passed >= 98, "{passed}/100 runs above 0.01");
}

#[test]
fn marginal_report_is_self_consistent() {
    let spec = preset(3).unwrap().model;
    let mut clean = 0;
    for run in 0..100 {
        let (obs, _) = sample_model(&spec, 92, &mut RngConfig::new(40, 2 * run).rng()).unwrap();
        let rep = marginal_report(&obs, &spec, None, 100_000, &mut RngConfig::new(40, 2 * run + 1).rng()).unwrap();
        if rep.categories.iter().all(|c| c.ks.unwrap().p_value > 0.01) {
            clean += 1;
        }
    }
    assert!(clean >= 95, "{clean}/100 runs with every KS p-value above 0.01");
}

#[test]
fn dirichlet_moment_fit_understates_overdispersed_sds() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_proportions.csv");
    let obs = ContinuousDataset::read_csv(std::fs::File::open(path).unwrap()).unwrap();
    let beta = simplexsm::diagnostics::dirichlet_moment_fit(&obs).unwrap();
    let spec = ModelSpec::dirichlet(beta).unwrap();
    let rep = marginal_report(&obs, &spec, Some(2000), 100_000, &mut RngConfig::new(41, 0).rng()).unwrap();
    for c in &rep.categories {
        assert!((c.simulated_mean - c.observed_mean).abs() < 0.5 * c.observed_mean + 1e-3, "{}", c.name);
    }
    assert!(rep.categories.iter().filter(|c| c.simulated_sd < c.observed_sd).count() >= 3);
}
