//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p simplexsm --test acceptance`.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use simplexsm::diagnostics::{dirichlet_moment_fit, marginal_report};
use simplexsm::model::Label;
use simplexsm::sampler::{sample_dirichlet, sample_hybrid, sample_model, sample_multinomial_compound, RngConfig};
use simplexsm::score::moments::MomentExpansion;
use simplexsm::score::{
    build_d1, build_d2_capped_min, build_d2_capped_product, build_d6, build_w, solve, EmpiricalMoments,
    EstimatingEquations, EstimatorWorkspace, MomentProvider,
};
use simplexsm::simulation::{preset, run_study, Estimator, StudyConfig, StudySummary};
use simplexsm::weight::cap_from_quantile;
use simplexsm::{fit_continuous, ContinuousDataset, Family, ModelSpec, SphereData, WeightKind, WeightSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Minimises `f` given only its gradient: Jacobi-preconditioned nonlinear CG with a
/// secant line search, restarted every `q` steps.
fn generic_minimise(grad: &dyn Fn(&DVector<f64>) -> DVector<f64>, q: usize) -> DVector<f64> {
    let mut x = DVector::zeros(q);
    let g0 = grad(&x);
    // diagonal curvature from gradient differences
    let diag = DVector::from_iterator(
        q,
        (0..q).map(|i| {
            let mut e = DVector::zeros(q);
            e[i] = 1.0;
            (grad(&e)[i] - g0[i]).abs().max(1e-300)
        }),
    );
    let tol = 1e-15 * g0.norm().max(1e-300);
    let mut g = g0;
    for _ in 0..200 {
        let mut s = -g.component_div(&diag);
        let mut y = g.component_div(&diag);
        for _ in 0..q {
            let slope0 = g.dot(&s);
            let slope1 = grad(&(&x + &s)).dot(&s);
            if slope1 == slope0 {
                break;
            }
            let t = -slope0 / (slope1 - slope0);
            x += t * &s;
            let g_new = grad(&x);
            if g_new.norm() <= tol {
                return x;
            }
            let y_new = g_new.component_div(&diag);
            let beta = (g_new.dot(&y_new) / g.dot(&y)).max(0.0);
            s = -&y_new + beta * s;
            g = g_new;
            y = y_new;
        }
        g = grad(&x);
    }
    x
}

fn random_sphere<R: Rng>(rng: &mut R, p: usize, n: usize) -> SphereData {
    let shape: Vec<f64> = (0..p).map(|_| rng.random_range(-0.5..1.5)).collect();
    sample_dirichlet(&shape, n, rng).unwrap().sqrt_transform()
}

fn criterion1() -> Outcome {
    let kinds = [WeightKind::Product, WeightKind::CappedProduct, WeightKind::Min, WeightKind::CappedMin];
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let mut rng = RngConfig::new(1000 + k, 0).rng();
        let p = if k % 2 == 0 { 3 } else { 5 };
        let data = random_sphere(&mut rng, p, 50);
        let kind = kinds[(k % 4) as usize];
        let a_c = if kind.is_capped() { cap_from_quantile(&data, kind, 0.7).unwrap() } else { 1.0 };
        let weight = WeightSpec::new(kind, a_c).unwrap();
        let beta: Vec<f64> = (0..p).map(|_| rng.random_range(-0.6..0.6)).collect();

        let w = build_w(&data, &weight).unwrap();
        let d2 = if kind.is_product_family() {
            build_d2_capped_product(&data, &weight).unwrap()
        } else {
            build_d2_capped_min(&data, &weight).unwrap()
        };
        let d = build_d1(&data, &weight).unwrap() + d2 + build_d6(&data, &weight, &beta).unwrap();
        let q = d.len();
        let oracle = generic_minimise(&|x: &DVector<f64>| &w * x - &d, q);

        let ws = EstimatorWorkspace::assemble(&data, weight, &beta).unwrap();
        let sol = solve(&ws, &vec![true; q], &DVector::zeros(q), 0.0).unwrap();
        for i in 0..q {
            let rel = (sol.pi[i] - oracle[i]).abs() / oracle[i].abs();
            worst = worst.max(rel);
        }
    }
    outcome(worst < 1e-6, format!("20 datasets, worst per-coordinate relative error {worst:.2e} (< 1e-6)"))
}

fn criterion2() -> Outcome {
    let mut details = Vec::new();
    let mut pass = true;
    for id in [3u32, 6] {
        let pr = preset(id).unwrap();
        let mut rng = RngConfig::new(2, id as u64).rng();
        let (data, _) = sample_model(&pr.model, 100_000, &mut rng).unwrap();
        let weight = WeightSpec::capped_min(pr.ac_min).unwrap();
        let ws = EstimatorWorkspace::assemble(&data.sqrt_transform(), weight, &pr.model.shape).unwrap();
        let d = ws.d();
        let r = (&ws.w * pr.model.pi() - &d).norm() / (1.0 + d.norm());
        pass &= r < 0.05;
        details.push(format!("model {id}: {r:.4}"));
    }
    outcome(pass, format!("||W pi0 - d|| / (1 + ||d||): {} (< 0.05)", details.join(", ")))
}

fn study(id: u32, n: usize, reps: usize, est: Estimator, seed: u64) -> StudySummary {
    run_study(&StudyConfig::from_preset(id, n, reps, vec![est], seed).unwrap()).unwrap()
}

fn criterion3() -> Outcome {
    let small = study(3, 1000, 100, Estimator::CappedMin, 3);
    let large = study(3, 4000, 100, Estimator::CappedMin, 4);
    let mut pass = true;
    let mut details = Vec::new();
    for label in ["a11", "a22", "a12"] {
        let ratio = small.cell(Estimator::CappedMin, label).unwrap().se / large.cell(Estimator::CappedMin, label).unwrap().se;
        pass &= (1.4..=2.9).contains(&ratio);
        details.push(format!("{label} {ratio:.2}"));
    }
    outcome(pass, format!("SE(n=1000)/SE(n=4000): {} (in [1.4, 2.9])", details.join(", ")))
}

fn criterion4() -> Outcome {
    let s = study(6, 1000, 200, Estimator::CappedMin, 5);
    let (labels, truth) = s.config.truth();
    let mut pass = true;
    let mut details = Vec::new();
    for label in ["a11", "a22", "a12", "b1", "b2"] {
        let k = labels.iter().position(|l| l == label).unwrap();
        let ok: Vec<_> = s.replicates.iter().filter(|r| r.error.is_none()).collect();
        let covered = ok
            .iter()
            .filter(|r| (r.estimates[k] - truth[k]).abs() <= 1.96 * r.standard_errors[k].unwrap())
            .count();
        let rate = covered as f64 / ok.len() as f64;
        pass &= (0.88..=0.99).contains(&rate);
        details.push(format!("{label} {rate:.3}"));
    }
    outcome(pass, format!("95% coverage: {} (in [0.88, 0.99])", details.join(", ")))
}

fn criterion5() -> Outcome {
    let m9 = study(9, 1000, 100, Estimator::CappedMin, 6);
    let r9 = m9.cell(Estimator::CappedMin, "beta1").unwrap().rmse;
    let m7 = study(7, 92, 100, Estimator::CappedMin, 7);
    let r7 = m7.cell(Estimator::CappedMin, "beta3").unwrap().rmse;
    let pass = (0.09..=0.35).contains(&r9) && (46.0..=184.0).contains(&r7);
    outcome(pass, format!("model 9 RMSE(beta1) {r9:.3} (in [0.09, 0.35]); model 7 RMSE(beta3) {r7:.1} (in [46, 184])"))
}

fn criterion6() -> Outcome {
    let pr = preset(15).unwrap();
    let mut rng = RngConfig::new(8, 0).rng();
    let (latent, _) = sample_model(&pr.model, 10_000, &mut rng).unwrap();
    let counts = sample_multinomial_compound(&latent, &[2000], &mut rng).unwrap();
    let expansion = MomentExpansion::new(3, &pr.model.shape).unwrap();
    let fac = simplexsm::score::factorial_moment_provider(&counts).moments(expansion.monomials()).unwrap();
    let emp = EmpiricalMoments::new(&latent.sqrt_transform()).moments(expansion.monomials()).unwrap();
    let worst = fac.iter().zip(&emp).map(|(f, e)| (f - e).abs() / e.abs()).fold(0.0f64, f64::max);

    let s = study(15, 10_000, 100, Estimator::Factorial, 9);
    let rb: Vec<f64> =
        ["a11", "a22", "a12"].iter().map(|l| s.cell(Estimator::Factorial, l).unwrap().rbias).collect();
    let pass = worst < 0.01 && rb.iter().all(|r| r.abs() < 1.0);
    outcome(
        pass,
        format!(
            "{} moments, worst relative gap to latent oracle {worst:.2e} (< 1e-2); rbias a11 {:.2}, a22 {:.2}, a12 {:.2} (|.| < 1)",
            fac.len(),
            rb[0],
            rb[1],
            rb[2]
        ),
    )
}

fn criterion7() -> Outcome {
    let pr = preset(4).unwrap();
    let mut rng = RngConfig::new(10, 0).rng();
    let (data, _) = sample_model(&pr.model, 100_000, &mut rng).unwrap();
    let mut worst_z: f64 = 0.0;
    for j in 0..9 {
        let col = data.column(j);
        let m = simplexsm::stats::mean(&col);
        let se = simplexsm::stats::sample_sd(&col) / (col.len() as f64).sqrt();
        worst_z = worst_z.max((m - 0.04).abs() / se);
    }
    let beta = vec![-0.8, -0.85, 0.0, -0.2, 0.0];
    let flat = ModelSpec::hybrid(DMatrix::zeros(4, 4), DVector::zeros(4), beta.clone()).unwrap();
    let (h, _) = sample_hybrid(&flat, 20_000, &mut RngConfig::new(11, 0).rng(), 1.0, 1000).unwrap();
    let dref = sample_dirichlet(&beta, 20_000, &mut RngConfig::new(11, 1).rng()).unwrap();
    let min_p = (0..5)
        .map(|j| simplexsm::diagnostics::ks_compare(&h.column(j), &dref.column(j)).unwrap().p_value)
        .fold(1.0f64, f64::min);
    outcome(
        worst_z < 3.0 && min_p > 0.01,
        format!("model 4 worst |mean - 0.04| / MC SE {worst_z:.2} (< 3); flat hybrid vs Dirichlet min KS p {min_p:.3} (> 0.01)"),
    )
}

fn criterion8() -> Outcome {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/synthetic_proportions.csv");
    let observed = ContinuousDataset::read_csv(std::fs::File::open(path).unwrap()).unwrap();
    let generating = preset(1).unwrap().model;
    let fitted = fit_continuous(&observed, &generating, WeightSpec::capped_min(0.01).unwrap(), 0.0).unwrap();
    let hybrid = marginal_report(&observed, &fitted.model, Some(2000), 100_000, &mut RngConfig::new(12, 0).rng());
    let hybrid = hybrid.unwrap();
    let beta = dirichlet_moment_fit(&observed).unwrap();
    let dir = ModelSpec::dirichlet(beta).unwrap();
    let dreport = marginal_report(&observed, &dir, Some(2000), 100_000, &mut RngConfig::new(12, 1).rng()).unwrap();
    let understated = dreport.categories.iter().filter(|c| c.simulated_sd < c.observed_sd).count();
    let close = hybrid
        .categories
        .iter()
        .filter(|c| (c.simulated_sd / c.observed_sd - 1.0).abs() <= 0.5)
        .count();
    let fmt_sd = |r: &simplexsm::diagnostics::DiagnosticReport| {
        r.categories.iter().map(|c| format!("{:.4}", c.simulated_sd)).collect::<Vec<_>>().join("/")
    };
    let obs_sd = hybrid.categories.iter().map(|c| format!("{:.4}", c.observed_sd)).collect::<Vec<_>>().join("/");
    outcome(
        understated >= 3 && close >= 4,
        format!(
            "Dirichlet SD below observed in {understated}/5 (>= 3), hybrid SD within 50% in {close}/5 (>= 4); SDs observed {obs_sd}, hybrid {}, Dirichlet {}",
            fmt_sd(&hybrid),
            fmt_sd(&dreport)
        ),
    )
}

fn criterion9() -> Outcome {
    let mut failures = Vec::new();
    let kinds = [WeightKind::Product, WeightKind::CappedProduct, WeightKind::Min, WeightKind::CappedMin];
    // W symmetric PSD, with and without zeros in the data
    for k in 0..40u64 {
        let mut rng = RngConfig::new(13, k).rng();
        let p = 3 + (k % 3) as usize;
        let mut data = random_sphere(&mut rng, p, 60);
        if k % 2 == 1 {
            let mut z = data.values().to_vec();
            for i in (0..z.len()).step_by(7) {
                z[i] = 0.0;
            }
            // renormalise rows after zeroing
            for row in z.chunks_mut(p) {
                let s = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter_mut().for_each(|v| *v /= s);
            }
            data = SphereData::from_raw(p, z);
        }
        let kind = kinds[(k % 4) as usize];
        let weight = WeightSpec::new(kind, if kind.is_capped() { 0.05 } else { 1.0 }).unwrap();
        let beta = vec![-0.3; p];
        let ws = EstimatorWorkspace::assemble(&data, weight, &beta).unwrap();
        if ws.w != ws.w.transpose() {
            failures.push(format!("W asymmetric (case {k})"));
        }
        let eig = SymmetricEigen::new(ws.w.clone()).eigenvalues;
        if eig.min() < -1e-10 * eig.amax().max(1.0) {
            failures.push(format!("W not PSD (case {k}): {}", eig.min()));
        }
        if ws.w.iter().chain(ws.d().iter()).any(|v| !v.is_finite()) {
            failures.push(format!("non-finite entries (case {k})"));
        }
        let dir = simplexsm::score::DirichletWorkspace::assemble(&data, WeightSpec::min());
        if let Ok(dw) = dir {
            if dw.w.iter().chain(dw.d.iter()).any(|v| !v.is_finite()) {
                failures.push(format!("non-finite Dirichlet entries (case {k})"));
            }
        }
    }
    // boundary-vanishing weights
    for kind in kinds {
        let w = WeightSpec::new(kind, if kind.is_capped() { 0.1 } else { 1.0 }).unwrap();
        if w.eval_h_sq(&[0.0, 0.6f64.sqrt(), 0.4f64.sqrt()]) != 0.0 {
            failures.push(format!("{kind} does not vanish on the boundary"));
        }
    }
    // permutation equivariance of the first p - 1 categories
    let mut rng = RngConfig::new(14, 0).rng();
    let data = random_sphere(&mut rng, 4, 200);
    let perm = [2usize, 0, 1, 3];
    let permuted = data.permute_columns(&perm);
    let map = simplexsm::index_map(4).unwrap();
    for weight in [WeightSpec::capped_min(0.2).unwrap(), WeightSpec::product()] {
        let beta = [-0.2, 0.1, 0.3, 0.0];
        let pbeta: Vec<f64> = perm.iter().map(|&j| beta[j]).collect();
        let a = EstimatorWorkspace::assemble(&data, weight, &beta).unwrap();
        let b = EstimatorWorkspace::assemble(&permuted, weight, &pbeta).unwrap();
        let q = map.q();
        let sa = solve(&a, &vec![true; q], &DVector::zeros(q), 0.0).unwrap().pi;
        let sb = solve(&b, &vec![true; q], &DVector::zeros(q), 0.0).unwrap().pi;
        for (i, &label) in map.labels().iter().enumerate() {
            let original = match label {
                Label::Diag(j) => Label::Diag(perm[j]),
                Label::Cross(j, k) => {
                    let (x, y) = (perm[j].min(perm[k]), perm[j].max(perm[k]));
                    Label::Cross(x, y)
                }
                Label::Linear(j) => Label::Linear(perm[j]),
            };
            let o = sa[map.index_of(original).unwrap()];
            if (sb[i] - o).abs() > 1e-9 * o.abs().max(1.0) {
                failures.push(format!("permutation mismatch at {label}"));
            }
        }
    }
    // determinism under fixed seeds and the RMSE identity
    let cfg = StudyConfig::from_preset(3, 200, 8, vec![Estimator::CappedMin, Estimator::CappedProduct], 15).unwrap();
    let s1 = run_study(&cfg).unwrap();
    let s2 = run_study(&cfg).unwrap();
    if s1 != s2 {
        failures.push("study not reproducible".into());
    }
    for c in &s1.cells {
        if (c.rmse.powi(2) - c.se.powi(2) - c.bias.powi(2)).abs() > 1e-8 * (1.0 + c.rmse.powi(2)) {
            failures.push(format!("RMSE identity broken for {} {}", c.estimator, c.parameter));
        }
    }
    let d1 = sample_model(&preset(1).unwrap().model, 50, &mut RngConfig::new(16, 0).rng()).unwrap().0;
    let d2 = sample_model(&preset(1).unwrap().model, 50, &mut RngConfig::new(16, 0).rng()).unwrap().0;
    if d1.values() != d2.values() {
        failures.push("sampler not reproducible".into());
    }
    let _ = Family::Hybrid;
    outcome(failures.is_empty(), if failures.is_empty() { "all property checks hold".to_string() } else { failures.join("; ") })
}

fn main() {
    let criteria: Vec<(u32, &str, u64, fn() -> Outcome)> = vec![
        (1, "oracle equivalence", 30, criterion1),
        (2, "estimating-equation unbiasedness", 120, criterion2),
        (3, "consistency", 180, criterion3),
        (4, "SE calibration", 300, criterion4),
        (5, "Dirichlet desk-scale match", 300, criterion5),
        (6, "factorial-moment estimator", 180, criterion6),
        (7, "sampler validity", 120, criterion7),
        (8, "diagnostics workflow", 120, criterion8),
        (9, "property suites", 60, criterion9),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (id, name, budget, run) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let out = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id} ({name}): {}; {:.1}s (budget {budget}s)",
            if pass { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
