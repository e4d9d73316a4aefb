//! Masked solve of the estimating equations and the sandwich covariance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::workspace::EstimatorWorkspace;
use super::EstimatingEquations;
use crate::data::SphereData;
use crate::error::{Error, Result};
use crate::stats::blocked_sum;
use crate::weight::WeightSpec;

/// Relative eigenvalue threshold below which the Jacobi-scaled system is singular.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Solution {
    /// Full parameter vector; fixed entries keep their supplied values.
    pub pi: DVector<f64>,
    /// Indices of the estimated entries, ascending.
    pub free: Vec<usize>,
    /// 2-norm condition number of the free block of `W` (before any ridge).
    pub condition_number: f64,
    pub ridge: f64,
}

impl Solution {
    pub fn free_pi(&self) -> DVector<f64> {
        DVector::from_iterator(self.free.len(), self.free.iter().map(|&i| self.pi[i]))
    }
}

fn submatrix(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

fn describe_combination(labels: &[String], free: &[usize], v: &DVector<f64>) -> String {
    let mut terms: Vec<(usize, f64)> = v.iter().copied().enumerate().filter(|(_, c)| c.abs() > 0.05).collect();
    terms.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    terms.truncate(6);
    if terms.is_empty() {
        return "0".into();
    }
    terms
        .iter()
        .enumerate()
        .map(|(k, &(i, c))| {
            let sign = if c < 0.0 { "-" } else if k > 0 { "+" } else { "" };
            format!("{sign}{:.3}*{}", c.abs(), labels[free[i]])
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Solves `W_FF pi_F = d_F - W_FX pi_X` for the estimated block `F`, optionally
/// adding `ridge * I` to `W_FF`.
///
/// `estimated` flags each entry of `pi`; `fixed` supplies the values of the others.
pub fn solve(
    eq: &dyn EstimatingEquations,
    estimated: &[bool],
    fixed: &DVector<f64>,
    ridge: f64,
) -> Result<Solution> {
    let w = eq.w();
    let q = w.nrows();
    if estimated.len() != q || fixed.len() != q {
        return Err(Error::InvalidDimension(format!("mask and fixed values must have length {q}")));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::Config(format!("ridge must be finite and non-negative, got {ridge}")));
    }
    let free: Vec<usize> = (0..q).filter(|&i| estimated[i]).collect();
    let held: Vec<usize> = (0..q).filter(|&i| !estimated[i]).collect();
    if free.is_empty() {
        return Err(Error::Config("no parameters left to estimate".into()));
    }
    let d = eq.d();
    let labels = eq.labels();
    let wff = submatrix(w, &free, &free);
    let mut rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| d[i]));
    if !held.is_empty() {
        let px = DVector::from_iterator(held.len(), held.iter().map(|&i| fixed[i]));
        rhs -= submatrix(w, &free, &held) * px;
    }

    if ridge == 0.0 {
        // Judge singularity on the Jacobi-scaled matrix so parameter units do not matter.
        if let Some(k) = (0..free.len()).find(|&k| !(wff[(k, k)] > 0.0)) {
            return Err(Error::SingularSystem { combination: format!("1.000*{}", labels[free[k]]) });
        }
        let scale = DVector::from_iterator(free.len(), (0..free.len()).map(|k| wff[(k, k)].sqrt().recip()));
        let scaled = DMatrix::from_fn(free.len(), free.len(), |i, j| wff[(i, j)] * scale[i] * scale[j]);
        let eig = SymmetricEigen::new(scaled);
        let (imin, &lmin) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty");
        let lmax = eig.eigenvalues.amax();
        if lmin <= SINGULAR_RTOL * lmax {
            let dir = eig.eigenvectors.column(imin).component_mul(&scale);
            let dir = &dir / dir.norm();
            return Err(Error::SingularSystem { combination: describe_combination(&labels, &free, &dir) });
        }
    }

    let mut system = wff.clone();
    for k in 0..free.len() {
        system[(k, k)] += ridge;
    }
    let chol = system.cholesky().ok_or_else(|| Error::SingularSystem {
        combination: "W is not positive definite".into(),
    })?;
    let pf = chol.solve(&rhs);
    let mut pi = fixed.clone();
    for (k, &i) in free.iter().enumerate() {
        pi[i] = pf[k];
    }
    Ok(Solution { pi, free, condition_number: condition_number(&wff), ridge })
}

/// Sandwich estimate `W_FF^-1 Sigma_0 W_FF^-1` of the covariance of `sqrt(n) pi_hat_F`.
///
/// Returns `None` when the equations carry no per-observation residuals.
pub fn standard_errors(eq: &dyn EstimatingEquations, sol: &Solution) -> Result<Option<DMatrix<f64>>> {
    if !eq.has_residuals() {
        return Ok(None);
    }
    let free = &sol.free;
    let k = free.len();
    let n = eq.n();
    let pi = sol.pi.as_slice();
    let sums = blocked_sum(n, k * k, |range, buf| {
        eq.residuals(range, pi, &mut |e| {
            for a in 0..k {
                let ea = e[free[a]];
                if ea == 0.0 {
                    continue;
                }
                for b in a..k {
                    buf[a * k + b] += ea * e[free[b]];
                }
            }
        });
    });
    let sigma0 = DMatrix::from_fn(k, k, |a, b| {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        sums[lo * k + hi] / n as f64
    });
    let mut system = submatrix(eq.w(), free, free);
    for i in 0..k {
        system[(i, i)] += sol.ridge;
    }
    let chol = system.cholesky().ok_or_else(|| Error::SingularSystem {
        combination: "W is not positive definite".into(),
    })?;
    let half = chol.solve(&sigma0);
    let cov = chol.solve(&half.transpose());
    Ok(Some((&cov + cov.transpose()) * 0.5))
}

/// `0.5 pi' W pi - pi' (d1 + d2 + d6)` for the hybrid model.
pub fn objective_value(data: &SphereData, w: &WeightSpec, pi: &DVector<f64>, shape: &[f64]) -> Result<f64> {
    let ws = EstimatorWorkspace::assemble(data, *w, shape)?;
    if pi.len() != ws.q() {
        return Err(Error::InvalidDimension(format!("pi has length {}, expected {}", pi.len(), ws.q())));
    }
    Ok(ws.objective(pi))
}
