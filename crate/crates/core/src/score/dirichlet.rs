//! Score matching for the Dirichlet family with `t = log z` and `pi = 1 + 2 beta`.
//!
//! Every `h^2 / z_j^2` is simplified per weight kind before evaluation, so zeros in
//! the data never produce `0 * inf`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::EstimatingEquations;
use crate::data::SphereData;
use crate::error::{Error, Result};
use crate::stats::blocked_sum;
use crate::weight::{argmin_sq, WeightSpec};

/// Per-observation `h^2`, `rho_j = h^2 / z_j^2` and `r_j = d1_j + d2_j`.
fn observation(z: &[f64], w: &WeightSpec, rho: &mut [f64], r: &mut [f64]) -> f64 {
    let p = z.len();
    let below = w.below_cap(z);
    let h2 = if below {
        if w.kind().is_product_family() {
            for j in 0..p {
                rho[j] = (0..p).filter(|&l| l != j).map(|l| z[l] * z[l]).product();
            }
            z.iter().map(|v| v * v).product()
        } else {
            let a = argmin_sq(z);
            let sa = z[a] * z[a];
            for j in 0..p {
                let sj = z[j] * z[j];
                rho[j] = if sj == sa { 1.0 } else { sa / sj };
            }
            sa
        }
    } else {
        let c2 = w.cap_sq();
        for j in 0..p {
            rho[j] = c2 / (z[j] * z[j]);
        }
        c2
    };
    let pf = p as f64;
    for j in 0..p {
        r[j] = (pf - 2.0) * h2 + rho[j];
    }
    if below {
        if w.kind().is_product_family() {
            for j in 0..p {
                r[j] -= 2.0 * (rho[j] - pf * h2);
            }
        } else {
            let a = argmin_sq(z);
            let sa = z[a] * z[a];
            for (j, rj) in r.iter_mut().enumerate() {
                *rj += if j == a { -2.0 * (1.0 - sa) } else { 2.0 * sa };
            }
        }
    }
    h2
}

/// Assembled Dirichlet estimating equations, `W = mean(diag(rho) - h^2 11')`.
#[derive(Debug, Clone)]
pub struct DirichletWorkspace {
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
    weight: WeightSpec,
    data: SphereData,
}

impl DirichletWorkspace {
    pub fn assemble(data: &SphereData, weight: WeightSpec) -> Result<Self> {
        let (n, p) = (data.n(), data.p());
        if n == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        for j in 0..p {
            if data.rows().all(|z| z[j] == 0.0) {
                return Err(Error::UnidentifiableCategory(j + 1));
            }
        }
        let sums = blocked_sum(n, p * p + p, |range, buf| {
            let (mut rho, mut r) = (vec![0.0; p], vec![0.0; p]);
            for i in range {
                let h2 = observation(data.row(i), &weight, &mut rho, &mut r);
                for a in 0..p {
                    buf[a * p + a] += rho[a];
                    for b in 0..p {
                        buf[a * p + b] -= h2;
                    }
                    buf[p * p + a] += r[a];
                }
            }
        });
        let nf = n as f64;
        let w = DMatrix::from_row_slice(p, p, &sums[..p * p]) / nf;
        let d = DVector::from_column_slice(&sums[p * p..]) / nf;
        Ok(DirichletWorkspace { w, d, weight, data: data.clone() })
    }

    pub fn weight(&self) -> WeightSpec {
        self.weight
    }
}

impl EstimatingEquations for DirichletWorkspace {
    fn labels(&self) -> Vec<String> {
        (1..=self.data.p()).map(|j| format!("beta{j}")).collect()
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    fn d(&self) -> DVector<f64> {
        self.d.clone()
    }

    fn residuals(&self, range: Range<usize>, pi: &[f64], sink: &mut dyn FnMut(&[f64])) {
        let p = self.data.p();
        let (mut rho, mut r, mut e) = (vec![0.0; p], vec![0.0; p], vec![0.0; p]);
        let total: f64 = pi.iter().sum();
        for i in range {
            let h2 = observation(self.data.row(i), &self.weight, &mut rho, &mut r);
            for j in 0..p {
                e[j] = rho[j] * pi[j] - h2 * total - r[j];
            }
            sink(&e);
        }
    }
}

/// Fits `beta` for the Dirichlet family. See [`crate::score::fit_continuous`] for the
/// labelled result; this is the same estimator.
pub fn dirichlet_fit(data: &SphereData, w: &WeightSpec, ridge: f64) -> Result<super::FitResult> {
    super::fit::fit_dirichlet_sphere(data, *w, ridge, "continuous")
}
