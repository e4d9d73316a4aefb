//! Closed-form gradients of the sufficient statistics on the sphere scale.

use crate::model::{Label, ParameterIndexMap};

/// Gradient of one statistic; at most two coordinates are nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparseGrad {
    coords: [usize; 2],
    values: [f64; 2],
    len: u8,
}

impl SparseGrad {
    fn one(j: usize, v: f64) -> Self {
        SparseGrad { coords: [j, 0], values: [v, 0.0], len: 1 }
    }

    fn two(j: usize, vj: f64, k: usize, vk: f64) -> Self {
        SparseGrad { coords: [j, k], values: [vj, vk], len: 2 }
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len as usize).map(|i| (self.coords[i], self.values[i]))
    }

    pub fn dense(&self, p: usize) -> Vec<f64> {
        let mut out = vec![0.0; p];
        for (j, v) in self.entries() {
            out[j] += v;
        }
        out
    }

    pub fn dot(&self, z: &[f64]) -> f64 {
        self.entries().map(|(j, v)| v * z[j]).sum()
    }
}

/// `mu_i = grad t_i` and `nu_i = z' mu_i` for one observation, plus the
/// log-statistic gradients `z_j^-1 e_j` (with `nu = 1`).
#[derive(Debug, Clone)]
pub struct GradientTable {
    pub mu: Vec<SparseGrad>,
    pub nu: Vec<f64>,
    /// Diagonal of the log-statistic gradients, `1 / z_j` (infinite at zero).
    pub log_mu: Vec<f64>,
}

impl GradientTable {
    pub fn log_nu(&self) -> f64 {
        1.0
    }
}

pub(crate) fn stat_gradient(label: Label, z: &[f64]) -> SparseGrad {
    match label {
        Label::Diag(j) => SparseGrad::one(j, 4.0 * z[j].powi(3)),
        Label::Cross(j, k) => SparseGrad::two(j, 4.0 * z[j] * z[k] * z[k], k, 4.0 * z[j] * z[j] * z[k]),
        Label::Linear(j) => SparseGrad::one(j, 2.0 * z[j]),
    }
}

/// `nu_i` in closed form: `4 z_j^4`, `8 z_j^2 z_k^2` or `2 z_j^2`.
pub(crate) fn stat_nu(label: Label, sq: &[f64]) -> f64 {
    match label {
        Label::Diag(j) => 4.0 * sq[j] * sq[j],
        Label::Cross(j, k) => 8.0 * sq[j] * sq[k],
        Label::Linear(j) => 2.0 * sq[j],
    }
}

pub fn gradients(z: &[f64], map: &ParameterIndexMap) -> GradientTable {
    assert_eq!(z.len(), map.p());
    let sq: Vec<f64> = z.iter().map(|v| v * v).collect();
    let mu: Vec<SparseGrad> = map.labels().iter().map(|&l| stat_gradient(l, z)).collect();
    let nu: Vec<f64> = map.labels().iter().map(|&l| stat_nu(l, &sq)).collect();
    debug_assert!(mu
        .iter()
        .zip(&nu)
        .all(|(m, &n)| (m.dot(z) - n).abs() <= 1e-12 * (1.0 + n.abs())));
    GradientTable {
        mu,
        nu,
        log_mu: z.iter().map(|v| 1.0 / v).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::index_map;

    fn stat_value(label: Label, z: &[f64]) -> f64 {
        match label {
            Label::Diag(j) => z[j].powi(4),
            Label::Cross(j, k) => 2.0 * z[j].powi(2) * z[k].powi(2),
            Label::Linear(j) => z[j].powi(2),
        }
    }

    #[test]
    fn vertex_examples() {
        let map = index_map(3).unwrap();
        let g = gradients(&[1.0, 0.0, 0.0], &map);
        assert_eq!(g.mu[0].dense(3), vec![4.0, 0.0, 0.0]);
        assert_eq!(g.nu[0], 4.0);

        let g = gradients(&[0.0, 1.0, 0.0], &map);
        let cross = map.cross_index(0, 1);
        assert_eq!(g.mu[cross].dense(3), vec![0.0, 0.0, 0.0]);
        assert_eq!(g.nu[cross], 0.0);
    }

    #[test]
    fn nu_is_z_dot_mu_and_mu_matches_finite_differences() {
        let map = index_map(5).unwrap();
        let raw = [0.3, 0.1, 0.25, 0.05, 0.3];
        let z: Vec<f64> = raw.iter().map(|v: &f64| v.sqrt()).collect();
        let g = gradients(&z, &map);
        for (i, &label) in map.labels().iter().enumerate() {
            let dot: f64 = g.mu[i].dot(&z);
            assert!((dot - g.nu[i]).abs() < 1e-14);
            let dense = g.mu[i].dense(5);
            for j in 0..5 {
                let h = 1e-6;
                let mut zp = z.clone();
                let mut zm = z.clone();
                zp[j] += h;
                zm[j] -= h;
                let fd = (stat_value(label, &zp) - stat_value(label, &zm)) / (2.0 * h);
                assert!((fd - dense[j]).abs() < 1e-8, "{label} coord {j}");
            }
        }
        assert_eq!(g.log_nu(), 1.0);
        assert!((g.log_mu[0] - 1.0 / z[0]).abs() < 1e-15);
    }
}
