//! Sample-moment assembly of `W`, `d1`, `d2`, `d6` for the hybrid model
//! (and its truncated-Gaussian special case).
//!
//! Every quantity is an average over observations of a closed-form expression in
//! `z`. The per-observation kernels below are shared by the builders, the single-pass
//! workspace assembly and the sandwich residual pass.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::gradients::{stat_gradient, stat_nu, SparseGrad};
use crate::data::SphereData;
use crate::error::{Error, Result};
use crate::model::{Label, ParameterIndexMap};
use crate::stats::blocked_sum;
use crate::weight::{argmin_sq, WeightSpec};

/// Per-observation evaluation of the hybrid-model estimating equations.
#[derive(Debug, Clone)]
pub(crate) struct HybridKernel {
    pub map: ParameterIndexMap,
    pub weight: WeightSpec,
    p: usize,
    q: usize,
    /// For each coordinate, the statistics whose gradient touches it and the slot
    /// inside their sparse gradient.
    coord_stats: Vec<Vec<(usize, usize)>>,
    lambda2: f64,
    lambda4: f64,
}

pub(crate) struct Scratch {
    pub sq: Vec<f64>,
    pub grads: Vec<SparseGrad>,
    pub nu: Vec<f64>,
    pub h2: f64,
}

impl HybridKernel {
    pub fn new(p: usize, weight: WeightSpec) -> Result<Self> {
        let map = ParameterIndexMap::new(p)?;
        let q = map.q();
        let mut coord_stats = vec![Vec::new(); p];
        for (i, &label) in map.labels().iter().enumerate() {
            match label {
                Label::Diag(j) | Label::Linear(j) => coord_stats[j].push((i, 0)),
                Label::Cross(j, k) => {
                    coord_stats[j].push((i, 0));
                    coord_stats[k].push((i, 1));
                }
            }
        }
        coord_stats.iter_mut().for_each(|v| v.sort_unstable());
        let pf = p as f64;
        Ok(HybridKernel {
            map,
            weight,
            p,
            q,
            coord_stats,
            // lambda_k = k (k + p - 2)
            lambda2: 2.0 * pf,
            lambda4: 4.0 * (pf + 2.0),
        })
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn scratch(&self) -> Scratch {
        Scratch {
            sq: vec![0.0; self.p],
            grads: self.map.labels().iter().map(|&l| stat_gradient(l, &vec![0.0; self.p])).collect(),
            nu: vec![0.0; self.q],
            h2: 0.0,
        }
    }

    pub fn prepare(&self, z: &[f64], s: &mut Scratch) {
        for (sq, v) in s.sq.iter_mut().zip(z) {
            *sq = v * v;
        }
        for (i, &label) in self.map.labels().iter().enumerate() {
            s.grads[i] = stat_gradient(label, z);
            s.nu[i] = stat_nu(label, &s.sq);
        }
        s.h2 = self.weight.eval_h_sq(z);
    }

    fn grad_value(grad: &SparseGrad, slot: usize) -> f64 {
        grad.entries().nth(slot).map_or(0.0, |(_, v)| v)
    }

    /// Adds `h^2 (mu_a' mu_b - nu_a nu_b)` into the upper triangle of a row-major `q x q` buffer.
    pub fn add_w(&self, s: &Scratch, out: &mut [f64]) {
        let (q, h2) = (self.q, s.h2);
        if h2 == 0.0 {
            return;
        }
        for a in 0..q {
            let na = h2 * s.nu[a];
            if na == 0.0 {
                continue;
            }
            let row = &mut out[a * q..(a + 1) * q];
            for b in a..q {
                row[b] -= na * s.nu[b];
            }
        }
        for stats in &self.coord_stats {
            for (ia, &(a, slot_a)) in stats.iter().enumerate() {
                let ma = h2 * Self::grad_value(&s.grads[a], slot_a);
                if ma == 0.0 {
                    continue;
                }
                for &(b, slot_b) in &stats[ia..] {
                    out[a * q + b] += ma * Self::grad_value(&s.grads[b], slot_b);
                }
            }
        }
    }

    /// Adds `-h^2 Laplacian(t_i)`.
    pub fn add_d1(&self, s: &Scratch, out: &mut [f64]) {
        if s.h2 == 0.0 {
            return;
        }
        let sq = &s.sq;
        for (i, &label) in self.map.labels().iter().enumerate() {
            let lap = match label {
                Label::Diag(j) => -self.lambda4 * sq[j] * sq[j] + 12.0 * sq[j],
                Label::Cross(j, k) => 2.0 * (-self.lambda4 * sq[j] * sq[k] + 2.0 * sq[j] + 2.0 * sq[k]),
                Label::Linear(j) => -self.lambda2 * sq[j] + 2.0,
            };
            out[i] -= s.h2 * lap;
        }
    }

    /// Adds the product-weight form `-2 I_z h^2 (d3, d4, d5)`.
    pub fn add_d2_product(&self, z: &[f64], s: &Scratch, out: &mut [f64]) {
        if s.h2 == 0.0 || !self.weight.below_cap(z) {
            return;
        }
        let (sq, pf) = (&s.sq, self.p as f64);
        let scale = -2.0 * s.h2;
        for (i, &label) in self.map.labels().iter().enumerate() {
            let term = match label {
                Label::Diag(j) => 4.0 * sq[j] * (1.0 - pf * sq[j]),
                Label::Cross(j, k) => 4.0 * sq[j] + 4.0 * sq[k] - 8.0 * pf * sq[j] * sq[k],
                Label::Linear(j) => 2.0 * (1.0 - pf * sq[j]),
            };
            out[i] += scale * term;
        }
    }

    /// Adds the minimum-weight form `-(d3, d4, d5)`, keyed on the lowest-index argmin.
    pub fn add_d2_min(&self, z: &[f64], s: &Scratch, out: &mut [f64]) {
        if !self.weight.below_cap(z) {
            return;
        }
        let sq = &s.sq;
        let a = argmin_sq(z);
        let sa = sq[a];
        for (i, &label) in self.map.labels().iter().enumerate() {
            let term = match label {
                Label::Diag(j) if j == a => 8.0 * sq[j] * sq[j] * (1.0 - sq[j]),
                Label::Diag(j) => -8.0 * sq[j] * sq[j] * sa,
                Label::Cross(j, k) if j == a => {
                    8.0 * sq[j] * sq[k] * (1.0 - sq[j]) - 8.0 * sq[j] * sq[j] * sq[k]
                }
                Label::Cross(j, k) if k == a => {
                    8.0 * sq[j] * sq[k] * (1.0 - sq[k]) - 8.0 * sq[j] * sq[k] * sq[k]
                }
                Label::Cross(j, k) => -16.0 * sa * sq[j] * sq[k],
                Label::Linear(j) if j == a => 4.0 * sq[j] * (1.0 - sq[j]),
                Label::Linear(j) => -4.0 * sq[j] * sa,
            };
            out[i] -= term;
        }
    }

    pub fn add_d2(&self, z: &[f64], s: &Scratch, out: &mut [f64]) {
        if self.weight.kind().is_product_family() {
            self.add_d2_product(z, s, out)
        } else {
            self.add_d2_min(z, s, out)
        }
    }

    /// Adds `h^2 (mu_i' mu^(s)_j - nu_i)` into a row-major `q x p` buffer.
    ///
    /// `mu_i' mu^(s)_j = mu_i[j] / z_j` is a polynomial, so no division by `z_j` occurs.
    pub fn add_v(&self, s: &Scratch, out: &mut [f64]) {
        let (p, h2, sq) = (self.p, s.h2, &s.sq);
        if h2 == 0.0 {
            return;
        }
        for (i, &label) in self.map.labels().iter().enumerate() {
            let row = &mut out[i * p..(i + 1) * p];
            for v in row.iter_mut() {
                *v -= h2 * s.nu[i];
            }
            match label {
                Label::Diag(k) => row[k] += h2 * 4.0 * sq[k],
                Label::Cross(k, l) => {
                    row[k] += h2 * 4.0 * sq[l];
                    row[l] += h2 * 4.0 * sq[k];
                }
                Label::Linear(k) => row[k] += h2 * 2.0,
            }
        }
    }

    /// `R(z) pi - r(z)` for one prepared observation.
    pub fn residual(&self, z: &[f64], s: &Scratch, pi: &[f64], pi2: &[f64], out: &mut [f64]) {
        let (p, q) = (self.p, self.q);
        out.iter_mut().for_each(|v| *v = 0.0);
        if s.h2 != 0.0 {
            let nu_pi: f64 = s.nu.iter().zip(pi).map(|(a, b)| a * b).sum();
            let mut coord = vec![0.0; p];
            for (b, grad) in s.grads.iter().enumerate() {
                for (l, v) in grad.entries() {
                    coord[l] += v * pi[b];
                }
            }
            for a in 0..q {
                let m: f64 = s.grads[a].entries().map(|(l, v)| v * coord[l]).sum();
                out[a] = s.h2 * (m - s.nu[a] * nu_pi);
            }
        }
        let mut r = vec![0.0; q];
        self.add_d1(s, &mut r);
        self.add_d2(z, s, &mut r);
        let mut v = vec![0.0; q * p];
        self.add_v(s, &mut v);
        for a in 0..q {
            let d6: f64 = -(0..p).map(|j| v[a * p + j] * pi2[j]).sum::<f64>();
            out[a] -= r[a] + d6;
        }
    }
}

fn average_over<F>(data: &SphereData, width: usize, f: F) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let n = data.n();
    let mut sums = blocked_sum(n, width, |range: Range<usize>, buf| {
        for i in range {
            f(data.row(i), buf);
        }
    });
    sums.iter_mut().for_each(|v| *v /= n as f64);
    sums
}

fn check_dimension(data: &SphereData) -> Result<()> {
    if data.n() == 0 {
        return Err(Error::InvalidData("empty dataset".into()));
    }
    Ok(())
}

fn symmetric_from_upper(q: usize, upper: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(q, q, |i, j| if i <= j { upper[i * q + j] } else { upper[j * q + i] })
}

/// `W = mean h^2 (M'M - nu nu')`.
pub fn build_w(data: &SphereData, w: &WeightSpec) -> Result<DMatrix<f64>> {
    check_dimension(data)?;
    let kernel = HybridKernel::new(data.p(), *w)?;
    let q = kernel.q();
    let upper = average_over(data, q * q, |z, buf| {
        let mut s = kernel.scratch();
        kernel.prepare(z, &mut s);
        kernel.add_w(&s, buf);
    });
    Ok(symmetric_from_upper(q, &upper))
}

/// `d1 = -mean h^2 Laplacian(t)`.
pub fn build_d1(data: &SphereData, w: &WeightSpec) -> Result<DVector<f64>> {
    check_dimension(data)?;
    let kernel = HybridKernel::new(data.p(), *w)?;
    let d = average_over(data, kernel.q(), |z, buf| {
        let mut s = kernel.scratch();
        kernel.prepare(z, &mut s);
        kernel.add_d1(&s, buf);
    });
    Ok(DVector::from_vec(d))
}

/// `d2` for the product weight and its capped form.
pub fn build_d2_capped_product(data: &SphereData, w: &WeightSpec) -> Result<DVector<f64>> {
    check_dimension(data)?;
    if !w.kind().is_product_family() {
        return Err(Error::Config(format!("product-form d2 requested with {} weight", w.kind())));
    }
    let kernel = HybridKernel::new(data.p(), *w)?;
    let d = average_over(data, kernel.q(), |z, buf| {
        let mut s = kernel.scratch();
        kernel.prepare(z, &mut s);
        kernel.add_d2_product(z, &s, buf);
    });
    Ok(DVector::from_vec(d))
}

/// `d2` for the minimum weight and its capped form.
pub fn build_d2_capped_min(data: &SphereData, w: &WeightSpec) -> Result<DVector<f64>> {
    check_dimension(data)?;
    if w.kind().is_product_family() {
        return Err(Error::Config(format!("min-form d2 requested with {} weight", w.kind())));
    }
    let kernel = HybridKernel::new(data.p(), *w)?;
    let d = average_over(data, kernel.q(), |z, buf| {
        let mut s = kernel.scratch();
        kernel.prepare(z, &mut s);
        kernel.add_d2_min(z, &s, buf);
    });
    Ok(DVector::from_vec(d))
}

/// `V` (`q x p`), with `v_ij = mean h^2 (mu_i' mu^(s)_j - nu_i)`.
pub fn build_v(data: &SphereData, w: &WeightSpec) -> Result<DMatrix<f64>> {
    check_dimension(data)?;
    let kernel = HybridKernel::new(data.p(), *w)?;
    let (p, q) = (kernel.p(), kernel.q());
    let v = average_over(data, q * p, |z, buf| {
        let mut s = kernel.scratch();
        kernel.prepare(z, &mut s);
        kernel.add_v(&s, buf);
    });
    Ok(DMatrix::from_row_slice(q, p, &v))
}

/// `d6 = -V pi2` with `pi2 = 1 + 2 beta`.
pub fn build_d6(data: &SphereData, w: &WeightSpec, shape: &[f64]) -> Result<DVector<f64>> {
    if shape.len() != data.p() {
        return Err(Error::InvalidModel(format!("beta has length {}, expected {}", shape.len(), data.p())));
    }
    if let Some(b) = shape.iter().find(|&&b| b <= -1.0) {
        return Err(Error::InvalidModel(format!("beta entry {b} must exceed -1")));
    }
    let v = build_v(data, w)?;
    let pi2 = DVector::from_iterator(shape.len(), shape.iter().map(|b| 1.0 + 2.0 * b));
    Ok(-(v * pi2))
}
