//! Model parameterisation and the canonical ordering of the sufficient statistics.
//!
//! The density on the simplex is proportional to
//! `prod_j u_j^beta_j * exp(u' A* u + b' u)` with the last row and column of `A*`
//! and the last entry of `b` pinned to zero. Everything downstream works with the
//! flattened parameter vector `pi = (a_11..a_{p-1,p-1}, a_12..a_{p-2,p-1}, b_1..b_{p-1})`
//! whose entries pair one-to-one with the statistics
//! `(z_1^4.., 2 z_j^2 z_k^2.., z_1^2..)` on the square-root scale.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// `a_jj`, zero-based `j < p-1`.
    Diag(usize),
    /// `a_jk`, zero-based `j < k < p-1`.
    Cross(usize, usize),
    /// `b_j`, zero-based `j < p-1`.
    Linear(usize),
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pair = |f: &mut fmt::Formatter<'_>, j: usize, k: usize| {
            if j < 9 && k < 9 {
                write!(f, "a{}{}", j + 1, k + 1)
            } else {
                write!(f, "a{},{}", j + 1, k + 1)
            }
        };
        match *self {
            Label::Diag(j) => pair(f, j, j),
            Label::Cross(j, k) => pair(f, j, k),
            Label::Linear(j) => write!(f, "b{}", j + 1),
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("unrecognised parameter label {s:?}"));
        let parse = |t: &str| t.parse::<usize>().ok().filter(|&v| v >= 1).map(|v| v - 1);
        if let Some(rest) = s.strip_prefix('b') {
            return parse(rest).map(Label::Linear).ok_or_else(bad);
        }
        let rest = s.strip_prefix('a').ok_or_else(bad)?;
        let (j, k) = if let Some((a, b)) = rest.split_once(',') {
            (parse(a).ok_or_else(bad)?, parse(b).ok_or_else(bad)?)
        } else {
            let bytes = rest.as_bytes();
            if bytes.len() != 2 || !bytes.iter().all(u8::is_ascii_digit) {
                return Err(bad());
            }
            (parse(&rest[..1]).ok_or_else(bad)?, parse(&rest[1..]).ok_or_else(bad)?)
        };
        match j.cmp(&k) {
            std::cmp::Ordering::Equal => Ok(Label::Diag(j)),
            std::cmp::Ordering::Less => Ok(Label::Cross(j, k)),
            std::cmp::Ordering::Greater => Ok(Label::Cross(k, j)),
        }
    }
}

/// Bijection between parameter labels and positions in `pi` (and in `t`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParameterIndexMap {
    p: usize,
    labels: Vec<Label>,
    cross_offsets: Vec<usize>,
}

impl ParameterIndexMap {
    pub fn new(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidDimension(format!("p = {p}, need p >= 2")));
        }
        let r = p - 1;
        let mut labels: Vec<Label> = (0..r).map(Label::Diag).collect();
        let mut cross_offsets = Vec::with_capacity(r);
        for j in 0..r {
            cross_offsets.push(labels.len());
            for k in (j + 1)..r {
                labels.push(Label::Cross(j, k));
            }
        }
        labels.extend((0..r).map(Label::Linear));
        Ok(ParameterIndexMap {
            p,
            labels,
            cross_offsets,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of parameters `q = (p-1) + p(p-1)/2`.
    pub fn q(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Label {
        self.labels[index]
    }

    pub fn index_of(&self, label: Label) -> Option<usize> {
        let r = self.p - 1;
        match label {
            Label::Diag(j) if j < r => Some(j),
            Label::Cross(j, k) if j < k && k < r => Some(self.cross_offsets[j] + (k - j - 1)),
            Label::Linear(j) if j < r => Some(self.q() - r + j),
            _ => None,
        }
    }

    pub fn diag_index(&self, j: usize) -> usize {
        j
    }

    pub fn cross_index(&self, j: usize, k: usize) -> usize {
        debug_assert!(j < k);
        self.cross_offsets[j] + (k - j - 1)
    }

    pub fn linear_index(&self, j: usize) -> usize {
        self.q() - (self.p - 1) + j
    }

    pub fn label_strings(&self) -> Vec<String> {
        self.labels.iter().map(Label::to_string).collect()
    }
}

/// Convenience wrapper mirroring the operation name.
pub fn index_map(p: usize) -> Result<ParameterIndexMap> {
    ParameterIndexMap::new(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Hybrid,
    TruncatedGaussian,
    Dirichlet,
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Hybrid => "hybrid",
            Family::TruncatedGaussian => "truncated-gaussian",
            Family::Dirichlet => "dirichlet",
        })
    }
}

/// Parameters `(A*_L, b_L, beta)` plus which entries of `pi` are estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub p: usize,
    pub family: Family,
    /// Symmetric `(p-1) x (p-1)` block `A*_L`, stored row-major.
    pub interaction: Vec<Vec<f64>>,
    /// `b_L`, length `p-1`.
    pub linear: Vec<f64>,
    /// `beta`, length `p`.
    pub shape: Vec<f64>,
    /// Estimated flags over `pi`, length `q`. Ignored for the Dirichlet family,
    /// where `beta` is the estimated quantity.
    pub estimated: Vec<bool>,
}

impl ModelSpec {
    /// Builds and validates a spec with every entry of `pi` estimated.
    pub fn new(
        family: Family,
        interaction: DMatrix<f64>,
        linear: DVector<f64>,
        shape: Vec<f64>,
    ) -> Result<Self> {
        let p = shape.len();
        let q = ParameterIndexMap::new(p)?.q();
        let spec = ModelSpec {
            p,
            family,
            interaction: (0..interaction.nrows())
                .map(|i| interaction.row(i).iter().copied().collect())
                .collect(),
            linear: linear.iter().copied().collect(),
            shape,
            estimated: vec![family != Family::Dirichlet; q],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dirichlet(shape: Vec<f64>) -> Result<Self> {
        let r = shape.len().saturating_sub(1);
        Self::new(
            Family::Dirichlet,
            DMatrix::zeros(r, r),
            DVector::zeros(r),
            shape,
        )
    }

    pub fn truncated_gaussian(interaction: DMatrix<f64>, linear: DVector<f64>) -> Result<Self> {
        let p = interaction.nrows() + 1;
        Self::new(Family::TruncatedGaussian, interaction, linear, vec![0.0; p])
    }

    pub fn hybrid(interaction: DMatrix<f64>, linear: DVector<f64>, shape: Vec<f64>) -> Result<Self> {
        Self::new(Family::Hybrid, interaction, linear, shape)
    }

    /// Marks every `b_j` as fixed at its current value.
    pub fn with_linear_fixed(mut self) -> Self {
        let map = self.index_map();
        for j in 0..self.p - 1 {
            self.estimated[map.linear_index(j)] = false;
        }
        self
    }

    pub fn with_fixed(mut self, label: Label, value: f64) -> Result<Self> {
        let map = self.index_map();
        let idx = map
            .index_of(label)
            .ok_or_else(|| Error::Config(format!("label {label} out of range for p = {}", self.p)))?;
        self.set_pi_entry(&map, idx, value);
        self.estimated[idx] = false;
        Ok(self)
    }

    fn set_pi_entry(&mut self, map: &ParameterIndexMap, idx: usize, value: f64) {
        match map.label(idx) {
            Label::Diag(j) => self.interaction[j][j] = value,
            Label::Cross(j, k) => {
                self.interaction[j][k] = value;
                self.interaction[k][j] = value;
            }
            Label::Linear(j) => self.linear[j] = value,
        }
    }

    pub fn index_map(&self) -> ParameterIndexMap {
        ParameterIndexMap::new(self.p).expect("validated dimension")
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p;
        let map = ParameterIndexMap::new(p)?;
        let r = p - 1;
        if self.shape.len() != p {
            return Err(Error::InvalidModel(format!("beta has length {}, expected {p}", self.shape.len())));
        }
        if self.interaction.len() != r || self.interaction.iter().any(|row| row.len() != r) {
            return Err(Error::InvalidModel(format!("A*_L must be {r} x {r}")));
        }
        if self.linear.len() != r {
            return Err(Error::InvalidModel(format!("b_L must have length {r}")));
        }
        if self.estimated.len() != map.q() {
            return Err(Error::InvalidModel(format!("mask must have length {}", map.q())));
        }
        let all = self
            .interaction
            .iter()
            .flatten()
            .chain(&self.linear)
            .chain(&self.shape);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite parameter".into()));
        }
        for j in 0..r {
            for k in (j + 1)..r {
                let (x, y) = (self.interaction[j][k], self.interaction[k][j]);
                if (x - y).abs() > 1e-12 * (1.0 + x.abs().max(y.abs())) {
                    return Err(Error::InvalidModel(format!("A*_L not symmetric at ({}, {})", j + 1, k + 1)));
                }
            }
        }
        if let Some(j) = self.shape.iter().position(|&b| b <= -1.0) {
            return Err(Error::InvalidModel(format!("beta_{} = {} must exceed -1", j + 1, self.shape[j])));
        }
        match self.family {
            Family::TruncatedGaussian if self.shape.iter().any(|&b| b != 0.0) => {
                Err(Error::InvalidModel("truncated-gaussian family requires beta = 0".into()))
            }
            Family::Dirichlet
                if self.interaction.iter().flatten().chain(&self.linear).any(|&v| v != 0.0) =>
            {
                Err(Error::InvalidModel("dirichlet family requires A* = 0 and b = 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn interaction_matrix(&self) -> DMatrix<f64> {
        let r = self.p - 1;
        DMatrix::from_fn(r, r, |i, j| self.interaction[i][j])
    }

    pub fn linear_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.linear)
    }

    /// Full `p x p` matrix `A*` with the reference row and column zeroed.
    pub fn full_interaction(&self) -> DMatrix<f64> {
        let r = self.p - 1;
        DMatrix::from_fn(self.p, self.p, |i, j| if i < r && j < r { self.interaction[i][j] } else { 0.0 })
    }

    /// Parameter vector `pi` in index-map order.
    pub fn pi(&self) -> DVector<f64> {
        let map = self.index_map();
        DVector::from_iterator(
            map.q(),
            map.labels().iter().map(|l| match *l {
                Label::Diag(j) => self.interaction[j][j],
                Label::Cross(j, k) => self.interaction[j][k],
                Label::Linear(j) => self.linear[j],
            }),
        )
    }

    /// Returns a copy with `pi` replaced.
    pub fn with_pi(&self, pi: &DVector<f64>) -> Self {
        let map = self.index_map();
        let mut out = self.clone();
        for (idx, &v) in pi.iter().enumerate() {
            out.set_pi_entry(&map, idx, v);
        }
        out
    }

    /// `(1 + 2 beta_1, ..., 1 + 2 beta_p)`.
    pub fn pi2(&self) -> DVector<f64> {
        DVector::from_iterator(self.p, self.shape.iter().map(|b| 1.0 + 2.0 * b))
    }

    /// Log of the unnormalised density ratio against the Dirichlet(beta + 1) base:
    /// `u' A* u + b' u`.
    pub fn exponent(&self, u: &[f64]) -> f64 {
        let r = self.p - 1;
        let mut acc = 0.0;
        for j in 0..r {
            let row = &self.interaction[j];
            let mut inner = 0.0;
            for k in 0..r {
                inner += row[k] * u[k];
            }
            acc += u[j] * (inner + self.linear[j]);
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_map_small_dimensions() {
        let m2 = index_map(2).unwrap();
        assert_eq!(m2.q(), 2);
        assert_eq!(m2.labels(), &[Label::Diag(0), Label::Linear(0)]);

        let m3 = index_map(3).unwrap();
        assert_eq!(m3.q(), 5);
        assert_eq!(m3.label_strings(), vec!["a11", "a22", "a12", "b1", "b2"]);

        assert_eq!(index_map(5).unwrap().q(), 14);
        assert!(matches!(index_map(1), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn index_map_is_bijective_up_to_p20() {
        for p in 2..=20 {
            let map = index_map(p).unwrap();
            assert_eq!(map.q(), (p - 1) + p * (p - 1) / 2);
            let mut seen = std::collections::HashSet::new();
            for (i, &l) in map.labels().iter().enumerate() {
                assert!(seen.insert(l));
                assert_eq!(map.index_of(l), Some(i));
                assert_eq!(l.to_string().parse::<Label>().unwrap(), l);
            }
            assert_eq!(seen.len(), map.q());
        }
    }

    #[test]
    fn cross_labels_follow_row_major_pairs() {
        let map = index_map(5).unwrap();
        let cross: Vec<String> = map.label_strings()[4..10].to_vec();
        assert_eq!(cross, vec!["a12", "a13", "a14", "a23", "a24", "a34"]);
        assert_eq!(map.cross_index(1, 3), 8);
        assert_eq!(map.linear_index(0), 10);
    }

    #[test]
    fn spec_validation() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -3.0]);
        let b = DVector::from_vec(vec![0.5, 0.0]);
        assert!(ModelSpec::hybrid(a.clone(), b.clone(), vec![-0.5, 0.0, 0.0]).is_ok());
        assert!(ModelSpec::hybrid(a.clone(), b.clone(), vec![-1.0, 0.0, 0.0]).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 0.9, -3.0]);
        assert!(ModelSpec::hybrid(asym, b.clone(), vec![0.0; 3]).is_err());
        let tg = ModelSpec::new(Family::TruncatedGaussian, a.clone(), b.clone(), vec![0.1, 0.0, 0.0]);
        assert!(tg.is_err());
        let dir = ModelSpec::new(Family::Dirichlet, a, b, vec![0.0; 3]);
        assert!(dir.is_err());
        assert!(ModelSpec::dirichlet(vec![0.0, 1.0, 2.0]).is_ok());
    }

    #[test]
    fn pi_round_trip_and_fixing() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.5, 1.5, -3.0]);
        let b = DVector::from_vec(vec![0.5, 0.25]);
        let spec = ModelSpec::truncated_gaussian(a, b).unwrap();
        let pi = spec.pi();
        assert_eq!(pi.as_slice(), &[-2.0, -3.0, 1.5, 0.5, 0.25]);
        assert_eq!(spec.with_pi(&pi), spec);
        let fixed = spec.with_linear_fixed();
        assert_eq!(fixed.estimated, vec![true, true, true, false, false]);
        let fixed = fixed.with_fixed("a21".parse().unwrap(), 0.0).unwrap();
        assert_eq!(fixed.interaction[0][1], 0.0);
        assert_eq!(fixed.interaction[1][0], 0.0);
        assert!(!fixed.estimated[2]);
    }

    #[test]
    fn exponent_matches_quadratic_form() {
        let a = DMatrix::from_row_slice(2, 2, &[-2.0, 1.5, 1.5, -3.0]);
        let b = DVector::from_vec(vec![0.5, 0.25]);
        let spec = ModelSpec::truncated_gaussian(a, b).unwrap();
        let u = [0.2, 0.3, 0.5];
        let full = spec.full_interaction();
        let uv = DVector::from_column_slice(&u);
        let expected = (uv.transpose() * &full * &uv)[0] + 0.5 * 0.2 + 0.25 * 0.3;
        assert!((spec.exponent(&u) - expected).abs() < 1e-15);
    }
}
