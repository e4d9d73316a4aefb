//! Moment-expansion route to `W` and `d` for the (uncapped) product weight.
//!
//! With `h^2 = prod z_l^2` every per-observation term is an even polynomial in `z`,
//! i.e. a polynomial in `u = z^2`. Each entry of `W` and `d` is expanded once into
//! monomials `u^alpha`; a [`MomentProvider`] then supplies `E[u^alpha]`, either as
//! sample averages over observed proportions or as unbiased factorial-moment
//! estimates from multinomial counts.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::EstimatingEquations;
use crate::data::{CountDataset, SphereData};
use crate::error::{Error, Result};
use crate::model::{Label, ParameterIndexMap};
use crate::stats::blocked_sum;

/// Exponent vector over all `p` coordinates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Monomial(pub Vec<u32>);

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }
}

impl fmt::Display for Monomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, &e)| e > 0)
            .map(|(j, &e)| if e == 1 { format!("u{}", j + 1) } else { format!("u{}^{e}", j + 1) })
            .collect();
        if parts.is_empty() {
            f.write_str("1")
        } else {
            f.write_str(&parts.join("*"))
        }
    }
}

/// Source of `E[u^alpha]`.
pub trait MomentProvider: Sync {
    fn p(&self) -> usize;

    /// Estimates for every requested monomial, in order.
    fn moments(&self, alphas: &[Monomial]) -> Result<Vec<f64>>;

    fn moment(&self, alpha: &Monomial) -> Result<f64> {
        Ok(self.moments(std::slice::from_ref(alpha))?[0])
    }
}

/// Sample averages of `u^alpha` over observed compositions.
#[derive(Debug, Clone)]
pub struct EmpiricalMoments {
    data: SphereData,
}

impl EmpiricalMoments {
    pub fn new(data: &SphereData) -> Self {
        EmpiricalMoments { data: data.clone() }
    }
}

impl MomentProvider for EmpiricalMoments {
    fn p(&self) -> usize {
        self.data.p()
    }

    fn moments(&self, alphas: &[Monomial]) -> Result<Vec<f64>> {
        let n = self.data.n();
        if n == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        let sums = blocked_sum(n, alphas.len(), |range, buf| {
            for i in range {
                let z = self.data.row(i);
                for (k, alpha) in alphas.iter().enumerate() {
                    buf[k] += alpha.0.iter().zip(z).map(|(&e, v)| (v * v).powi(e as i32)).product::<f64>();
                }
            }
        });
        Ok(sums.into_iter().map(|s| s / n as f64).collect())
    }
}

fn falling(x: u64, k: u32) -> f64 {
    (0..k as u64).map(|i| x.saturating_sub(i) as f64).product()
}

/// Per-row unbiased estimate `prod x_j^(alpha_j) / m^(|alpha|)`, or `None` when `m < |alpha|`.
fn factorial_row(x: &[u64], m: u64, alpha: &Monomial) -> Option<f64> {
    let deg = alpha.degree();
    if m < deg as u64 {
        return None;
    }
    let num: f64 = x.iter().zip(&alpha.0).map(|(&xj, &a)| falling(xj, a)).product();
    Some(num / falling(m, deg))
}

/// Unbiased factorial-moment estimates from multinomial counts.
///
/// Rows whose total is below a monomial's degree are left out of that monomial's
/// average; the exclusion counts are logged.
#[derive(Debug, Clone)]
pub struct FactorialMoments {
    counts: CountDataset,
}

/// Builds the factorial-moment provider for a count dataset.
pub fn factorial_moment_provider(counts: &CountDataset) -> FactorialMoments {
    FactorialMoments { counts: counts.clone() }
}

impl FactorialMoments {
    pub fn counts(&self) -> &CountDataset {
        &self.counts
    }

    /// Rows with total below `degree`.
    pub fn excluded(&self, degree: u32) -> usize {
        self.counts.totals().iter().filter(|&&m| m < degree as u64).count()
    }

    /// Per-row estimates for row `i`; `None` entries are ineligible.
    pub fn row_moments(&self, i: usize, alphas: &[Monomial]) -> Vec<Option<f64>> {
        let (x, m) = (self.counts.row(i), self.counts.totals()[i]);
        alphas.iter().map(|a| factorial_row(x, m, a)).collect()
    }
}

impl MomentProvider for FactorialMoments {
    fn p(&self) -> usize {
        self.counts.p()
    }

    fn moments(&self, alphas: &[Monomial]) -> Result<Vec<f64>> {
        let n = self.counts.n();
        let k = alphas.len();
        let mut degrees: Vec<u32> = alphas.iter().map(Monomial::degree).collect();
        for (alpha, &deg) in alphas.iter().zip(&degrees) {
            if self.excluded(deg) == n {
                return Err(Error::InsufficientTotals { degree: deg, monomial: alpha.to_string() });
            }
        }
        degrees.sort_unstable();
        degrees.dedup();
        for deg in degrees {
            let excluded = self.excluded(deg);
            if excluded > 0 {
                log::info!("factorial moments of degree {deg}: {excluded} of {n} rows excluded (total < {deg})");
            }
        }
        let sums = blocked_sum(n, 2 * k, |range, buf| {
            for i in range {
                for (j, v) in self.row_moments(i, alphas).into_iter().enumerate() {
                    if let Some(v) = v {
                        buf[j] += v;
                        buf[k + j] += 1.0;
                    }
                }
            }
        });
        Ok((0..k).map(|j| sums[j] / sums[k + j]).collect())
    }
}

/// Polynomial in `z` keyed by exponent vectors.
#[derive(Debug, Clone, Default)]
struct ZPoly(BTreeMap<Vec<u32>, f64>);

impl ZPoly {
    fn add(&mut self, exps: Vec<u32>, c: f64) {
        if c != 0.0 {
            *self.0.entry(exps).or_insert(0.0) += c;
        }
    }

    fn add_scaled(&mut self, other: &ZPoly, c: f64) {
        for (e, v) in &other.0 {
            self.add(e.clone(), c * v);
        }
    }

    /// Multiplies every term by the monomial `z^shift`.
    fn shifted(&self, shift: &[u32]) -> ZPoly {
        let mut out = ZPoly::default();
        for (e, v) in &self.0 {
            out.add(e.iter().zip(shift).map(|(a, b)| a + b).collect(), *v);
        }
        out
    }
}

fn unit(p: usize, pairs: &[(usize, u32)]) -> Vec<u32> {
    let mut e = vec![0; p];
    for &(j, k) in pairs {
        e[j] += k;
    }
    e
}

/// Gradient terms `(coordinate, coefficient, z-exponents)` of one statistic.
fn grad_terms(label: Label, p: usize) -> Vec<(usize, f64, Vec<u32>)> {
    match label {
        Label::Diag(j) => vec![(j, 4.0, unit(p, &[(j, 3)]))],
        Label::Cross(j, k) => vec![(j, 4.0, unit(p, &[(j, 1), (k, 2)])), (k, 4.0, unit(p, &[(j, 2), (k, 1)]))],
        Label::Linear(j) => vec![(j, 2.0, unit(p, &[(j, 1)]))],
    }
}

fn nu_poly(label: Label, p: usize) -> ZPoly {
    let mut out = ZPoly::default();
    match label {
        Label::Diag(j) => out.add(unit(p, &[(j, 4)]), 4.0),
        Label::Cross(j, k) => out.add(unit(p, &[(j, 2), (k, 2)]), 8.0),
        Label::Linear(j) => out.add(unit(p, &[(j, 2)]), 2.0),
    }
    out
}

/// `-Laplacian(t) - 2 (d3, d4, d5)`: the `d1 + d2` integrand divided by `h^2`.
fn d12_poly(label: Label, p: usize) -> ZPoly {
    let pf = p as f64;
    let (l2, l4) = (2.0 * pf, 4.0 * (pf + 2.0));
    let mut out = ZPoly::default();
    match label {
        Label::Diag(j) => {
            out.add(unit(p, &[(j, 4)]), l4 + 8.0 * pf);
            out.add(unit(p, &[(j, 2)]), -12.0 - 8.0);
        }
        Label::Cross(j, k) => {
            out.add(unit(p, &[(j, 2), (k, 2)]), 2.0 * l4 + 16.0 * pf);
            out.add(unit(p, &[(j, 2)]), -4.0 - 8.0);
            out.add(unit(p, &[(k, 2)]), -4.0 - 8.0);
        }
        Label::Linear(j) => {
            out.add(unit(p, &[(j, 2)]), l2 + 4.0 * pf);
            out.add(vec![0; p], -2.0 - 4.0);
        }
    }
    out
}

/// `mu_a' mu^(s)_j`, polynomial by construction.
fn v_poly(label: Label, j: usize, p: usize) -> ZPoly {
    let mut out = ZPoly::default();
    match label {
        Label::Diag(k) if k == j => out.add(unit(p, &[(k, 2)]), 4.0),
        Label::Cross(k, l) if k == j => out.add(unit(p, &[(l, 2)]), 4.0),
        Label::Cross(k, l) if l == j => out.add(unit(p, &[(k, 2)]), 4.0),
        Label::Linear(k) if k == j => out.add(vec![0; p], 2.0),
        _ => {}
    }
    out
}

/// Sparse linear combination of monomial ids.
type Expansion = Vec<(usize, f64)>;

/// Symbolic expansion of every `W` and `d` entry for the product weight.
#[derive(Debug, Clone)]
pub struct MomentExpansion {
    p: usize,
    q: usize,
    labels: Vec<String>,
    monomials: Vec<Monomial>,
    /// Upper triangle, row-major over `a <= b`.
    w: Vec<Expansion>,
    d: Vec<Expansion>,
}

impl MomentExpansion {
    pub fn new(p: usize, shape: &[f64]) -> Result<Self> {
        let map = ParameterIndexMap::new(p)?;
        if shape.len() != p {
            return Err(Error::InvalidModel(format!("beta has length {}, expected {p}", shape.len())));
        }
        let q = map.q();
        let h2 = vec![2; p];
        let labels = map.labels();
        let grads: Vec<_> = labels.iter().map(|&l| grad_terms(l, p)).collect();
        let nus: Vec<_> = labels.iter().map(|&l| nu_poly(l, p)).collect();
        let mut index: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
        let mut intern = |poly: ZPoly| -> Expansion {
            let mut out = Vec::new();
            for (e, c) in poly.shifted(&h2).0 {
                debug_assert!(e.iter().all(|x| x % 2 == 0));
                let u: Vec<u32> = e.iter().map(|x| x / 2).collect();
                let next = index.len();
                let id = *index.entry(u).or_insert(next);
                out.push((id, c));
            }
            out
        };

        let mut w = Vec::with_capacity(q * (q + 1) / 2);
        for a in 0..q {
            for b in a..q {
                let mut poly = ZPoly::default();
                for (ja, ca, ea) in &grads[a] {
                    for (jb, cb, eb) in &grads[b] {
                        if ja == jb {
                            poly.add(ea.iter().zip(eb).map(|(x, y)| x + y).collect(), ca * cb);
                        }
                    }
                }
                for (ea, ca) in &nus[a].0 {
                    for (eb, cb) in &nus[b].0 {
                        poly.add(ea.iter().zip(eb).map(|(x, y)| x + y).collect(), -ca * cb);
                    }
                }
                w.push(intern(poly));
            }
        }
        let mut d = Vec::with_capacity(q);
        for (a, &label) in labels.iter().enumerate() {
            let mut poly = d12_poly(label, p);
            // d6 integrand: -sum_j pi2_j (mu_a' mu^(s)_j - nu_a)
            for (j, b) in shape.iter().enumerate() {
                let pi2 = 1.0 + 2.0 * b;
                poly.add_scaled(&v_poly(label, j, p), -pi2);
                poly.add_scaled(&nus[a], pi2);
            }
            d.push(intern(poly));
        }
        let mut monomials = vec![Monomial(Vec::new()); index.len()];
        for (u, id) in index {
            monomials[id] = Monomial(u);
        }
        Ok(MomentExpansion { p, q, labels: map.label_strings(), monomials, w, d })
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    pub fn max_degree(&self) -> u32 {
        self.monomials.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    fn evaluate(&self, moments: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let eval = |e: &Expansion| e.iter().map(|&(id, c)| c * moments[id]).sum::<f64>();
        let q = self.q;
        let mut w = DMatrix::zeros(q, q);
        let mut k = 0;
        for a in 0..q {
            for b in a..q {
                let v = eval(&self.w[k]);
                w[(a, b)] = v;
                w[(b, a)] = v;
                k += 1;
            }
        }
        let d = DVector::from_iterator(q, self.d.iter().map(eval));
        (w, d)
    }

    /// `W` and `d` from any moment provider.
    pub fn assemble(&self, provider: &dyn MomentProvider) -> Result<(DMatrix<f64>, DVector<f64>)> {
        if provider.p() != self.p {
            return Err(Error::InvalidDimension(format!("provider has p = {}, expected {}", provider.p(), self.p)));
        }
        Ok(self.evaluate(&provider.moments(&self.monomials)?))
    }
}

/// Product-weight estimating equations with moments estimated from counts.
#[derive(Debug, Clone)]
pub struct FactorialWorkspace {
    pub w: DMatrix<f64>,
    pub d: DVector<f64>,
    expansion: MomentExpansion,
    provider: FactorialMoments,
    all_rows_eligible: bool,
}

impl FactorialWorkspace {
    pub fn new(counts: &CountDataset, shape: &[f64]) -> Result<Self> {
        if counts.n() == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        let expansion = MomentExpansion::new(counts.p(), shape)?;
        let provider = factorial_moment_provider(counts);
        let (w, d) = expansion.assemble(&provider)?;
        let all_rows_eligible = provider.excluded(expansion.max_degree()) == 0;
        if !all_rows_eligible {
            log::warn!("some totals are below degree {}; standard errors unavailable", expansion.max_degree());
        }
        Ok(FactorialWorkspace { w, d, expansion, provider, all_rows_eligible })
    }

    pub fn monomials(&self) -> &[Monomial] {
        self.expansion.monomials()
    }
}

impl EstimatingEquations for FactorialWorkspace {
    fn labels(&self) -> Vec<String> {
        self.expansion.labels.clone()
    }

    fn n(&self) -> usize {
        self.provider.counts.n()
    }

    fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    fn d(&self) -> DVector<f64> {
        self.d.clone()
    }

    fn has_residuals(&self) -> bool {
        self.all_rows_eligible
    }

    fn residuals(&self, range: Range<usize>, pi: &[f64], sink: &mut dyn FnMut(&[f64])) {
        let pi = DVector::from_column_slice(pi);
        for i in range {
            let m: Vec<f64> = self
                .provider
                .row_moments(i, &self.expansion.monomials)
                .into_iter()
                .map(|v| v.unwrap_or(0.0))
                .collect();
            let (w, d) = self.expansion.evaluate(&m);
            let e = w * &pi - d;
            sink(e.as_slice());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::workspace::EstimatorWorkspace;
    use crate::weight::WeightSpec;

    #[test]
    fn factorial_examples() {
        let x = [3u64, 2];
        assert_eq!(factorial_row(&x, 5, &Monomial(vec![1, 1])), Some(0.3));
        assert_eq!(factorial_row(&x, 5, &Monomial(vec![1, 0])), Some(0.6));
        assert_eq!(factorial_row(&x, 5, &Monomial(vec![3, 3])), None);
    }

    #[test]
    fn insufficient_totals_error_names_degree() {
        let counts = CountDataset::new(2, vec![1, 1, 2, 0], None).unwrap();
        let provider = factorial_moment_provider(&counts);
        assert_eq!(provider.moment(&Monomial(vec![1, 1])).unwrap(), 0.25);
        match provider.moment(&Monomial(vec![2, 1])) {
            Err(Error::InsufficientTotals { degree: 3, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn expansion_with_empirical_moments_matches_direct_assembly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for p in [2usize, 3, 4] {
            let mut z = Vec::new();
            for _ in 0..200 {
                let raw: Vec<f64> = (0..p).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = raw.iter().sum();
                z.extend(raw.iter().map(|v| (v / s).sqrt()));
            }
            let data = SphereData::from_raw(p, z);
            let shape: Vec<f64> = (0..p).map(|j| 0.3 * j as f64 - 0.4).collect();
            let direct = EstimatorWorkspace::assemble(&data, WeightSpec::product(), &shape).unwrap();
            let exp = MomentExpansion::new(p, &shape).unwrap();
            assert_eq!(exp.max_degree(), p as u32 + 4);
            let (w, d) = exp.assemble(&EmpiricalMoments::new(&data)).unwrap();
            let scale = direct.w.amax().max(1e-300);
            assert!((&w - &direct.w).amax() / scale < 1e-10, "p = {p}");
            let dd = direct.d();
            assert!((&d - &dd).amax() / dd.amax().max(1e-300) < 1e-10, "p = {p}");
        }
    }
}
