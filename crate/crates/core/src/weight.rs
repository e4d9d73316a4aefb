//! Boundary-vanishing weight functions `h(z)^2` on the sphere orthant.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::SphereData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightKind {
    /// `prod_j z_j^2`
    Product,
    /// `min(prod_j z_j^2, a_c^2)`
    CappedProduct,
    /// `min_j z_j^2`
    Min,
    /// `min(z_1^2, .., z_p^2, a_c^2)`
    CappedMin,
}

impl WeightKind {
    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Product => "product",
            WeightKind::CappedProduct => "capped-product",
            WeightKind::Min => "min",
            WeightKind::CappedMin => "capped-min",
        }
    }

    pub fn is_capped(self) -> bool {
        matches!(self, WeightKind::CappedProduct | WeightKind::CappedMin)
    }

    pub fn is_product_family(self) -> bool {
        matches!(self, WeightKind::Product | WeightKind::CappedProduct)
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeightKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "product" => Ok(WeightKind::Product),
            "capped-product" => Ok(WeightKind::CappedProduct),
            "min" => Ok(WeightKind::Min),
            "capped-min" => Ok(WeightKind::CappedMin),
            _ => Err(Error::Config(format!("unknown weight kind {s:?}"))),
        }
    }
}

/// A weight kind and its cap. Uncapped kinds carry `a_c = 1`, which never binds:
/// every product of squared coordinates is at most `p^-p` and every minimum at most `1/p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightRepr", into = "WeightRepr")]
pub struct WeightSpec {
    kind: WeightKind,
    a_c: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightRepr {
    kind: WeightKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    a_c: Option<f64>,
}

impl TryFrom<WeightRepr> for WeightSpec {
    type Error = Error;

    fn try_from(r: WeightRepr) -> Result<Self> {
        match (r.kind.is_capped(), r.a_c) {
            (true, Some(a)) => WeightSpec::new(r.kind, a),
            (true, None) => Err(Error::Config(format!("{} weight needs a_c", r.kind))),
            (false, None) => WeightSpec::new(r.kind, 1.0),
            (false, Some(a)) if a == 1.0 => WeightSpec::new(r.kind, 1.0),
            (false, Some(_)) => Err(Error::Config(format!("{} weight takes no a_c", r.kind))),
        }
    }
}

impl From<WeightSpec> for WeightRepr {
    fn from(w: WeightSpec) -> Self {
        WeightRepr {
            kind: w.kind,
            a_c: w.kind.is_capped().then_some(w.a_c),
        }
    }
}

impl WeightSpec {
    pub fn new(kind: WeightKind, a_c: f64) -> Result<Self> {
        if !(a_c > 0.0 && a_c <= 1.0) {
            return Err(Error::Config(format!("a_c = {a_c} must lie in (0, 1]")));
        }
        let a_c = if kind.is_capped() { a_c } else { 1.0 };
        Ok(WeightSpec { kind, a_c })
    }

    pub fn product() -> Self {
        WeightSpec { kind: WeightKind::Product, a_c: 1.0 }
    }

    pub fn min() -> Self {
        WeightSpec { kind: WeightKind::Min, a_c: 1.0 }
    }

    pub fn capped_product(a_c: f64) -> Result<Self> {
        Self::new(WeightKind::CappedProduct, a_c)
    }

    pub fn capped_min(a_c: f64) -> Result<Self> {
        Self::new(WeightKind::CappedMin, a_c)
    }

    pub fn kind(&self) -> WeightKind {
        self.kind
    }

    pub fn a_c(&self) -> f64 {
        self.a_c
    }

    pub fn cap_sq(&self) -> f64 {
        self.a_c * self.a_c
    }

    /// `h(z)^2`.
    pub fn eval_h_sq(&self, z: &[f64]) -> f64 {
        let raw = self.uncapped(z);
        raw.min(self.cap_sq())
    }

    /// The weight ignoring the cap.
    pub fn uncapped(&self, z: &[f64]) -> f64 {
        if self.kind.is_product_family() {
            z.iter().map(|v| v * v).product()
        } else {
            z.iter().map(|v| v * v).fold(f64::INFINITY, f64::min)
        }
    }

    /// 1 while the weight follows its smooth branch, 0 once the cap binds.
    pub fn cap_indicator(&self, z: &[f64]) -> Result<u8> {
        if !self.kind.is_capped() {
            return Err(Error::NotApplicable(self.kind.name()));
        }
        Ok(self.below_cap(z) as u8)
    }

    pub(crate) fn below_cap(&self, z: &[f64]) -> bool {
        self.uncapped(z) < self.cap_sq()
    }
}

/// Free function form of [`WeightSpec::eval_h_sq`].
pub fn eval_h_sq(z: &[f64], w: &WeightSpec) -> f64 {
    w.eval_h_sq(z)
}

/// Lowest index attaining `min_j z_j^2`.
pub fn argmin_sq(z: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in z.iter().enumerate().skip(1) {
        if v * v < z[best] * z[best] {
            best = j;
        }
    }
    best
}

/// Euclidean distance from `u` to the boundary of the simplex:
/// `sqrt(p / (p - 1)) * min_j u_j`.
pub fn boundary_distance(u: &[f64]) -> f64 {
    let p = u.len() as f64;
    (p / (p - 1.0)).sqrt() * u.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Data-driven cap: `a_c^2` is the given quantile of the uncapped weights.
///
/// This is a reproducible default, not part of the estimator's theory.
pub fn cap_from_quantile(data: &SphereData, kind: WeightKind, quantile: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&quantile) {
        return Err(Error::Config(format!("quantile {quantile} outside [0, 1]")));
    }
    let probe = WeightSpec::new(kind, 1.0)?;
    let mut values: Vec<f64> = data.rows().map(|z| probe.uncapped(z)).collect();
    values.sort_by(f64::total_cmp);
    let level = crate::stats::quantile_sorted(&values, quantile);
    if level <= 0.0 {
        return Err(Error::Config(format!(
            "the {quantile} quantile of the uncapped weights is zero; choose a_c explicitly"
        )));
    }
    Ok(level.sqrt().min(1.0))
}
