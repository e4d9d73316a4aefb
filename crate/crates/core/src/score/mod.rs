//! Closed-form score matching: assembly of the quadratic objective, its solve,
//! sandwich standard errors, and the Dirichlet and count-data variants.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

pub mod dirichlet;
pub mod fit;
pub mod gradients;
pub mod hybrid;
pub mod moments;
pub mod solve;
mod workspace;

pub use dirichlet::{dirichlet_fit, DirichletWorkspace};
pub use fit::{fit_continuous, fit_counts, CountEstimator, FitResult, ParameterEstimate};
pub use gradients::{gradients, GradientTable, SparseGrad};
pub use hybrid::{build_d1, build_d2_capped_min, build_d2_capped_product, build_d6, build_v, build_w};
pub use moments::{
    factorial_moment_provider, EmpiricalMoments, FactorialMoments, FactorialWorkspace, Monomial,
    MomentProvider,
};
pub use solve::{objective_value, solve, standard_errors, Solution};
pub use workspace::EstimatorWorkspace;

/// Linear estimating equations `W pi = d` built from observation averages.
///
/// `W = mean R(z_i)` and `d = mean r(z_i)`; when per-observation terms are
/// available the residuals `R(z_i) pi - r(z_i)` feed the sandwich covariance.
pub trait EstimatingEquations: Sync {
    fn labels(&self) -> Vec<String>;

    fn n(&self) -> usize;

    fn w(&self) -> &DMatrix<f64>;

    fn d(&self) -> DVector<f64>;

    fn has_residuals(&self) -> bool {
        true
    }

    /// Calls `sink` with `R(z_i) pi - r(z_i)` for every observation in `range`, in order.
    fn residuals(&self, range: Range<usize>, pi: &[f64], sink: &mut dyn FnMut(&[f64]));

    /// `0.5 pi' W pi - pi' d`.
    fn objective(&self, pi: &DVector<f64>) -> f64 {
        0.5 * pi.dot(&(self.w() * pi)) - pi.dot(&self.d())
    }
}
