//! Samplers for every model family plus the multinomial observation layer.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ContinuousDataset, CountDataset};
use crate::error::{Error, Result};
use crate::model::{Family, ModelSpec};

/// Proposals drawn before the acceptance-rate floor is checked.
pub const PROBE_PROPOSALS: u64 = 1_000_000;
/// Acceptance rates below this are treated as failure.
pub const MIN_ACCEPTANCE_RATE: f64 = 1e-6;
/// Multiplier applied when the empirical supremum raises the envelope.
pub const ENVELOPE_SAFETY: f64 = 1.1;
pub const DEFAULT_WARMUP: u64 = 1000;

/// Seed plus per-replicate stream id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngConfig {
    pub seed: u64,
    pub stream: u64,
}

impl RngConfig {
    pub fn new(seed: u64, stream: u64) -> Self {
        RngConfig { seed, stream }
    }

    pub fn rng(&self) -> ChaCha20Rng {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionStats {
    pub attempted: u64,
    pub accepted: u64,
    /// Current envelope constant `C` (may be `inf` if its log exceeds the f64 range).
    pub envelope: f64,
    pub log_envelope: f64,
    pub updates: u64,
    /// `log C` after each update, starting with the initial value.
    pub log_envelope_trace: Vec<f64>,
}

impl RejectionStats {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempted == 0 {
            0.0
        } else {
            self.accepted as f64 / self.attempted as f64
        }
    }
}

/// Exact draws from the truncated Gaussian family by rejection from the
/// untruncated normal on the first `p - 1` coordinates.
pub fn sample_truncated_gaussian<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n: usize,
    rng: &mut R,
) -> Result<(ContinuousDataset, RejectionStats)> {
    spec.validate()?;
    if spec.shape.iter().any(|&b| b != 0.0) {
        return Err(Error::InvalidModel("truncated-gaussian sampling requires beta = 0".into()));
    }
    let r = spec.p - 1;
    let a = spec.interaction_matrix();
    let neg = -&a;
    let chol = neg
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("A*_L must be negative definite".into()))?;
    // Sigma = -A^-1 / 2, mu = -A^-1 b / 2 = Sigma b
    let sigma = chol.inverse() * 0.5;
    let mean = &sigma * spec.linear_vector();
    let lower = sigma
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("covariance is not positive definite".into()))?
        .l();
    let mut stats = RejectionStats {
        attempted: 0,
        accepted: 0,
        envelope: 1.0,
        log_envelope: 0.0,
        updates: 0,
        log_envelope_trace: vec![0.0],
    };
    let mut values = Vec::with_capacity(n * spec.p);
    let mut e = DVector::zeros(r);
    while (stats.accepted as usize) < n {
        for v in e.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let x = &mean + &lower * &e;
        stats.attempted += 1;
        let total: f64 = x.sum();
        if x.iter().all(|&v| v >= 0.0) && total <= 1.0 {
            values.extend(x.iter());
            values.push((1.0 - total).max(0.0));
            stats.accepted += 1;
        } else if stats.attempted >= PROBE_PROPOSALS && stats.acceptance_rate() < MIN_ACCEPTANCE_RATE {
            return Err(Error::InfeasibleTruncation { rate: stats.acceptance_rate(), attempted: stats.attempted });
        }
    }
    Ok((ContinuousDataset::new(spec.p, values)?, stats))
}

fn dirichlet_row<R: Rng + ?Sized>(gammas: &[Gamma<f64>], rng: &mut R, out: &mut [f64]) {
    loop {
        let mut total = 0.0;
        for (o, g) in out.iter_mut().zip(gammas) {
            *o = g.sample(rng);
            total += *o;
        }
        if total > 0.0 {
            out.iter_mut().for_each(|v| *v /= total);
            return;
        }
    }
}

fn gammas(shape: &[f64]) -> Result<Vec<Gamma<f64>>> {
    shape
        .iter()
        .map(|&b| {
            if b <= -1.0 || !b.is_finite() {
                return Err(Error::InvalidModel(format!("beta entry {b} must be finite and exceed -1")));
            }
            Gamma::new(b + 1.0, 1.0).map_err(|e| Error::InvalidModel(e.to_string()))
        })
        .collect()
}

/// Dirichlet(beta + 1) draws via normalised gamma variates.
pub fn sample_dirichlet<R: Rng + ?Sized>(shape: &[f64], n: usize, rng: &mut R) -> Result<ContinuousDataset> {
    let g = gammas(shape)?;
    let p = shape.len();
    let mut values = vec![0.0; n * p];
    for row in values.chunks_mut(p.max(1)) {
        dirichlet_row(&g, rng, row);
    }
    ContinuousDataset::new(p, values)
}

/// Rejection sampling with a Dirichlet(beta + 1) proposal and an envelope `C`
/// raised to `1.1 x` the largest observed ratio whenever it is exceeded.
///
/// The first `warmup` proposals only tune `C` and are discarded.
pub fn sample_hybrid<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n: usize,
    rng: &mut R,
    initial_c: f64,
    warmup: u64,
) -> Result<(ContinuousDataset, RejectionStats)> {
    spec.validate()?;
    if !(initial_c > 0.0) {
        return Err(Error::Config(format!("initial envelope must be positive, got {initial_c}")));
    }
    let p = spec.p;
    let g = gammas(&spec.shape)?;
    let mut log_c = initial_c.ln();
    let mut trace = vec![log_c];
    let mut updates = 0;
    let mut u = vec![0.0; p];
    let mut raise = |log_ratio: f64, log_c: &mut f64| {
        if log_ratio > *log_c {
            *log_c = log_ratio + ENVELOPE_SAFETY.ln();
            trace.push(*log_c);
            updates += 1;
        }
    };
    for _ in 0..warmup {
        dirichlet_row(&g, rng, &mut u);
        raise(spec.exponent(&u), &mut log_c);
    }
    let (mut attempted, mut accepted) = (0u64, 0u64);
    let mut values = Vec::with_capacity(n * p);
    while (accepted as usize) < n {
        dirichlet_row(&g, rng, &mut u);
        attempted += 1;
        let log_ratio = spec.exponent(&u);
        let unif: f64 = rng.random();
        if unif.ln() + log_c <= log_ratio {
            values.extend_from_slice(&u);
            accepted += 1;
        }
        raise(log_ratio, &mut log_c);
        if attempted >= PROBE_PROPOSALS && (accepted as f64) < MIN_ACCEPTANCE_RATE * attempted as f64 {
            return Err(Error::EnvelopeFailure {
                rate: accepted as f64 / attempted as f64,
                trace: trace.iter().map(|v| v.exp()).collect(),
            });
        }
    }
    let stats = RejectionStats {
        attempted,
        accepted,
        envelope: log_c.exp(),
        log_envelope: log_c,
        updates,
        log_envelope_trace: trace,
    };
    Ok((ContinuousDataset::new(p, values)?, stats))
}

/// Draws `n` rows from any family; truncated-Gaussian specs use the exact sampler.
pub fn sample_model<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n: usize,
    rng: &mut R,
) -> Result<(ContinuousDataset, Option<RejectionStats>)> {
    match spec.family {
        Family::Dirichlet => Ok((sample_dirichlet(&spec.shape, n, rng)?, None)),
        Family::TruncatedGaussian => {
            let (d, s) = sample_truncated_gaussian(spec, n, rng)?;
            Ok((d, Some(s)))
        }
        Family::Hybrid => {
            let (d, s) = sample_hybrid(spec, n, rng, 1.0, DEFAULT_WARMUP)?;
            Ok((d, Some(s)))
        }
    }
}

/// Multinomial counts given latent compositions, one row per latent row.
///
/// `totals` has length 1 (shared) or `n`. Each row is drawn by sequential
/// conditional binomials.
pub fn sample_multinomial_compound<R: Rng + ?Sized>(
    latent: &ContinuousDataset,
    totals: &[u64],
    rng: &mut R,
) -> Result<CountDataset> {
    let (n, p) = (latent.n(), latent.p());
    if totals.len() != 1 && totals.len() != n {
        return Err(Error::InvalidDimension(format!("totals must have length 1 or {n}, got {}", totals.len())));
    }
    if let Some(i) = totals.iter().position(|&m| m == 0) {
        return Err(Error::InvalidTotal { row: i + 1, total: 0 });
    }
    let mut counts = Vec::with_capacity(n * p);
    let mut row_totals = Vec::with_capacity(n);
    for i in 0..n {
        let m = if totals.len() == 1 { totals[0] } else { totals[i] };
        let u = latent.row(i);
        let (mut left, mut mass) = (m, 1.0f64);
        for (j, &uj) in u.iter().enumerate() {
            if j + 1 == p {
                counts.push(left);
                break;
            }
            let x = if left == 0 || uj <= 0.0 {
                0
            } else if uj >= mass {
                left
            } else {
                Binomial::new(left, (uj / mass).clamp(0.0, 1.0))
                    .map_err(|e| Error::InvalidData(e.to_string()))?
                    .sample(rng)
            };
            counts.push(x);
            left -= x;
            mass -= uj;
        }
        row_totals.push(m);
    }
    CountDataset::with_names(latent.names().to_vec(), counts, Some(row_totals))
}

/// Mean and covariance of the truncated-Gaussian proposal, `(mu, Sigma)`.
pub fn gaussian_parameters(spec: &ModelSpec) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let neg = -spec.interaction_matrix();
    let chol = neg.cholesky().ok_or_else(|| Error::InvalidModel("A*_L must be negative definite".into()))?;
    let sigma = chol.inverse() * 0.5;
    Ok((&sigma * spec.linear_vector(), sigma))
}
