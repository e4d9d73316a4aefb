//! Small numeric helpers: compensated and blocked summation, sample moments, quantiles.

use rayon::prelude::*;

/// Observations per reduction block. Sums are bit-reproducible for a fixed block
/// size regardless of how many threads process the blocks.
pub const BLOCK_SIZE: usize = 1024;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sums per-observation vectors of length `width` over `0..n`.
///
/// `fill` adds the contributions of every observation in a range into a zeroed
/// buffer. Blocks are processed in parallel and combined in block order with
/// compensated summation.
pub fn blocked_sum<F>(n: usize, width: usize, fill: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync,
{
    let blocks: Vec<Vec<f64>> = (0..n.div_ceil(BLOCK_SIZE))
        .into_par_iter()
        .map(|b| {
            let mut buf = vec![0.0; width];
            fill(b * BLOCK_SIZE..((b + 1) * BLOCK_SIZE).min(n), &mut buf);
            buf
        })
        .collect();
    let mut acc = vec![CompensatedSum::default(); width];
    for block in &blocks {
        for (a, &v) in acc.iter_mut().zip(block) {
            a.add(v);
        }
    }
    acc.iter().map(CompensatedSum::value).collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    let mut s = CompensatedSum::default();
    xs.iter().for_each(|&x| s.add(x));
    s.value() / xs.len() as f64
}

/// Standard deviation with divisor `n` (not `n - 1`).
pub fn population_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let mut s = CompensatedSum::default();
    xs.iter().for_each(|&x| s.add((x - m) * (x - m)));
    (s.value() / xs.len() as f64).sqrt()
}

/// Standard deviation with divisor `n - 1`.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut s = CompensatedSum::default();
    xs.iter().for_each(|&x| s.add((x - m) * (x - m)));
    (s.value() / (xs.len() - 1) as f64).sqrt()
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}
