use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use super::hybrid::HybridKernel;
use super::EstimatingEquations;
use crate::data::SphereData;
use crate::error::{Error, Result};
use crate::stats::blocked_sum;
use crate::weight::WeightSpec;

/// Assembled hybrid-model objective for one dataset and weight.
#[derive(Debug, Clone)]
pub struct EstimatorWorkspace {
    pub w: DMatrix<f64>,
    pub d1: DVector<f64>,
    pub d2: DVector<f64>,
    pub d6: DVector<f64>,
    pub v: DMatrix<f64>,
    pub pi2: DVector<f64>,
    kernel: HybridKernel,
    data: SphereData,
}

impl EstimatorWorkspace {
    /// Single blocked pass over the data accumulating `W`, `d1`, `d2` and `V`.
    pub fn assemble(data: &SphereData, weight: WeightSpec, shape: &[f64]) -> Result<Self> {
        let p = data.p();
        if shape.len() != p {
            return Err(Error::InvalidModel(format!("beta has length {}, expected {p}", shape.len())));
        }
        if let Some(b) = shape.iter().find(|&&b| b <= -1.0) {
            return Err(Error::InvalidModel(format!("beta entry {b} must exceed -1")));
        }
        let n = data.n();
        if n == 0 {
            return Err(Error::InvalidData("empty dataset".into()));
        }
        let kernel = HybridKernel::new(p, weight)?;
        let q = kernel.q();
        let (o_d1, o_d2, o_v) = (q * q, q * q + q, q * q + 2 * q);
        let width = o_v + q * p;
        let mut sums = blocked_sum(n, width, |range, buf| {
            let mut s = kernel.scratch();
            for i in range {
                let z = data.row(i);
                kernel.prepare(z, &mut s);
                let (wbuf, rest) = buf.split_at_mut(o_d1);
                let (d1, rest) = rest.split_at_mut(q);
                let (d2, v) = rest.split_at_mut(q);
                kernel.add_w(&s, wbuf);
                kernel.add_d1(&s, d1);
                kernel.add_d2(z, &s, d2);
                kernel.add_v(&s, v);
            }
        });
        sums.iter_mut().for_each(|x| *x /= n as f64);
        let upper = &sums[..o_d1];
        let w = DMatrix::from_fn(q, q, |i, j| if i <= j { upper[i * q + j] } else { upper[j * q + i] });
        let d1 = DVector::from_column_slice(&sums[o_d1..o_d2]);
        let d2 = DVector::from_column_slice(&sums[o_d2..o_v]);
        let v = DMatrix::from_row_slice(q, p, &sums[o_v..]);
        let pi2 = DVector::from_iterator(p, shape.iter().map(|b| 1.0 + 2.0 * b));
        let d6 = -(&v * &pi2);
        Ok(EstimatorWorkspace { w, d1, d2, d6, v, pi2, kernel, data: data.clone() })
    }

    pub fn weight(&self) -> WeightSpec {
        self.kernel.weight
    }

    pub fn p(&self) -> usize {
        self.kernel.p()
    }

    pub fn q(&self) -> usize {
        self.kernel.q()
    }
}

impl EstimatingEquations for EstimatorWorkspace {
    fn labels(&self) -> Vec<String> {
        self.kernel.map.label_strings()
    }

    fn n(&self) -> usize {
        self.data.n()
    }

    fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    fn d(&self) -> DVector<f64> {
        &self.d1 + &self.d2 + &self.d6
    }

    fn residuals(&self, range: Range<usize>, pi: &[f64], sink: &mut dyn FnMut(&[f64])) {
        let mut s = self.kernel.scratch();
        let mut out = vec![0.0; self.q()];
        for i in range {
            let z = self.data.row(i);
            self.kernel.prepare(z, &mut s);
            self.kernel.residual(z, &s, pi, self.pi2.as_slice(), &mut out);
            sink(&out);
        }
    }
}
