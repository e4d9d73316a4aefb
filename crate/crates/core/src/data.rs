//! Datasets on the simplex, count data with known totals, and the square-root map
//! onto the positive orthant of the unit sphere.

use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows further than this from summing to one are rejected.
pub const SUM_REJECT_TOL: f64 = 1e-6;
/// Rows within this of summing to one are renormalised silently.
pub const SUM_SILENT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Observed,
    DerivedFromCounts,
}

/// `n x p` proportions, every row on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousDataset {
    p: usize,
    values: Vec<f64>,
    names: Vec<String>,
    provenance: Provenance,
}

fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("c{j}")).collect()
}

impl ContinuousDataset {
    /// Validates and renormalises row-major `values`.
    pub fn new(p: usize, values: Vec<f64>) -> Result<Self> {
        Self::with_names(default_names(p), values)
    }

    pub fn with_names(names: Vec<String>, mut values: Vec<f64>) -> Result<Self> {
        let p = names.len();
        if p < 2 {
            return Err(Error::InvalidDimension(format!("p = {p}, need p >= 2")));
        }
        if values.is_empty() || !values.len().is_multiple_of(p) {
            return Err(Error::InvalidData(format!(
                "{} values do not form rows of width {p}",
                values.len()
            )));
        }
        for (i, row) in values.chunks_exact_mut(p).enumerate() {
            if let Some(v) = row.iter().find(|v| !v.is_finite() || **v < 0.0) {
                return Err(Error::InvalidData(format!("row {i}: invalid proportion {v}")));
            }
            let sum: f64 = row.iter().sum();
            let dev = (sum - 1.0).abs();
            if dev > SUM_REJECT_TOL {
                return Err(Error::InvalidData(format!("row {i} sums to {sum}")));
            }
            if dev > SUM_SILENT_TOL {
                warn!("row {i} sums to {sum}; renormalised");
            }
            if dev > 0.0 {
                row.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Ok(ContinuousDataset {
            p,
            values,
            names,
            provenance: Provenance::Observed,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidData("ragged rows".into()));
        }
        Self::new(p, rows.concat())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.values.len() / self.p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.p)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.rows().map(<[f64]>::to_vec).collect()
    }

    /// Drops the listed zero-based rows.
    pub fn exclude_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::InvalidData(format!("excluded row {r} out of range")));
        }
        let values: Vec<f64> = self
            .rows()
            .enumerate()
            .filter(|(i, _)| !rows.contains(i))
            .flat_map(|(_, r)| r.iter().copied())
            .collect();
        if values.is_empty() {
            return Err(Error::InvalidData("every row excluded".into()));
        }
        Ok(ContinuousDataset { values, ..self.clone() })
    }

    /// Per-row square roots, i.e. the points on the sphere orthant.
    pub fn sqrt_transform(&self) -> SphereData {
        SphereData {
            p: self.p,
            z: self.values.iter().map(|u| u.sqrt()).collect(),
        }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (names, table) = read_table(reader)?;
        if names.iter().any(|n| n.eq_ignore_ascii_case("total")) {
            return Err(Error::InvalidData("proportions file has a total column".into()));
        }
        Self::with_names(names, table.into_iter().flatten().collect())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.names)?;
        for row in self.rows() {
            w.write_record(row.iter().map(f64::to_string))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Free function form of [`ContinuousDataset::sqrt_transform`].
pub fn sqrt_transform(u: &ContinuousDataset) -> SphereData {
    u.sqrt_transform()
}

/// `n x p` points on the positive orthant of the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct SphereData {
    p: usize,
    z: Vec<f64>,
}

impl SphereData {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.z.len() / self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.z.chunks_exact(self.p)
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    /// Builds from raw sphere points without checks; used by tests and oracles.
    pub fn from_raw(p: usize, z: Vec<f64>) -> Self {
        assert!(p >= 2 && z.len().is_multiple_of(p));
        SphereData { p, z }
    }

    /// Permutes columns: output column `j` is input column `perm[j]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let z = self
            .rows()
            .flat_map(|r| perm.iter().map(move |&j| r[j]))
            .collect();
        SphereData { p: self.p, z }
    }
}

/// `n x p` nonnegative counts with per-row totals.
#[derive(Debug, Clone, PartialEq)]
pub struct CountDataset {
    p: usize,
    counts: Vec<u64>,
    totals: Vec<u64>,
    names: Vec<String>,
}

impl CountDataset {
    pub fn new(p: usize, counts: Vec<u64>, totals: Option<Vec<u64>>) -> Result<Self> {
        Self::with_names(default_names(p), counts, totals)
    }

    pub fn with_names(names: Vec<String>, counts: Vec<u64>, totals: Option<Vec<u64>>) -> Result<Self> {
        let p = names.len();
        if p < 2 {
            return Err(Error::InvalidDimension(format!("p = {p}, need p >= 2")));
        }
        if counts.is_empty() || !counts.len().is_multiple_of(p) {
            return Err(Error::InvalidData(format!("{} counts do not form rows of width {p}", counts.len())));
        }
        let sums: Vec<u64> = counts.chunks_exact(p).map(|r| r.iter().sum()).collect();
        let totals = match totals {
            Some(t) => {
                if t.len() != sums.len() {
                    return Err(Error::InvalidData("totals length mismatch".into()));
                }
                if let Some(i) = (0..t.len()).find(|&i| t[i] != sums[i]) {
                    return Err(Error::InvalidData(format!(
                        "row {i}: counts sum to {} but total is {}",
                        sums[i], t[i]
                    )));
                }
                t
            }
            None => sums,
        };
        if let Some(row) = totals.iter().position(|&m| m == 0) {
            return Err(Error::InvalidTotal { row, total: 0 });
        }
        Ok(CountDataset { p, counts, totals, names })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.totals.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[u64]> + '_ {
        self.counts.chunks_exact(self.p)
    }

    pub fn totals(&self) -> &[u64] {
        &self.totals
    }

    pub fn exclude_rows(&self, rows: &[usize]) -> Result<Self> {
        if let Some(&r) = rows.iter().find(|&&r| r >= self.n()) {
            return Err(Error::InvalidData(format!("excluded row {r} out of range")));
        }
        let keep: Vec<usize> = (0..self.n()).filter(|i| !rows.contains(i)).collect();
        if keep.is_empty() {
            return Err(Error::InvalidData("every row excluded".into()));
        }
        Ok(CountDataset {
            p: self.p,
            counts: keep.iter().flat_map(|&i| self.row(i).iter().copied()).collect(),
            totals: keep.iter().map(|&i| self.totals[i]).collect(),
            names: self.names.clone(),
        })
    }

    /// `u_ij = x_ij / m_i`.
    pub fn to_proportions(&self) -> Result<ContinuousDataset> {
        let mut values = Vec::with_capacity(self.counts.len());
        for (i, row) in self.rows().enumerate() {
            let m = self.totals[i];
            if m == 0 {
                return Err(Error::InvalidTotal { row: i, total: m });
            }
            values.extend(row.iter().map(|&x| x as f64 / m as f64));
        }
        let mut out = ContinuousDataset::with_names(self.names.clone(), values)?;
        out.provenance = Provenance::DerivedFromCounts;
        Ok(out)
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let (mut names, table) = read_table(reader)?;
        let total_col = names.iter().position(|n| n.eq_ignore_ascii_case("total"));
        if let Some(c) = total_col {
            names.remove(c);
        }
        let mut counts = Vec::new();
        let mut totals = Vec::new();
        for (i, row) in table.into_iter().enumerate() {
            for (c, v) in row.into_iter().enumerate() {
                if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
                    return Err(Error::InvalidData(format!("row {i}: {v} is not a nonnegative integer count")));
                }
                if Some(c) == total_col {
                    totals.push(v as u64);
                } else {
                    counts.push(v as u64);
                }
            }
        }
        Self::with_names(names, counts, total_col.map(|_| totals))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.names.clone();
        header.push("total".into());
        w.write_record(&header)?;
        for (row, m) in self.rows().zip(&self.totals) {
            w.write_record(row.iter().chain(std::iter::once(m)).map(u64::to_string))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Free function form of [`CountDataset::to_proportions`].
pub fn counts_to_proportions(x: &CountDataset) -> Result<ContinuousDataset> {
    x.to_proportions()
}

fn read_table<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut table = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != names.len() {
            return Err(Error::InvalidData(format!("row {i} has {} fields, expected {}", rec.len(), names.len())));
        }
        let row = rec
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidData(format!("row {i}: cannot parse {s:?}")))
            })
            .collect::<Result<Vec<f64>>>()?;
        table.push(row);
    }
    if table.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    Ok((names, table))
}
