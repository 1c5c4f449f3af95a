//! Dataset containers, standardization, stratified splitting and CSV I/O.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub column_names: Option<Vec<String>>,
    pub standardized: bool,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidInput("feature matrix must be at least 1x1".into()));
        }
        check_finite(&values)?;
        Ok(Self {
            values,
            column_names: None,
            standardized: false,
        })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} column names for {} columns",
                names.len(),
                self.ncols()
            )));
        }
        self.column_names = Some(names);
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.values.column(j)
    }

    pub fn name(&self, j: usize) -> String {
        match &self.column_names {
            Some(n) => n[j].clone(),
            None => format!("x{j}"),
        }
    }

    /// Rows selected by index, keeping names and the standardized flag.
    pub fn select_rows(&self, idx: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), idx),
            column_names: self.column_names.clone(),
            standardized: self.standardized,
        }
    }
}

fn check_finite(values: &Array2<f64>) -> Result<()> {
    for ((row, column), v) in values.indexed_iter() {
        if !v.is_finite() {
            return Err(Error::NonFinite { row, column });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseVector {
    pub values: Array1<f64>,
    pub kind: ResponseKind,
}

impl ResponseVector {
    pub fn continuous(values: Array1<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("response contains non-finite values".into()));
        }
        Ok(Self {
            values,
            kind: ResponseKind::Continuous,
        })
    }

    pub fn binary(values: Array1<f64>) -> Result<Self> {
        if values.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidInput("binary response must contain only 0 and 1".into()));
        }
        Ok(Self {
            values,
            kind: ResponseKind::Binary,
        })
    }

    /// Binary when every value is 0 or 1, continuous otherwise.
    pub fn infer(values: Array1<f64>) -> Result<Self> {
        if values.iter().all(|&v| v == 0.0 || v == 1.0) {
            Self::binary(values)
        } else {
            Self::continuous(values)
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> ResponseVector {
        ResponseVector {
            values: self.values.select(Axis(0), idx),
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationRecord {
    pub means: Array1<f64>,
    pub sds: Array1<f64>,
    pub constant: Vec<bool>,
}

impl StandardizationRecord {
    pub fn apply(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            if self.constant[j] {
                col.fill(0.0);
            } else {
                col.mapv_inplace(|v| (v - self.means[j]) / self.sds[j]);
            }
        }
        out
    }

    pub fn invert(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = values.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.sds[j] + self.means[j]);
        }
        out
    }
}

/// Sample mean and sample standard deviation (n-1 denominator).
pub fn mean_sd(x: ArrayView1<f64>) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.sum() / n;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Center each column by its mean and scale by its sample sd.
///
/// Constant columns become zero, keep sd 1 and are flagged in the record.
pub fn standardize_columns(m: &FeatureMatrix) -> Result<(FeatureMatrix, StandardizationRecord)> {
    if m.nrows() < 2 {
        return Err(Error::InvalidInput("standardization needs at least 2 rows".into()));
    }
    check_finite(&m.values)?;
    let p = m.ncols();
    let mut means = Array1::zeros(p);
    let mut sds = Array1::ones(p);
    let mut constant = vec![false; p];
    for j in 0..p {
        let col = m.column(j);
        let (mean, sd) = mean_sd(col);
        means[j] = mean;
        if sd == 0.0 || col.iter().all(|&v| v == col[0]) {
            constant[j] = true;
            log::warn!("column {} ({}) is constant; set to zero", j, m.name(j));
        } else {
            sds[j] = sd;
        }
    }
    let rec = StandardizationRecord { means, sds, constant };
    let values = rec.apply(&m.values);
    Ok((
        FeatureMatrix {
            values,
            column_names: m.column_names.clone(),
            standardized: true,
        },
        rec,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub strata_bins: usize,
}

/// Equal-frequency bin label per observation (ties ordered by index).
pub fn quantile_bins(y: ArrayView1<f64>, bins: usize) -> Vec<usize> {
    let n = y.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * bins / n;
    }
    labels
}

/// Largest-remainder rounding of `targets` to integers summing to `total`,
/// never exceeding `caps`.
fn largest_remainder(targets: &[f64], total: usize, caps: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = targets
        .iter()
        .zip(caps)
        .map(|(t, &c)| (t.floor().max(0.0) as usize).min(c))
        .collect();
    let mut assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = targets[a] - out[a] as f64;
        let fb = targets[b] - out[b] as f64;
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    // repeated passes handle cells whose capacity is already exhausted
    while assigned < total {
        let before = assigned;
        for &k in &order {
            if assigned == total {
                break;
            }
            if out[k] < caps[k] {
                out[k] += 1;
                assigned += 1;
            }
        }
        if assigned == before {
            break;
        }
    }
    out
}

/// Split observations into train/validation/test sets stratified on the outcome.
///
/// Binary outcomes stratify on class; continuous outcomes on `bins`
/// equal-frequency bins.
pub fn split_stratified(
    y: &ResponseVector,
    fractions: (f64, f64, f64),
    bins: usize,
    seed: u64,
) -> Result<DataSplit> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|&v| !(v >= 0.0)) || f.iter().all(|&v| v == 0.0) {
        return Err(Error::InvalidInput("fractions must be nonnegative and not all zero".into()));
    }
    let fsum: f64 = f.iter().sum();
    if fsum > 1.0 + 1e-12 {
        return Err(Error::InvalidInput(format!("fractions sum to {fsum} > 1")));
    }
    let n = y.len();
    let (labels, nstrata) = match y.kind {
        ResponseKind::Binary => (y.values.iter().map(|&v| v as usize).collect::<Vec<_>>(), 2),
        ResponseKind::Continuous => {
            if bins < 2 {
                return Err(Error::InvalidInput("continuous stratification needs bins >= 2".into()));
            }
            (quantile_bins(y.values.view(), bins), bins)
        }
    };
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); nstrata];
    for (i, &l) in labels.iter().enumerate() {
        strata[l].push(i);
    }
    let active = f.iter().filter(|&&v| v > 0.0).count();
    for (k, s) in strata.iter().enumerate() {
        if !s.is_empty() && s.len() < active {
            return Err(Error::SmallStratum {
                stratum: k,
                size: s.len(),
                needed: active,
            });
        }
    }

    let total = (n as f64 * fsum).round() as usize;
    let split_targets: Vec<f64> = f.iter().map(|v| v * n as f64).collect();
    let split_totals = largest_remainder(&split_targets, total, &[n; 3]);

    let sizes: Vec<usize> = strata.iter().map(|s| s.len()).collect();
    let mut remaining = sizes.clone();
    let mut counts = vec![vec![0usize; nstrata]; 3];
    for s in 0..3 {
        if split_totals[s] == 0 {
            continue;
        }
        let targets: Vec<f64> = sizes
            .iter()
            .map(|&nk| split_totals[s] as f64 * nk as f64 / n as f64)
            .collect();
        let alloc = largest_remainder(&targets, split_totals[s], &remaining);
        for k in 0..nstrata {
            remaining[k] -= alloc[k];
        }
        counts[s] = alloc;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sets: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (k, members) in strata.iter().enumerate() {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        let mut at = 0;
        for s in 0..3 {
            sets[s].extend_from_slice(&m[at..at + counts[s][k]]);
            at += counts[s][k];
        }
    }
    for s in sets.iter_mut() {
        s.sort_unstable();
    }
    let [train_idx, val_idx, test_idx] = sets;
    Ok(DataSplit {
        train_idx,
        val_idx,
        test_idx,
        strata_bins: nstrata,
    })
}

/// Which column of a table holds the outcome.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutcomeColumn {
    Name(String),
    Index(usize),
}

/// Read a numeric CSV. The outcome column, when requested, is removed from the features.
pub fn read_table(
    path: impl AsRef<Path>,
    has_header: bool,
    outcome: Option<&OutcomeColumn>,
) -> Result<(FeatureMatrix, Option<ResponseVector>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let names: Option<Vec<String>> = if has_header {
        Some(rdr.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = names.as_ref().map(|n| n.len());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = r + usize::from(has_header) + 1;
        match width {
            Some(w) if w != rec.len() => {
                return Err(Error::Parse {
                    row,
                    column: rec.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", rec.len()),
                })
            }
            None => width = Some(rec.len()),
            _ => {}
        }
        let mut vals = Vec::with_capacity(rec.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: c + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: c + 1,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            vals.push(v);
        }
        rows.push(vals);
    }
    let width = width.unwrap_or(0);
    if rows.is_empty() || width == 0 {
        return Err(Error::InvalidInput("table has no data rows".into()));
    }
    let y_col = match outcome {
        None => None,
        Some(OutcomeColumn::Index(i)) => {
            if *i >= width {
                return Err(Error::InvalidInput(format!("outcome column {i} out of range")));
            }
            Some(*i)
        }
        Some(OutcomeColumn::Name(s)) => {
            let names = names
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("outcome by name needs a header".into()))?;
            Some(
                names
                    .iter()
                    .position(|n| n == s)
                    .ok_or_else(|| Error::InvalidInput(format!("outcome column {s:?} not found")))?,
            )
        }
    };
    let feat_cols: Vec<usize> = (0..width).filter(|c| Some(*c) != y_col).collect();
    if feat_cols.is_empty() {
        return Err(Error::InvalidInput("no feature columns remain".into()));
    }
    let values = Array2::from_shape_fn((rows.len(), feat_cols.len()), |(i, j)| rows[i][feat_cols[j]]);
    let mut fm = FeatureMatrix::new(values)?;
    if let Some(n) = &names {
        fm = fm.with_names(feat_cols.iter().map(|&c| n[c].clone()).collect())?;
    }
    let y = match y_col {
        Some(c) => Some(ResponseVector::infer(rows.iter().map(|r| r[c]).collect())?),
        None => None,
    };
    Ok((fm, y))
}

/// Format a float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write features (and optionally the outcome as a trailing column) as CSV.
pub fn write_table(
    path: impl AsRef<Path>,
    m: &FeatureMatrix,
    y: Option<(&str, &ResponseVector)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..m.ncols()).map(|j| m.name(j)).collect();
    if let Some((name, _)) = y {
        header.push(name.to_string());
    }
    w.write_record(&header)?;
    for i in 0..m.nrows() {
        let mut rec: Vec<String> = m.values.row(i).iter().map(|&v| fmt17(v)).collect();
        if let Some((_, yy)) = y {
            rec.push(fmt17(yy.values[i]));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a headerless square numeric CSV (used for covariance structures).
pub fn read_matrix(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let (m, _) = read_table(path, false, None)?;
    Ok(m.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn largest_remainder_respects_total() {
        let a = largest_remainder(&[2.5, 2.5, 5.0], 10, &[10, 10, 10]);
        assert_eq!(a.iter().sum::<usize>(), 10);
        let b = largest_remainder(&[1.6, 1.6], 3, &[1, 5]);
        assert_eq!(b, vec![1, 2]);
    }

    #[test]
    fn quantile_bins_balanced() {
        let y = Array1::from_iter((0..30).map(|i| ((i * 17) % 30) as f64));
        let l = quantile_bins(y.view(), 3);
        for b in 0..3 {
            assert_eq!(l.iter().filter(|&&v| v == b).count(), 10);
        }
    }

    #[test]
    fn constant_column_flagged() {
        let m = FeatureMatrix::new(array![[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]]).unwrap();
        let (s, rec) = standardize_columns(&m).unwrap();
        assert_eq!(s.values.column(0).to_vec(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(s.values.column(1).to_vec(), vec![0.0, 0.0, 0.0]);
        assert!(rec.constant[1] && !rec.constant[0]);
        assert_eq!(rec.sds[1], 1.0);
    }
}
