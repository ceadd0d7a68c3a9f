//! Feature vectors and matrices, the pooled two-sample t-test, its
//! leave-one-out bagged variant and threshold selection of significant columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};
use crate::spharm::SpharmCoefficients;

/// Class label of the control / stable group.
pub const POSITIVE: i32 = 1;
/// Class label of the disease / converter group.
pub const NEGATIVE: i32 = -1;

/// Column block sizes: shape index per template vertex, flattened
/// coefficients, volume distortion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub shape: usize,
    pub spharm: usize,
    pub volume: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Shape,
    Spharm,
    Volume,
}

impl FeatureSchema {
    /// Schema for `n` template vertices and coefficients up to degree `l`.
    pub fn new(n: usize, l: usize) -> Self {
        Self {
            shape: n,
            spharm: 6 * (l + 1) * (l + 1),
            volume: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.shape + self.spharm + self.volume
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tag(&self) -> String {
        format!("shape={};spharm={};volume={}", self.shape, self.spharm, self.volume)
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.len());
        names.extend((0..self.shape).map(|j| format!("e{j}")));
        names.extend((0..self.spharm).map(|k| format!("r{k}")));
        if self.volume > 0 {
            names.push("vol".into());
        }
        names
    }
}

/// Block of a column name (`e…`, `r…`, `vol`).
pub fn column_block(name: &str) -> Option<Block> {
    if name == "vol" {
        Some(Block::Volume)
    } else if let Some(rest) = name.strip_prefix('e') {
        rest.parse::<usize>().ok().map(|_| Block::Shape)
    } else if let Some(rest) = name.strip_prefix('r') {
        rest.parse::<usize>().ok().map(|_| Block::Spharm)
    } else {
        None
    }
}

/// One subject's features in schema order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema: FeatureSchema,
}

/// Concatenates shape block, flattened coefficients and volume.
pub fn assemble_feature_vector(
    shape: &[f64],
    coeffs: &SpharmCoefficients,
    volume: f64,
    schema: &FeatureSchema,
) -> Result<FeatureVector> {
    if shape.len() != schema.shape {
        return Err(Error::SchemaMismatch(format!(
            "{} shape-index values for a schema of {}",
            shape.len(),
            schema.shape
        )));
    }
    let flat = coeffs.flatten();
    if flat.len() != schema.spharm {
        return Err(Error::SchemaMismatch(format!(
            "{} coefficient features for a schema of {}",
            flat.len(),
            schema.spharm
        )));
    }
    let mut values = Vec::with_capacity(schema.len());
    values.extend_from_slice(shape);
    values.extend(flat);
    if schema.volume > 0 {
        values.push(volume);
    }
    Ok(FeatureVector {
        values,
        schema: *schema,
    })
}

/// Subjects × named columns, row-major, with ±1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub labels: Vec<i32>,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(ids: Vec<String>, columns: Vec<String>, rows: Vec<Vec<f64>>, labels: Vec<i32>) -> Result<Self> {
        if ids.len() != rows.len() || labels.len() != rows.len() {
            return Err(Error::LengthMismatch(rows.len(), labels.len().min(ids.len())));
        }
        if let Some(bad) = labels.iter().find(|l| **l != POSITIVE && **l != NEGATIVE) {
            return Err(Error::InvalidParameter(format!("label {bad} not in {{+1, -1}}")));
        }
        let mut data = Vec::with_capacity(rows.len() * columns.len());
        for r in &rows {
            if r.len() != columns.len() {
                return Err(Error::LengthMismatch(r.len(), columns.len()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            ids,
            columns,
            labels,
            data,
        })
    }

    pub fn from_vectors(ids: Vec<String>, vectors: &[FeatureVector], labels: Vec<i32>) -> Result<Self> {
        let schema = vectors
            .first()
            .map(|v| v.schema)
            .ok_or_else(|| Error::TooFewSubjects("no feature vectors".into()))?;
        if vectors.iter().any(|v| v.schema != schema) {
            return Err(Error::SchemaMismatch("feature vectors with different schemas".into()));
        }
        Self::new(
            ids,
            schema.column_names(),
            vectors.iter().map(|v| v.values.clone()).collect(),
            labels,
        )
    }

    pub fn nrows(&self) -> usize {
        self.labels.len()
    }

    pub fn ncols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.ncols();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows()).map(|i| self.get(i, j)).collect()
    }

    pub fn block_of(&self, j: usize) -> Option<Block> {
        column_block(&self.columns[j])
    }

    /// Indices of the columns belonging to any of `blocks`.
    pub fn block_columns(&self, blocks: &[Block]) -> Vec<usize> {
        (0..self.ncols())
            .filter(|&j| self.block_of(j).is_some_and(|b| blocks.contains(&b)))
            .collect()
    }

    /// Rows in the given order.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<Self> {
        for &r in rows {
            if r >= self.nrows() {
                return Err(Error::IndexOutOfRange {
                    index: r,
                    len: self.nrows(),
                });
            }
        }
        let n = self.ncols();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Ok(Self {
            ids: rows.iter().map(|&r| self.ids[r].clone()).collect(),
            columns: self.columns.clone(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            data,
        })
    }

    /// CSV: header `id,<columns…>,label`, one row per subject.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id");
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push_str(",label\n");
        for i in 0..self.nrows() {
            out.push_str(&self.ids[i]);
            for v in self.row(i) {
                out.push_str(&format!(",{v:?}"));
            }
            out.push_str(&format!(",{}\n", self.labels[i]));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty feature CSV".into()))?
            .split(',')
            .collect();
        if header.len() < 2 || header[0] != "id" || header[header.len() - 1] != "label" {
            return Err(Error::Parse("feature CSV header must be id,…,label".into()));
        }
        let columns: Vec<String> = header[1..header.len() - 1].iter().map(|s| s.to_string()).collect();
        if let Some(bad) = columns.iter().find(|c| column_block(c).is_none()) {
            return Err(Error::SchemaMismatch(format!("unknown feature column {bad:?}")));
        }
        let (mut ids, mut rows, mut labels) = (vec![], vec![], vec![]);
        for (r, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != header.len() {
                return Err(Error::Parse(format!("feature CSV row {r} has {} cells", cells.len())));
            }
            ids.push(cells[0].to_string());
            rows.push(
                cells[1..cells.len() - 1]
                    .iter()
                    .map(|c| c.parse::<f64>().map_err(|e| Error::Parse(format!("row {r}: {e}"))))
                    .collect::<Result<Vec<_>>>()?,
            );
            labels.push(
                cells[cells.len() - 1]
                    .trim()
                    .parse::<i32>()
                    .map_err(|e| Error::Parse(format!("row {r} label: {e}")))?,
            );
        }
        Self::new(ids, columns, rows, labels)
    }
}

/// Column slice preserving row order and labels.
pub fn restrict(matrix: &FeatureMatrix, omega: &[usize]) -> Result<FeatureMatrix> {
    let n = matrix.ncols();
    if let Some(&bad) = omega.iter().find(|&&j| j >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let mut data = Vec::with_capacity(matrix.nrows() * omega.len());
    for i in 0..matrix.nrows() {
        let row = matrix.row(i);
        data.extend(omega.iter().map(|&j| row[j]));
    }
    Ok(FeatureMatrix {
        ids: matrix.ids.clone(),
        columns: omega.iter().map(|&j| matrix.columns[j].clone()).collect(),
        labels: matrix.labels.clone(),
        data,
    })
}

/// Outcome of a pooled-variance Student t-test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Pooled variance was zero: `p` is 1 for equal means and 0 otherwise.
    pub degenerate: bool,
}

fn mean_ss(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m) * (v - m)).sum())
}

/// Two-sided p-value of Student's t with `df` degrees of freedom.
pub fn student_t_two_sided(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    beta_reg(df / 2.0, 0.5, df / (df + t * t)).clamp(0.0, 1.0)
}

/// Pooled two-sample t-test, two-sided.
pub fn two_sample_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::TooFewSubjects(format!(
            "t-test groups of size {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (ma, ssa) = mean_ss(a);
    let (mb, ssb) = mean_ss(b);
    let df = na + nb - 2.0;
    let pooled = (ssa + ssb) / df;
    if pooled == 0.0 {
        let equal = ma == mb;
        return Ok(TTest {
            t: if equal { 0.0 } else { f64::INFINITY * (ma - mb).signum() },
            df,
            p: if equal { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = (ma - mb) / (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df),
        degenerate: false,
    })
}

/// p-value of one column split by label, zero-variance columns mapped to 1.
fn column_p(values: impl Iterator<Item = (f64, i32)>, a: &mut Vec<f64>, b: &mut Vec<f64>) -> Result<f64> {
    a.clear();
    b.clear();
    for (v, l) in values {
        if l == POSITIVE {
            a.push(v);
        } else {
            b.push(v);
        }
    }
    let t = two_sample_ttest(a, b)?;
    Ok(if t.degenerate { 1.0 } else { t.p })
}

/// Per-column p-values of the plain (non-bagged) t-test.
pub fn column_ttests(matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    (0..matrix.ncols())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(a, b), j| column_p((0..matrix.nrows()).map(|i| (matrix.get(i, j), matrix.labels[i])), a, b),
        )
        .collect()
}

fn class_counts(labels: &[i32]) -> (usize, usize) {
    let pos = labels.iter().filter(|l| **l == POSITIVE).count();
    (pos, labels.len() - pos)
}

/// Leave-one-out bagged t-test: for every row `i`, the t-test on all other
/// rows gives `p_j^i`; the result is `min_i p_j^i` per column. Sub-tests with
/// zero pooled variance count as `p = 1`.
pub fn bagged_ttest(matrix: &FeatureMatrix) -> Result<Vec<f64>> {
    let (pos, neg) = class_counts(&matrix.labels);
    if pos < 3 || neg < 3 {
        return Err(Error::TooFewSubjects(format!(
            "bagged t-test needs 3 subjects per class, got {pos} and {neg}"
        )));
    }
    let m = matrix.nrows();
    (0..matrix.ncols())
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(a, b), j| {
                let mut best: f64 = 1.0;
                for skip in 0..m {
                    let vals = (0..m)
                        .filter(|&i| i != skip)
                        .map(|i| (matrix.get(i, j), matrix.labels[i]));
                    best = best.min(column_p(vals, a, b)?);
                }
                Ok(best)
            },
        )
        .collect()
}

/// Selected columns for one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub p: Vec<f64>,
    pub omega: Vec<usize>,
    pub p_cut: f64,
}

/// Selected-feature counts per block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockCounts {
    pub shape: usize,
    pub spharm: usize,
    pub volume: usize,
}

impl BlockCounts {
    pub fn total(&self) -> usize {
        self.shape + self.spharm + self.volume
    }

    pub fn of(columns: &[String], omega: &[usize]) -> Self {
        let mut c = Self::default();
        for &j in omega {
            match column_block(&columns[j]) {
                Some(Block::Shape) => c.shape += 1,
                Some(Block::Spharm) => c.spharm += 1,
                Some(Block::Volume) => c.volume += 1,
                None => {}
            }
        }
        c
    }
}

/// `Ω = { j : p_j ≤ p_cut }`, ascending.
pub fn select_features(p: &[f64], p_cut: f64) -> Result<SelectionResult> {
    if !(p_cut > 0.0 && p_cut < 1.0) {
        return Err(Error::InvalidParameter(format!("p_cut {p_cut} outside (0, 1)")));
    }
    if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidParameter(format!("p-value {bad} outside [0, 1]")));
    }
    Ok(SelectionResult {
        p: p.to_vec(),
        omega: (0..p.len()).filter(|&j| p[j] <= p_cut).collect(),
        p_cut,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Complex;

    fn small_matrix() -> FeatureMatrix {
        FeatureMatrix::new(
            (0..6).map(|i| format!("s{i}")).collect(),
            vec!["e0".into(), "e1".into(), "vol".into()],
            vec![
                vec![1.0, 5.0, 0.1],
                vec![1.2, 4.0, 0.0],
                vec![0.9, 6.0, 0.2],
                vec![2.0, 5.5, -0.1],
                vec![2.1, 4.5, -0.2],
                vec![2.3, 5.0, -0.15],
            ],
            vec![1, 1, 1, -1, -1, -1],
        )
        .unwrap()
    }

    #[test]
    fn default_schema_length() {
        let s = FeatureSchema::new(8000, 30);
        assert_eq!(s.spharm, 5766);
        assert_eq!(s.len(), 13767);
    }

    #[test]
    fn assembly_order() {
        let mut c = SpharmCoefficients::zeros(1);
        c.set(1, -1, [Complex::new(1.0, 2.0), Complex::new(3.0, 4.0), Complex::new(5.0, 6.0)]);
        let schema = FeatureSchema::new(2, 1);
        let v = assemble_feature_vector(&[0.5, 0.25], &c, -0.1, &schema).unwrap();
        assert_eq!(v.values.len(), 2 + 24 + 1);
        assert_eq!(&v.values[..2], &[0.5, 0.25]);
        assert_eq!(&v.values[8..14], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(*v.values.last().unwrap(), -0.1);
        assert!(assemble_feature_vector(&[0.5], &c, 0.0, &schema).is_err());
    }

    #[test]
    fn ttest_conventions() {
        let t = two_sample_ttest(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((t.t, t.p), (0.0, 1.0));
        let d = two_sample_ttest(&[0.0; 4], &[1.0; 4]).unwrap();
        assert!(d.degenerate);
        assert_eq!(d.p, 0.0);
        let e = two_sample_ttest(&[2.0; 3], &[2.0; 3]).unwrap();
        assert!(e.degenerate && e.p == 1.0);
        assert!(two_sample_ttest(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn ttest_is_symmetric() {
        let a = [1.1, 2.3, 0.8, 1.9];
        let b = [3.2, 2.9, 4.1, 3.6];
        assert_eq!(two_sample_ttest(&a, &b).unwrap().p, two_sample_ttest(&b, &a).unwrap().p);
    }

    #[test]
    fn selection_thresholds() {
        let s = select_features(&[0.0005, 0.02, 0.3], 0.001).unwrap();
        assert_eq!(s.omega, vec![0]);
        assert_eq!(select_features(&[0.0005, 0.02, 0.3], 0.5).unwrap().omega, vec![0, 1, 2]);
        assert!(select_features(&[0.1], 0.0).is_err());
        assert!(select_features(&[0.1], 1.0).is_err());
    }

    #[test]
    fn restriction() {
        let m = small_matrix();
        assert_eq!(restrict(&m, &[0, 1, 2]).unwrap(), m);
        let r = restrict(&m, &[0]).unwrap();
        assert_eq!(r.column(0), m.column(0));
        assert_eq!(r.ncols(), 1);
        assert_eq!(restrict(&m, &[]).unwrap().ncols(), 0);
        assert!(matches!(restrict(&m, &[3]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn bagged_needs_three_per_class() {
        let m = small_matrix().subset_rows(&[0, 1, 3, 4, 5]).unwrap();
        assert!(matches!(bagged_ttest(&m), Err(Error::TooFewSubjects(_))));
    }

    #[test]
    fn identical_rows_give_unit_p() {
        let rows = vec![vec![1.0, 2.0]; 6];
        let m = FeatureMatrix::new(
            (0..6).map(|i| i.to_string()).collect(),
            vec!["e0".into(), "r0".into()],
            rows,
            vec![1, 1, 1, -1, -1, -1],
        )
        .unwrap();
        assert_eq!(bagged_ttest(&m).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn csv_roundtrip_and_blocks() {
        let m = small_matrix();
        let back = FeatureMatrix::from_csv(&m.to_csv()).unwrap();
        assert_eq!(back, m);
        let c = BlockCounts::of(&m.columns, &[0, 2]);
        assert_eq!((c.shape, c.spharm, c.volume), (1, 0, 1));
        assert_eq!(m.block_columns(&[Block::Volume]), vec![2]);
    }
}
