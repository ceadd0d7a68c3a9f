//! Soft-margin SVM with a Gaussian RBF kernel, trained by two-variable SMO
//! with maximal-violating-pair selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{restrict, FeatureMatrix, NEGATIVE, POSITIVE};

pub const KKT_TOLERANCE: f64 = 1e-4;
pub const MAX_PAIR_UPDATES: usize = 1_000_000;

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn fit(matrix: &FeatureMatrix) -> Result<Self> {
        let n = matrix.nrows();
        if n < 2 {
            return Err(Error::TooFewSubjects(format!("standardization needs 2 rows, got {n}")));
        }
        let mut means = vec![0.0; matrix.ncols()];
        let mut stds = vec![0.0; matrix.ncols()];
        for j in 0..matrix.ncols() {
            let col = matrix.column(j);
            let m = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64;
            let s = var.sqrt();
            means[j] = m;
            stds[j] = if s > 0.0 { s } else { 1.0 };
        }
        Ok(Self { means, stds })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn transform(&self, matrix: &FeatureMatrix) -> Result<FeatureMatrix> {
        FeatureMatrix::new(
            matrix.ids.clone(),
            matrix.columns.clone(),
            (0..matrix.nrows()).map(|i| self.apply(matrix.row(i))).collect(),
            matrix.labels.clone(),
        )
    }
}

/// Z-scores every column with the matrix's own statistics.
pub fn standardize(matrix: &FeatureMatrix) -> Result<(FeatureMatrix, Scaler)> {
    let scaler = Scaler::fit(matrix)?;
    Ok((scaler.transform(matrix)?, scaler))
}

/// `exp(-η ‖u − v‖²)`.
pub fn rbf_kernel(u: &[f64], v: &[f64], eta: f64) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    Ok(kernel(u, v, eta))
}

#[inline]
fn kernel(u: &[f64], v: &[f64], eta: f64) -> f64 {
    let d: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    (-eta * d).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: i32,
    pub decision: f64,
}

/// Label rule with `sign(0) = +1`.
pub fn label_of(decision: f64) -> i32 {
    if decision >= 0.0 {
        POSITIVE
    } else {
        NEGATIVE
    }
}

/// Trained classifier in the standardized, column-restricted space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub eta: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub bias: f64,
    pub scaler: Scaler,
    pub omega: Vec<usize>,
    pub support_rows: Vec<Vec<f64>>,
    /// `α_i y_i` per support row.
    pub dual_coeffs: Vec<f64>,
    pub schema_tag: String,
    /// Width of raw feature vectors accepted by [`predict`].
    pub input_len: usize,
    /// False when the pair-update cap was hit before the KKT tolerance.
    pub converged: bool,
}

impl SvmModel {
    /// Decision value for an already restricted and standardized vector.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.support_rows
            .iter()
            .zip(&self.dual_coeffs)
            .map(|(s, a)| a * kernel(s, x, self.eta))
            .sum::<f64>()
            + self.bias
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Raw dual solution.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub bias: f64,
    pub converged: bool,
    pub pair_updates: usize,
}

/// Solves `min ½ αᵀQα − Σα` subject to `0 ≤ α ≤ C`, `Σ α_i y_i = 0`, with
/// `Q_ij = y_i y_j K(x_i, x_j)`.
pub fn solve_dual(rows: &[Vec<f64>], labels: &[i32], eta: f64, c: f64) -> Result<DualSolution> {
    let n = rows.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    if !(c > 0.0) || !(eta > 0.0) {
        return Err(Error::InvalidParameter(format!("C = {c}, eta = {eta} must be positive")));
    }
    if !labels.contains(&POSITIVE) || !labels.contains(&NEGATIVE) {
        return Err(Error::DegenerateData("training set lacks one class".into()));
    }
    let y: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = kernel(&rows[i], &rows[j], eta);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let up = |a: f64, y: f64| (y > 0.0 && a < c) || (y < 0.0 && a > 0.0);
    let low = |a: f64, y: f64| (y > 0.0 && a > 0.0) || (y < 0.0 && a < c);

    let mut updates = 0;
    let mut converged = false;
    let (mut m_up, mut m_low);
    loop {
        let mut i = usize::MAX;
        let mut j = usize::MAX;
        m_up = f64::NEG_INFINITY;
        m_low = f64::INFINITY;
        for t in 0..n {
            let v = -y[t] * grad[t];
            if up(alpha[t], y[t]) && v > m_up {
                m_up = v;
                i = t;
            }
            if low(alpha[t], y[t]) && v < m_low {
                m_low = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || m_up - m_low < KKT_TOLERANCE {
            converged = true;
            break;
        }
        if updates >= MAX_PAIR_UPDATES {
            break;
        }
        updates += 1;
        let curv = (k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j]).max(1e-12);
        let mut lambda = (m_up - m_low) / curv;
        lambda = lambda.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
        lambda = lambda.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });
        alpha[i] = (alpha[i] + y[i] * lambda).clamp(0.0, c);
        alpha[j] = (alpha[j] - y[j] * lambda).clamp(0.0, c);
        for t in 0..n {
            grad[t] += y[t] * lambda * (k[t * n + i] - k[t * n + j]);
        }
    }
    if !converged {
        log::warn!("SMO stopped after {updates} pair updates without reaching KKT tolerance");
    }

    let free: Vec<f64> = (0..n)
        .filter(|&t| alpha[t] > 0.0 && alpha[t] < c)
        .map(|t| -y[t] * grad[t])
        .collect();
    let bias = if free.is_empty() {
        (m_up.max(f64::MIN) + m_low.min(f64::MAX)) / 2.0
    } else {
        free.iter().sum::<f64>() / free.len() as f64
    };
    Ok(DualSolution {
        alpha,
        bias,
        converged,
        pair_updates: updates,
    })
}

/// Trains on the matrix as given (no restriction, no scaling).
pub fn train_svm(matrix: &FeatureMatrix, eta: f64, c: f64) -> Result<SvmModel> {
    let d = matrix.ncols();
    let identity = Scaler {
        means: vec![0.0; d],
        stds: vec![1.0; d],
    };
    train_with(matrix, eta, c, identity, (0..d).collect(), d, String::new())
}

fn train_with(
    x: &FeatureMatrix,
    eta: f64,
    c: f64,
    scaler: Scaler,
    omega: Vec<usize>,
    input_len: usize,
    schema_tag: String,
) -> Result<SvmModel> {
    if x.ncols() == 0 {
        return Err(Error::DegenerateData("no feature columns selected".into()));
    }
    let rows: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).to_vec()).collect();
    let sol = solve_dual(&rows, &x.labels, eta, c)?;
    let mut support_rows = Vec::new();
    let mut dual_coeffs = Vec::new();
    for (i, a) in sol.alpha.iter().enumerate() {
        if *a > 0.0 {
            support_rows.push(rows[i].clone());
            dual_coeffs.push(a * x.labels[i] as f64);
        }
    }
    Ok(SvmModel {
        eta,
        c,
        bias: sol.bias,
        scaler,
        omega,
        support_rows,
        dual_coeffs,
        schema_tag,
        input_len,
        converged: sol.converged,
    })
}

/// Restricts to `omega`, standardizes with training statistics and trains.
pub fn fit_classifier(matrix: &FeatureMatrix, omega: &[usize], eta: f64, c: f64, schema_tag: &str) -> Result<SvmModel> {
    let restricted = restrict(matrix, omega)?;
    let (x, scaler) = standardize(&restricted)?;
    train_with(&x, eta, c, scaler, omega.to_vec(), matrix.ncols(), schema_tag.to_string())
}

/// As [`fit_classifier`], with kernel weight `weights[k]` on the `k`-th
/// selected column: `K = exp(−η Σ w_k z_k²)` over standardized `z`. The
/// weights are folded into the stored scaler.
pub fn fit_classifier_weighted(
    matrix: &FeatureMatrix,
    omega: &[usize],
    weights: &[f64],
    eta: f64,
    c: f64,
    schema_tag: &str,
) -> Result<SvmModel> {
    if weights.len() != omega.len() {
        return Err(Error::LengthMismatch(weights.len(), omega.len()));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::InvalidParameter("kernel weights must be positive".into()));
    }
    let restricted = restrict(matrix, omega)?;
    let mut scaler = Scaler::fit(&restricted)?;
    for (s, w) in scaler.stds.iter_mut().zip(weights) {
        *s /= w.sqrt();
    }
    let x = scaler.transform(&restricted)?;
    train_with(&x, eta, c, scaler, omega.to_vec(), matrix.ncols(), schema_tag.to_string())
}

/// Restrict → standardize → decide.
pub fn predict(model: &SvmModel, raw: &[f64]) -> Result<Prediction> {
    if raw.len() != model.input_len {
        return Err(Error::SchemaMismatch(format!(
            "feature vector of length {} for a model expecting {}",
            raw.len(),
            model.input_len
        )));
    }
    let picked: Vec<f64> = model.omega.iter().map(|&j| raw[j]).collect();
    let x = model.scaler.apply(&picked);
    let decision = model.decision(&x);
    Ok(Prediction {
        label: label_of(decision),
        decision,
    })
}
