//! Composed embedding objective: frame-level and utterance-level regression
//! plus a category-level supervised contrastive term on pooled embeddings.
//!
//! ```text
//! total = frame + w_utt * utt + w_cate * cate
//! ```
//!
//! All arithmetic is f64. The contrastive term has a closed-form gradient
//! with respect to the raw (unnormalized) embeddings, checked against
//! central finite differences by [`grad_check_contrastive`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifest::EmotionLabel;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} columns, expected {cols}",
                rows[i].len()
            )));
        }
        let n = rows.len();
        Matrix::from_vec(n, cols, rows.into_iter().flatten().collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        (0..m.rows).map(|i| m.row(i).to_vec()).collect()
    }
}

/// Pooled utterance embeddings (one row each) and their emotion labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingBatch {
    pub embeddings: Matrix,
    pub labels: Vec<EmotionLabel>,
}

impl EmbeddingBatch {
    pub fn new(embeddings: Matrix, labels: Vec<EmotionLabel>) -> Result<Self> {
        let batch = EmbeddingBatch { embeddings, labels };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        let (b, d) = self.embeddings.shape();
        if b < 2 || d < 1 {
            return Err(Error::ShapeMismatch(format!(
                "batch is {b}x{d}; need at least 2 rows and 1 column"
            )));
        }
        if self.labels.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {b} rows",
                self.labels.len()
            )));
        }
        if self.embeddings.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite embedding entry".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub utt: f64,
    pub cate: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            utt: 0.1,
            cate: 100.0,
            temperature: 0.07,
        }
    }
}

/// Student/teacher tensors of equal shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorPair {
    pub student: Matrix,
    pub teacher: Matrix,
}

/// frames × D
pub type FramePair = TensorPair;
/// utterance tokens × D
pub type UttPair = TensorPair;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalized_rows(g: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut z = g.clone();
    let mut norms = Vec::with_capacity(g.rows());
    for i in 0..g.rows() {
        let norm = dot(g.row(i), g.row(i)).sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNormRow(i));
        }
        z.row_mut(i).iter_mut().for_each(|v| *v /= norm);
        norms.push(norm);
    }
    Ok((z, norms))
}

/// Pairwise cosine similarities of the rows of `g`.
pub fn cosine_similarity_matrix(g: &Matrix) -> Result<Matrix> {
    let (z, _) = normalized_rows(g)?;
    Ok(gram(&z))
}

fn gram(z: &Matrix) -> Matrix {
    let b = z.rows();
    let mut s = Matrix::zeros(b, b);
    for i in 0..b {
        for j in i..b {
            let v = dot(z.row(i), z.row(j));
            s.data[i * b + j] = v;
            s.data[j * b + i] = v;
        }
    }
    s
}

fn check_temperature(tau: f64) -> Result<()> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "temperature must be > 0, got {tau}"
        )));
    }
    Ok(())
}

/// Per-anchor softmax over all other rows, and which anchors contribute.
struct ContrastiveParts {
    z: Matrix,
    norms: Vec<f64>,
    /// softmax[i][a], zero on the diagonal
    softmax: Matrix,
    anchors: Vec<(usize, Vec<usize>)>,
    loss: f64,
}

fn contrastive_parts(batch: &EmbeddingBatch, tau: f64) -> Result<ContrastiveParts> {
    batch.validate()?;
    check_temperature(tau)?;
    let b = batch.embeddings.rows();
    let (z, norms) = normalized_rows(&batch.embeddings)?;
    let s = gram(&z);

    let anchors: Vec<(usize, Vec<usize>)> = (0..b)
        .filter_map(|i| {
            let positives: Vec<usize> = (0..b)
                .filter(|&j| j != i && batch.labels[j] == batch.labels[i])
                .collect();
            (!positives.is_empty()).then_some((i, positives))
        })
        .collect();
    if anchors.is_empty() {
        return Err(Error::DegenerateBatch);
    }

    let mut softmax = Matrix::zeros(b, b);
    let mut total = 0.0;
    for (i, positives) in &anchors {
        let i = *i;
        let max = (0..b)
            .filter(|&a| a != i)
            .map(|a| s.get(i, a) / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..b)
            .filter(|&a| a != i)
            .map(|a| (s.get(i, a) / tau - max).exp())
            .sum();
        let log_z = max + sum.ln();
        for a in (0..b).filter(|&a| a != i) {
            softmax.data[i * b + a] = (s.get(i, a) / tau - max).exp() / sum;
        }
        let mean_pos =
            positives.iter().map(|&p| s.get(i, p) / tau).sum::<f64>() / positives.len() as f64;
        total += log_z - mean_pos;
    }
    Ok(ContrastiveParts {
        z,
        norms,
        softmax,
        loss: total / anchors.len() as f64,
        anchors,
    })
}

/// Multi-positive supervised contrastive loss over cosine similarities.
///
/// Rows sharing a label are positives for each other. Anchors without any
/// positive are skipped; the result is the mean over contributing anchors.
pub fn category_contrastive_loss(batch: &EmbeddingBatch, tau: f64) -> Result<f64> {
    Ok(contrastive_parts(batch, tau)?.loss)
}

/// Loss and its gradient with respect to the raw embedding rows.
pub fn category_contrastive_grad(batch: &EmbeddingBatch, tau: f64) -> Result<(f64, Matrix)> {
    let parts = contrastive_parts(batch, tau)?;
    let (b, d) = batch.embeddings.shape();
    let n_anchors = parts.anchors.len() as f64;

    // dL/dS[i][j] for anchor rows i.
    let mut w = Matrix::zeros(b, b);
    for (i, positives) in &parts.anchors {
        let i = *i;
        for a in (0..b).filter(|&a| a != i) {
            w.data[i * b + a] = parts.softmax.get(i, a) / (tau * n_anchors);
        }
        for &p in positives {
            w.data[i * b + p] -= 1.0 / (tau * positives.len() as f64 * n_anchors);
        }
    }

    let mut grad = Matrix::zeros(b, d);
    for k in 0..b {
        // dL/dz_k through both S[k][j] and S[i][k].
        let mut dz = vec![0.0; d];
        for j in 0..b {
            let coeff = w.get(k, j) + w.get(j, k);
            if coeff != 0.0 {
                for (acc, &zj) in dz.iter_mut().zip(parts.z.row(j)) {
                    *acc += coeff * zj;
                }
            }
        }
        let zk = parts.z.row(k);
        let radial = dot(zk, &dz);
        let norm = parts.norms[k];
        for ((g, &dzc), &zc) in grad.row_mut(k).iter_mut().zip(&dz).zip(zk) {
            *g = (dzc - zc * radial) / norm;
        }
    }
    Ok((parts.loss, grad))
}

fn check_pair(pair: &TensorPair) -> Result<()> {
    if pair.student.shape() != pair.teacher.shape() {
        return Err(Error::ShapeMismatch(format!(
            "student {:?} vs teacher {:?}",
            pair.student.shape(),
            pair.teacher.shape()
        )));
    }
    if pair.student.as_slice().is_empty() {
        return Err(Error::ShapeMismatch("empty tensors".into()));
    }
    Ok(())
}

/// Mean squared error between student and teacher.
pub fn mse(pair: &TensorPair) -> Result<f64> {
    check_pair(pair)?;
    let s = pair.student.as_slice();
    let t = pair.teacher.as_slice();
    Ok(s.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.len() as f64)
}

/// Gradient of [`mse`] with respect to the student: `2 (s - t) / N`.
pub fn mse_grad(pair: &TensorPair) -> Result<Matrix> {
    check_pair(pair)?;
    let n = pair.student.as_slice().len() as f64;
    let mut g = pair.student.clone();
    for (gv, &tv) in g.as_mut_slice().iter_mut().zip(pair.teacher.as_slice()) {
        *gv = 2.0 * (*gv - tv) / n;
    }
    Ok(g)
}

pub fn frame_loss(pair: &FramePair) -> Result<f64> {
    mse(pair)
}

pub fn utt_loss(pair: &UttPair) -> Result<f64> {
    mse(pair)
}

pub fn total_loss(frame: f64, utt: f64, cate: f64, weights: &LossWeights) -> f64 {
    frame + weights.utt * utt + weights.cate * cate
}

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central finite-difference gradient of `f` at `x`.
pub fn numerical_gradient(
    f: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    eps: f64,
) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + eps;
            let plus = f(&probe)?;
            probe[i] = x[i] - eps;
            let minus = f(&probe)?;
            probe[i] = x[i];
            Ok((plus - minus) / (2.0 * eps))
        })
        .collect()
}

/// max over coordinates of |analytic - numeric| / max(1, |numeric|).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> Result<f64> {
    if analytic.len() != numeric.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} analytic vs {} numeric gradient entries",
            analytic.len(),
            numeric.len()
        )));
    }
    let mut worst: f64 = 0.0;
    for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        if !a.is_finite() || !n.is_finite() {
            return Err(Error::NonFiniteGradient(i));
        }
        worst = worst.max((a - n).abs() / n.abs().max(1.0));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

/// Compares an analytic gradient against central differences of `loss`.
pub fn grad_check(
    loss: impl Fn(&[f64]) -> Result<f64>,
    x: &[f64],
    analytic: Vec<f64>,
    eps: f64,
) -> Result<GradCheck> {
    let numeric = numerical_gradient(loss, x, eps)?;
    Ok(GradCheck {
        max_relative_error: max_relative_error(&analytic, &numeric)?,
        analytic,
        numeric,
    })
}

pub fn grad_check_contrastive(batch: &EmbeddingBatch, tau: f64, eps: f64) -> Result<GradCheck> {
    let (_, analytic) = category_contrastive_grad(batch, tau)?;
    let (b, d) = batch.embeddings.shape();
    let loss = |x: &[f64]| {
        let probe = EmbeddingBatch {
            embeddings: Matrix::from_vec(b, d, x.to_vec())?,
            labels: batch.labels.clone(),
        };
        category_contrastive_loss(&probe, tau)
    };
    grad_check(
        loss,
        batch.embeddings.as_slice(),
        analytic.as_slice().to_vec(),
        eps,
    )
}

pub fn grad_check_mse(pair: &TensorPair, eps: f64) -> Result<GradCheck> {
    let analytic = mse_grad(pair)?;
    let (r, c) = pair.student.shape();
    let loss = |x: &[f64]| {
        mse(&TensorPair {
            student: Matrix::from_vec(r, c, x.to_vec())?,
            teacher: pair.teacher.clone(),
        })
    };
    grad_check(
        loss,
        pair.student.as_slice(),
        analytic.as_slice().to_vec(),
        eps,
    )
}
