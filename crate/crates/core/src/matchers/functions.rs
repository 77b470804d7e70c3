//! Mean, max, diagonal, Chamfer and linear matching functions with their
//! gradients with respect to the similarity matrix.

use super::matrix::{order_free_sum, SimilarityMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimpleKind {
    Mean,
    Max,
    Diag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChamferVariant {
    /// Every query clip matches its best support clip.
    Q,
    /// Every support clip matches its best query clip.
    S,
    Qs,
}

/// First index of the maximum (smallest index wins ties).
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn require_square(m: &SimilarityMatrix, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "{what} needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )))
    }
}

pub fn match_simple(kind: SimpleKind, m: &SimilarityMatrix) -> Result<f64> {
    match kind {
        SimpleKind::Mean => {
            Ok(order_free_sum(m.values().iter().copied()) / m.values().len() as f64)
        }
        SimpleKind::Max => Ok(argmax(m.values().iter().copied()).1),
        SimpleKind::Diag => {
            require_square(m, "diag")?;
            let sum: f64 = (0..m.rows()).map(|i| m.get(i, i)).sum();
            Ok(sum / m.rows() as f64)
        }
    }
}

pub(crate) fn match_simple_grad(kind: SimpleKind, m: &SimilarityMatrix) -> Result<(f64, Vec<f64>)> {
    let value = match_simple(kind, m)?;
    let len = m.values().len();
    let grad = match kind {
        SimpleKind::Mean => vec![1.0 / len as f64; len],
        SimpleKind::Max => {
            let mut g = vec![0.0; len];
            g[argmax(m.values().iter().copied()).0] = 1.0;
            g
        }
        SimpleKind::Diag => {
            let mut g = vec![0.0; len];
            for i in 0..m.rows() {
                g[i * m.cols() + i] = 1.0 / m.rows() as f64;
            }
            g
        }
    };
    Ok((value, grad))
}

/// `(column, value)` of each row's maximum.
pub fn row_argmax(m: &SimilarityMatrix) -> Vec<(usize, f64)> {
    (0..m.rows())
        .map(|i| argmax(m.row(i).iter().copied()))
        .collect()
}

/// `(row, value)` of each column's maximum.
pub fn col_argmax(m: &SimilarityMatrix) -> Vec<(usize, f64)> {
    (0..m.cols())
        .map(|j| argmax((0..m.rows()).map(|i| m.get(i, j))))
        .collect()
}

fn chamfer_q(m: &SimilarityMatrix) -> f64 {
    order_free_sum(row_argmax(m).into_iter().map(|(_, v)| v)) / m.rows() as f64
}

fn chamfer_s(m: &SimilarityMatrix) -> f64 {
    order_free_sum(col_argmax(m).into_iter().map(|(_, v)| v)) / m.cols() as f64
}

/// Query side divides by the row count and support side by the column count,
/// which keeps the definition meaningful on `n x kn` joint matrices.
pub fn match_chamfer(variant: ChamferVariant, m: &SimilarityMatrix) -> f64 {
    match variant {
        ChamferVariant::Q => chamfer_q(m),
        ChamferVariant::S => chamfer_s(m),
        ChamferVariant::Qs => chamfer_q(m) + chamfer_s(m),
    }
}

pub(crate) fn match_chamfer_grad(variant: ChamferVariant, m: &SimilarityMatrix) -> (f64, Vec<f64>) {
    let mut g = vec![0.0; m.values().len()];
    if matches!(variant, ChamferVariant::Q | ChamferVariant::Qs) {
        let w = 1.0 / m.rows() as f64;
        for (i, (j, _)) in row_argmax(m).into_iter().enumerate() {
            g[i * m.cols() + j] += w;
        }
    }
    if matches!(variant, ChamferVariant::S | ChamferVariant::Qs) {
        let w = 1.0 / m.cols() as f64;
        for (j, (i, _)) in col_argmax(m).into_iter().enumerate() {
            g[i * m.cols() + j] += w;
        }
    }
    (match_chamfer(variant, m), g)
}

/// `sum_ij w_ij m_ij` with `weights` row-major in the shape of `m`.
pub fn match_linear(weights: &[f64], m: &SimilarityMatrix) -> Result<f64> {
    require_square(m, "linear")?;
    if weights.len() != m.values().len() {
        return Err(Error::ShapeMismatch(format!(
            "linear weights have {} entries, matrix has {}",
            weights.len(),
            m.values().len()
        )));
    }
    Ok(weights.iter().zip(m.values()).map(|(w, v)| w * v).sum())
}
