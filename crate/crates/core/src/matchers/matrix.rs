use crate::error::{Error, Result};
use crate::projection::dot;

/// Row-major grid of pairwise similarities: rows index query clips (or
/// tuples), columns index support clips.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Empty("similarity matrix"));
        }
        if values.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { rows, cols, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged rows".into()));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for j in 0..self.cols {
            for i in 0..self.rows {
                values.push(self.get(i, j));
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            values,
        }
    }

    /// Entry `(i, j)` of the result is entry `(row_order[i], col_order[j])` of `self`.
    pub fn permuted(&self, row_order: &[usize], col_order: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &i in row_order {
            for &j in col_order {
                values.push(self.get(i, j));
            }
        }
        Self {
            rows: row_order.len(),
            cols: col_order.len(),
            values,
        }
    }
}

/// `m_ij = <q_i, x_j>` for unit-norm inputs.
pub fn similarity_matrix(q_feats: &[Vec<f64>], x_feats: &[Vec<f64>]) -> Result<SimilarityMatrix> {
    if q_feats.is_empty() || x_feats.is_empty() {
        return Err(Error::Empty("similarity inputs"));
    }
    let dim = q_feats[0].len();
    if let Some(bad) = q_feats.iter().chain(x_feats).find(|v| v.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let mut values = Vec::with_capacity(q_feats.len() * x_feats.len());
    for q in q_feats {
        values.extend(x_feats.iter().map(|x| dot(q, x)));
    }
    SimilarityMatrix::new(q_feats.len(), x_feats.len(), values)
}

/// Horizontal concatenation in the given order.
pub fn joint_matrix(mats: &[SimilarityMatrix]) -> Result<SimilarityMatrix> {
    let first = mats.first().ok_or(Error::Empty("joint of zero matrices"))?;
    let rows = first.rows;
    if let Some(bad) = mats.iter().find(|m| m.rows != rows) {
        return Err(Error::ShapeMismatch(format!(
            "joint matrix row counts differ: {} vs {}",
            rows, bad.rows
        )));
    }
    let cols = mats.iter().map(|m| m.cols).sum();
    let mut values = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for m in mats {
            values.extend_from_slice(m.row(i));
        }
    }
    Ok(SimilarityMatrix { rows, cols, values })
}

/// Sum that does not depend on the order of its inputs: values are sorted
/// (total order) before adding, so any permutation of rows or columns gives
/// bit-identical results.
pub(crate) fn order_free_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_unstable_by(f64::total_cmp);
    v.into_iter().sum()
}
