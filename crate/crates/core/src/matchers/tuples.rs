use crate::error::{Error, Result};
use crate::projection::{concat_tuple, ProjectionParams};
use crate::store::FeatureSet;

use super::matrix::{similarity_matrix, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TupleMode {
    /// Strictly increasing clip indices: `C(n, l)` tuples.
    Ordered,
    /// Distinct clip indices in any order: `n! / (n - l)!` tuples.
    All,
}

/// Lexicographically ordered tuples of `l` clip positions out of `n`.
pub fn enumerate_tuples(n: usize, l: usize, mode: TupleMode) -> Result<Vec<Vec<usize>>> {
    if l == 0 {
        return Err(Error::InvalidConfig("tuple length must be >= 1".into()));
    }
    if l > n {
        return Err(Error::InvalidConfig(format!(
            "tuple length {l} exceeds clip count {n}"
        )));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(l);
    let mut used = vec![false; n];
    extend(n, l, mode, &mut current, &mut used, &mut out);
    Ok(out)
}

fn extend(
    n: usize,
    l: usize,
    mode: TupleMode,
    current: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<Vec<usize>>,
) {
    if current.len() == l {
        out.push(current.clone());
        return;
    }
    let start = match mode {
        TupleMode::Ordered => current.last().map_or(0, |&i| i + 1),
        TupleMode::All => 0,
    };
    for i in start..n {
        if used[i] {
            continue;
        }
        used[i] = true;
        current.push(i);
        extend(n, l, mode, current, used, out);
        current.pop();
        used[i] = false;
    }
}

/// Projected tuple features of one video, in `tuples` order.
pub fn project_tuples(
    fs: &FeatureSet,
    tuples: &[Vec<usize>],
    params: &ProjectionParams,
) -> Result<Vec<Vec<f64>>> {
    tuples
        .iter()
        .map(|t| params.project(&concat_tuple(fs, t)?))
        .collect()
}

/// Similarity matrix between the projected `l`-tuples of `q` (rows) and `x` (columns).
pub fn tuple_similarity_matrix(
    q: &FeatureSet,
    x: &FeatureSet,
    params: &ProjectionParams,
    l: usize,
    mode: TupleMode,
) -> Result<SimilarityMatrix> {
    let tq = enumerate_tuples(q.n(), l, mode)?;
    let tx = enumerate_tuples(x.n(), l, mode)?;
    similarity_matrix(
        &project_tuples(q, &tq, params)?,
        &project_tuples(x, &tx, params)?,
    )
}
