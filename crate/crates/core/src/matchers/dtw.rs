//! Alignment-path matching on a square similarity matrix.
//!
//! A path starts at `(0, 0)`, ends at `(n-1, n-1)` and moves right, down or
//! diagonally. Its score is the mean similarity of the cells it visits, and
//! the hard matcher returns the best score over all paths. Because the mean
//! does not decompose over prefixes, the recursion is indexed by path length:
//! `sum[i][j][len]` is the best sum of a `len`-cell path reaching `(i, j)`.
//!
//! The soft matcher replaces every maximum by `smax_g(v) = g ln sum exp(v / g)`
//! taken over length-normalized candidates, so it converges to the hard value
//! as `g -> 0` and is differentiable for `g > 0`.

use super::matrix::SimilarityMatrix;
use crate::error::{Error, Result};

struct Table {
    n: usize,
    lens: usize,
    sums: Vec<f64>,
}

impl Table {
    fn new(n: usize) -> Self {
        let lens = 2 * n - 1;
        Self {
            n,
            lens,
            sums: vec![f64::NEG_INFINITY; n * n * lens],
        }
    }

    /// `len` counts cells, starting at 1.
    fn idx(&self, i: usize, j: usize, len: usize) -> usize {
        (i * self.n + j) * self.lens + (len - 1)
    }

    fn get(&self, i: usize, j: usize, len: usize) -> f64 {
        self.sums[self.idx(i, j, len)]
    }

    /// Valid path lengths ending at `(i, j)`.
    fn len_range(i: usize, j: usize) -> std::ops::RangeInclusive<usize> {
        (i.max(j) + 1)..=(i + j + 1)
    }
}

fn predecessors(i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
    let up = (i > 0).then(|| (i - 1, j));
    let left = (j > 0).then(|| (i, j - 1));
    let diag = (i > 0 && j > 0).then(|| (i - 1, j - 1));
    [up, left, diag].into_iter().flatten()
}

/// `g ln sum exp(v / g)` computed around the maximum; exact for one candidate.
fn smooth_max(values: &[f64], gamma: f64) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if values.len() == 1 {
        return max;
    }
    let s: f64 = values.iter().map(|v| ((v - max) / gamma).exp()).sum();
    max + gamma * s.ln()
}

fn smooth_weights(values: &[f64], gamma: f64, out: &mut Vec<f64>) {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    out.clear();
    out.extend(values.iter().map(|v| ((v - max) / gamma).exp()));
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= s);
}

fn forward(m: &SimilarityMatrix, gamma: f64) -> Table {
    let n = m.rows();
    let mut t = Table::new(n);
    let first = t.idx(0, 0, 1);
    t.sums[first] = m.get(0, 0);
    let mut candidates = Vec::with_capacity(3);
    for i in 0..n {
        for j in 0..n {
            if i == 0 && j == 0 {
                continue;
            }
            let cell = m.get(i, j);
            for len in Table::len_range(i, j) {
                candidates.clear();
                candidates.extend(
                    predecessors(i, j)
                        .map(|(pi, pj)| t.get(pi, pj, len - 1))
                        .filter(|s| s.is_finite()),
                );
                if candidates.is_empty() {
                    continue;
                }
                let sum = if gamma == 0.0 {
                    candidates.iter().copied().fold(f64::NEG_INFINITY, f64::max) + cell
                } else {
                    let lf = len as f64;
                    candidates.iter_mut().for_each(|s| *s = (*s + cell) / lf);
                    lf * smooth_max(&candidates, gamma)
                };
                let k = t.idx(i, j, len);
                t.sums[k] = sum;
            }
        }
    }
    t
}

fn final_scores(t: &Table) -> Vec<f64> {
    let last = t.n - 1;
    Table::len_range(last, last)
        .map(|len| t.get(last, last, len) / len as f64)
        .collect()
}

fn check(m: &SimilarityMatrix, gamma: f64) -> Result<()> {
    if !m.is_square() {
        return Err(Error::ShapeMismatch(format!(
            "dtw needs a square matrix, got {}x{}",
            m.rows(),
            m.cols()
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "dtw gamma must be >= 0, got {gamma}"
        )));
    }
    Ok(())
}

/// Best mean similarity over monotone paths (`gamma = 0`) or its smooth
/// relaxation (`gamma > 0`).
pub fn match_dtw(m: &SimilarityMatrix, gamma: f64) -> Result<f64> {
    check(m, gamma)?;
    let t = forward(m, gamma);
    let finals = final_scores(&t);
    Ok(if gamma == 0.0 {
        finals.into_iter().fold(f64::NEG_INFINITY, f64::max)
    } else {
        smooth_max(&finals, gamma)
    })
}

/// Soft value and its gradient with respect to every matrix cell.
pub(crate) fn match_dtw_grad(m: &SimilarityMatrix, gamma: f64) -> Result<(f64, Vec<f64>)> {
    check(m, gamma)?;
    if gamma == 0.0 {
        return Err(Error::NonDifferentiable(
            "dtw gradients need gamma > 0".into(),
        ));
    }
    let n = m.rows();
    let t = forward(m, gamma);
    let finals = final_scores(&t);
    let value = smooth_max(&finals, gamma);

    let mut adj = vec![0.0; t.sums.len()];
    let mut weights = Vec::with_capacity(3);
    smooth_weights(&finals, gamma, &mut weights);
    let last = n - 1;
    for (len, w) in Table::len_range(last, last).zip(&weights) {
        adj[t.idx(last, last, len)] = w / len as f64;
    }

    let mut grad = vec![0.0; n * n];
    let mut candidates = Vec::with_capacity(3);
    let mut preds = Vec::with_capacity(3);
    for i in (0..n).rev() {
        for j in (0..n).rev() {
            if i == 0 && j == 0 {
                grad[0] += adj[t.idx(0, 0, 1)];
                continue;
            }
            let cell = m.get(i, j);
            for len in Table::len_range(i, j) {
                let a = adj[t.idx(i, j, len)];
                if a == 0.0 || !t.get(i, j, len).is_finite() {
                    continue;
                }
                // d sum / d cell = sum of weights = 1
                grad[i * n + j] += a;
                preds.clear();
                candidates.clear();
                for (pi, pj) in predecessors(i, j) {
                    let s = t.get(pi, pj, len - 1);
                    if s.is_finite() {
                        preds.push(t.idx(pi, pj, len - 1));
                        candidates.push((s + cell) / len as f64);
                    }
                }
                smooth_weights(&candidates, gamma, &mut weights);
                for (&p, w) in preds.iter().zip(&weights) {
                    adj[p] += a * w;
                }
            }
        }
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn m(rows: &[Vec<f64>]) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(rows).unwrap()
    }

    fn random(n: usize, rng: &mut SeedStream) -> SimilarityMatrix {
        SimilarityMatrix::new(n, n, (0..n * n).map(|_| rng.symmetric(1.0)).collect()).unwrap()
    }

    #[test]
    fn single_cell() {
        assert_eq!(match_dtw(&m(&[vec![0.7]]), 0.0).unwrap(), 0.7);
        assert_eq!(match_dtw(&m(&[vec![0.7]]), 0.5).unwrap(), 0.7);
    }

    #[test]
    fn two_by_two_paths() {
        assert_eq!(
            match_dtw(&m(&[vec![1.0, 0.0], vec![0.0, 1.0]]), 0.0).unwrap(),
            1.0
        );
        assert_eq!(
            match_dtw(&m(&[vec![0.0, 1.0], vec![1.0, 0.0]]), 0.0).unwrap(),
            1.0 / 3.0
        );
    }

    #[test]
    fn rejects_non_square_and_negative_gamma() {
        assert!(match_dtw(&m(&[vec![1.0, 0.0]]), 0.0).is_err());
        assert!(match_dtw(&m(&[vec![1.0]]), -1.0).is_err());
        assert!(match_dtw_grad(&m(&[vec![1.0]]), 0.0).is_err());
    }

    #[test]
    fn soft_gap_shrinks_with_gamma() {
        let mut rng = SeedStream::new(31);
        for _ in 0..20 {
            let mat = random(5, &mut rng);
            let hard = match_dtw(&mat, 0.0).unwrap();
            let gaps: Vec<f64> = [1.0, 0.1, 0.01]
                .iter()
                .map(|&g| (match_dtw(&mat, g).unwrap() - hard).abs())
                .collect();
            assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2], "{gaps:?}");
            assert!(gaps[2] < 0.05);
        }
    }

    #[test]
    fn soft_grad_matches_finite_differences() {
        let mut rng = SeedStream::new(8);
        for n in 1..6 {
            let mat = random(n, &mut rng);
            let (_, g) = match_dtw_grad(&mat, 0.3).unwrap();
            for k in 0..n * n {
                let h = 1e-6;
                let mut p = mat.values().to_vec();
                p[k] += h;
                let mut q = mat.values().to_vec();
                q[k] -= h;
                let fp = match_dtw(&SimilarityMatrix::new(n, n, p).unwrap(), 0.3).unwrap();
                let fm = match_dtw(&SimilarityMatrix::new(n, n, q).unwrap(), 0.3).unwrap();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7, "n={n} k={k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn soft_grad_sums_to_one() {
        // every path's score is a mean, so shifting all cells by c shifts the value by c
        let mut rng = SeedStream::new(4);
        let (_, g) = match_dtw_grad(&random(4, &mut rng), 0.2).unwrap();
        assert!((g.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
