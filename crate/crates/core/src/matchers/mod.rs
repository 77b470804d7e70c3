//! Temporal similarity matrices and matching functions.
//!
//! A matching function reduces a similarity matrix to one video-to-video
//! score. Non-temporal functions (mean, max, Chamfer) only see each
//! row/column's multiset of values, so they are invariant to the clip order
//! of either video; temporal ones (diag, linear, dtw) depend on positions.

mod dtw;
mod functions;
mod matrix;
mod tuples;

use std::fmt;
use std::str::FromStr;

pub use dtw::match_dtw;
pub use functions::{
    col_argmax, match_chamfer, match_linear, match_simple, row_argmax, ChamferVariant, SimpleKind,
};
pub use matrix::{joint_matrix, similarity_matrix, SimilarityMatrix};
pub use tuples::{enumerate_tuples, project_tuples, tuple_similarity_matrix, TupleMode};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MatcherKind {
    Mean,
    Max,
    Diag,
    Linear,
    ChamferQ,
    ChamferS,
    ChamferQs,
    Dtw,
}

impl MatcherKind {
    pub const ALL: [MatcherKind; 8] = [
        MatcherKind::Mean,
        MatcherKind::Max,
        MatcherKind::Diag,
        MatcherKind::Linear,
        MatcherKind::ChamferQ,
        MatcherKind::ChamferS,
        MatcherKind::ChamferQs,
        MatcherKind::Dtw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MatcherKind::Mean => "mean",
            MatcherKind::Max => "max",
            MatcherKind::Diag => "diag",
            MatcherKind::Linear => "linear",
            MatcherKind::ChamferQ => "chamfer_q",
            MatcherKind::ChamferS => "chamfer_s",
            MatcherKind::ChamferQs => "chamfer_qs",
            MatcherKind::Dtw => "dtw",
        }
    }

    /// Whether the score depends on where values sit in the matrix.
    pub fn is_temporal(self) -> bool {
        matches!(
            self,
            MatcherKind::Diag | MatcherKind::Linear | MatcherKind::Dtw
        )
    }

    /// Kinds only defined on square matrices; their joint form averages the
    /// per-shot blocks.
    pub fn requires_square(self) -> bool {
        self.is_temporal()
    }
}

impl fmt::Display for MatcherKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MatcherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MatcherKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown matcher {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregation {
    /// Class score is the mean over shots of the per-shot scores.
    SingleAverage,
    /// Class score is the matcher applied to the concatenated shot matrices.
    Joint,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" | "single_average" => Ok(Aggregation::SingleAverage),
            "joint" => Ok(Aggregation::Joint),
            other => Err(Error::InvalidConfig(format!(
                "unknown aggregation {other:?}"
            ))),
        }
    }
}

impl FromStr for TupleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordered" => Ok(TupleMode::Ordered),
            "all" => Ok(TupleMode::All),
            other => Err(Error::InvalidConfig(format!(
                "unknown tuple mode {other:?}"
            ))),
        }
    }
}

pub const DEFAULT_DTW_GAMMA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct MatcherSpec {
    pub kind: MatcherKind,
    pub tuple_len: usize,
    pub tuple_mode: TupleMode,
    pub aggregation: Aggregation,
    /// Smoothing used by the training loss; evaluation always aligns with the
    /// hard maximum.
    pub dtw_gamma: f64,
    /// Row-major `n' x n'` weights of the linear matcher. `None` means the
    /// uniform `1 / n'^2` initialization, which makes linear equal to mean.
    pub linear_weights: Option<Vec<f64>>,
}

impl MatcherSpec {
    pub fn new(kind: MatcherKind) -> Self {
        Self {
            kind,
            tuple_len: 1,
            tuple_mode: TupleMode::Ordered,
            aggregation: Aggregation::SingleAverage,
            dtw_gamma: DEFAULT_DTW_GAMMA,
            linear_weights: None,
        }
    }

    /// Symmetric Chamfer on jointly matched shots with ordered clip tuples.
    pub fn chamfer_plus_plus(tuple_len: usize) -> Self {
        Self {
            tuple_len,
            aggregation: Aggregation::Joint,
            ..Self::new(MatcherKind::ChamferQs)
        }
    }

    pub fn with_tuples(mut self, len: usize, mode: TupleMode) -> Self {
        self.tuple_len = len;
        self.tuple_mode = mode;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.tuple_len == 0 {
            return Err(Error::InvalidConfig("tuple length must be >= 1".into()));
        }
        if !(self.dtw_gamma >= 0.0 && self.dtw_gamma.is_finite()) {
            return Err(Error::InvalidConfig("dtw gamma must be >= 0".into()));
        }
        if self.linear_weights.is_some() && self.kind != MatcherKind::Linear {
            return Err(Error::InvalidConfig(
                "linear weights given for a non-linear matcher".into(),
            ));
        }
        Ok(())
    }

    /// Number of tuples per video for clip count `n`.
    pub fn tuple_count(&self, n: usize) -> Result<usize> {
        Ok(enumerate_tuples(n, self.tuple_len, self.tuple_mode)?.len())
    }

    pub fn linear_weights_for(&self, side: usize) -> Result<Vec<f64>> {
        match &self.linear_weights {
            Some(w) if w.len() == side * side => Ok(w.clone()),
            Some(w) => Err(Error::ShapeMismatch(format!(
                "linear weights have {} entries, need {side}x{side}",
                w.len()
            ))),
            None => Ok(default_linear_weights(side)),
        }
    }
}

pub fn default_linear_weights(side: usize) -> Vec<f64> {
    vec![1.0 / (side * side) as f64; side * side]
}

/// Scores one matrix; dtw uses the hard path maximum.
pub fn score_matrix(spec: &MatcherSpec, m: &SimilarityMatrix) -> Result<f64> {
    match spec.kind {
        MatcherKind::Mean => match_simple(SimpleKind::Mean, m),
        MatcherKind::Max => match_simple(SimpleKind::Max, m),
        MatcherKind::Diag => match_simple(SimpleKind::Diag, m),
        MatcherKind::Linear => match_linear(&spec.linear_weights_for(m.rows())?, m),
        MatcherKind::ChamferQ => Ok(match_chamfer(ChamferVariant::Q, m)),
        MatcherKind::ChamferS => Ok(match_chamfer(ChamferVariant::S, m)),
        MatcherKind::ChamferQs => Ok(match_chamfer(ChamferVariant::Qs, m)),
        MatcherKind::Dtw => match_dtw(m, 0.0),
    }
}

/// Training-path score of one matrix and its gradient in `m`; dtw uses the
/// soft maximum with `spec.dtw_gamma`.
pub(crate) fn score_matrix_grad(
    spec: &MatcherSpec,
    m: &SimilarityMatrix,
) -> Result<(f64, Vec<f64>)> {
    match spec.kind {
        MatcherKind::Mean => functions::match_simple_grad(SimpleKind::Mean, m),
        MatcherKind::Max => functions::match_simple_grad(SimpleKind::Max, m),
        MatcherKind::Diag => functions::match_simple_grad(SimpleKind::Diag, m),
        MatcherKind::Linear => {
            let w = spec.linear_weights_for(m.rows())?;
            Ok((match_linear(&w, m)?, w))
        }
        MatcherKind::ChamferQ => Ok(functions::match_chamfer_grad(ChamferVariant::Q, m)),
        MatcherKind::ChamferS => Ok(functions::match_chamfer_grad(ChamferVariant::S, m)),
        MatcherKind::ChamferQs => Ok(functions::match_chamfer_grad(ChamferVariant::Qs, m)),
        MatcherKind::Dtw => dtw::match_dtw_grad(m, spec.dtw_gamma),
    }
}

/// Query-to-class score from the per-shot similarity matrices of one class.
pub fn class_score(spec: &MatcherSpec, shots: &[SimilarityMatrix]) -> Result<f64> {
    if shots.is_empty() {
        return Err(Error::Empty("class without shots"));
    }
    match spec.aggregation {
        Aggregation::Joint if !spec.kind.requires_square() => {
            score_matrix(spec, &joint_matrix(shots)?)
        }
        _ => {
            let mut total = 0.0;
            for m in shots {
                total += score_matrix(spec, m)?;
            }
            Ok(total / shots.len() as f64)
        }
    }
}

/// Gradient of a class score.
pub(crate) struct ClassGrad {
    pub value: f64,
    /// One gradient per shot matrix, row-major.
    pub shots: Vec<Vec<f64>>,
    /// Gradient in the linear matcher weights.
    pub linear: Option<Vec<f64>>,
}

pub(crate) fn class_score_grad(
    spec: &MatcherSpec,
    shots: &[SimilarityMatrix],
) -> Result<ClassGrad> {
    if shots.is_empty() {
        return Err(Error::Empty("class without shots"));
    }
    let k = shots.len() as f64;
    match spec.aggregation {
        Aggregation::Joint if !spec.kind.requires_square() => {
            let joint = joint_matrix(shots)?;
            let (value, g) = score_matrix_grad(spec, &joint)?;
            let mut per_shot = Vec::with_capacity(shots.len());
            let mut offset = 0;
            for m in shots {
                let mut block = Vec::with_capacity(m.values().len());
                for i in 0..m.rows() {
                    let start = i * joint.cols() + offset;
                    block.extend_from_slice(&g[start..start + m.cols()]);
                }
                offset += m.cols();
                per_shot.push(block);
            }
            Ok(ClassGrad {
                value,
                shots: per_shot,
                linear: None,
            })
        }
        _ => {
            let mut value = 0.0;
            let mut per_shot = Vec::with_capacity(shots.len());
            let mut linear =
                (spec.kind == MatcherKind::Linear).then(|| vec![0.0; shots[0].values().len()]);
            for m in shots {
                let (v, g) = score_matrix_grad(spec, m)?;
                value += v;
                per_shot.push(g.into_iter().map(|x| x / k).collect());
                if let Some(lw) = linear.as_mut() {
                    if lw.len() != m.values().len() {
                        return Err(Error::ShapeMismatch("shot matrices differ in shape".into()));
                    }
                    for (a, b) in lw.iter_mut().zip(m.values()) {
                        *a += b / k;
                    }
                }
            }
            Ok(ClassGrad {
                value: value / k,
                shots: per_shot,
                linear,
            })
        }
    }
}

/// Smallest gap between the selected maximum and the runner-up over every
/// max the matcher takes; infinite for matchers without hard selections.
/// Finite differences are only meaningful when the perturbation stays below it.
pub(crate) fn class_selection_margin(
    spec: &MatcherSpec,
    shots: &[SimilarityMatrix],
) -> Result<f64> {
    let joint;
    let mats: &[SimilarityMatrix] = match spec.aggregation {
        Aggregation::Joint if !spec.kind.requires_square() => {
            joint = [joint_matrix(shots)?];
            &joint
        }
        _ => shots,
    };
    let gap = |values: &mut dyn Iterator<Item = f64>| {
        let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for v in values {
            if v > a {
                b = a;
                a = v;
            } else if v > b {
                b = v;
            }
        }
        a - b
    };
    let mut margin = f64::INFINITY;
    for m in mats {
        let rows = matches!(spec.kind, MatcherKind::ChamferQ | MatcherKind::ChamferQs);
        let cols = matches!(spec.kind, MatcherKind::ChamferS | MatcherKind::ChamferQs);
        if spec.kind == MatcherKind::Max {
            margin = margin.min(gap(&mut m.values().iter().copied()));
        }
        if rows {
            for i in 0..m.rows() {
                margin = margin.min(gap(&mut m.row(i).iter().copied()));
            }
        }
        if cols {
            for j in 0..m.cols() {
                margin = margin.min(gap(&mut (0..m.rows()).map(|i| m.get(i, j))));
            }
        }
    }
    Ok(margin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;

    fn random(rows: usize, cols: usize, rng: &mut SeedStream) -> SimilarityMatrix {
        SimilarityMatrix::new(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.symmetric(1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in MatcherKind::ALL {
            assert_eq!(k.as_str().parse::<MatcherKind>().unwrap(), k);
        }
        assert!("chamfer".parse::<MatcherKind>().is_err());
    }

    #[test]
    fn untrained_linear_equals_mean() {
        let mut rng = SeedStream::new(3);
        let m = random(4, 4, &mut rng);
        let lin = score_matrix(&MatcherSpec::new(MatcherKind::Linear), &m).unwrap();
        let mean = score_matrix(&MatcherSpec::new(MatcherKind::Mean), &m).unwrap();
        assert!((lin - mean).abs() < 1e-15);
    }

    #[test]
    fn one_shot_joint_equals_single() {
        let mut rng = SeedStream::new(5);
        let m = random(4, 4, &mut rng);
        for kind in MatcherKind::ALL {
            let single = MatcherSpec::new(kind);
            let joint = single.clone().with_aggregation(Aggregation::Joint);
            assert_eq!(
                class_score(&single, std::slice::from_ref(&m)).unwrap(),
                class_score(&joint, std::slice::from_ref(&m)).unwrap(),
                "{kind}"
            );
        }
    }

    #[test]
    fn joint_chamfer_q_dominates_average() {
        let mut rng = SeedStream::new(6);
        let spec = MatcherSpec::new(MatcherKind::ChamferQ);
        let joint = spec.clone().with_aggregation(Aggregation::Joint);
        for _ in 0..100 {
            let shots: Vec<_> = (0..5).map(|_| random(4, 4, &mut rng)).collect();
            assert!(class_score(&joint, &shots).unwrap() >= class_score(&spec, &shots).unwrap());
        }
    }

    #[test]
    fn class_grad_matches_finite_differences() {
        let mut rng = SeedStream::new(12);
        for kind in MatcherKind::ALL {
            for aggregation in [Aggregation::SingleAverage, Aggregation::Joint] {
                let spec = MatcherSpec {
                    dtw_gamma: 0.2,
                    ..MatcherSpec::new(kind).with_aggregation(aggregation)
                };
                let shots: Vec<_> = (0..3).map(|_| random(3, 3, &mut rng)).collect();
                let g = class_score_grad(&spec, &shots).unwrap();
                let value_of = |shots: &[SimilarityMatrix]| {
                    if kind == MatcherKind::Dtw {
                        // soft value is the differentiated quantity
                        shots
                            .iter()
                            .map(|m| match_dtw(m, 0.2).unwrap())
                            .sum::<f64>()
                            / 3.0
                    } else {
                        class_score(&spec, shots).unwrap()
                    }
                };
                assert!((value_of(&shots) - g.value).abs() < 1e-12);
                for s in 0..3 {
                    for c in 0..9 {
                        let h = 1e-7;
                        let bump = |delta: f64| {
                            let mut v = shots.clone();
                            let mut vals = v[s].values().to_vec();
                            vals[c] += delta;
                            v[s] = SimilarityMatrix::new(3, 3, vals).unwrap();
                            value_of(&v)
                        };
                        let fd = (bump(h) - bump(-h)) / (2.0 * h);
                        assert!(
                            (fd - g.shots[s][c]).abs() < 1e-6,
                            "{kind} {aggregation:?} shot {s} cell {c}: {fd} vs {}",
                            g.shots[s][c]
                        );
                    }
                }
            }
        }
    }
}
