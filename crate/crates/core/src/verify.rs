//! Self-contained oracle suite behind `fewmatch check`.
//!
//! Every check compares the library against a slow, obviously correct
//! reference: double loops for Chamfer, mean and max, exhaustive path
//! enumeration for DTW, central differences for gradients, and clip
//! permutations for the order (in)variance of each matcher.

use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::matchers::{
    match_chamfer, match_dtw, match_simple, Aggregation, ChamferVariant, MatcherKind, MatcherSpec,
    SimilarityMatrix, SimpleKind,
};
use crate::projection::{init_projection, ProjectionParams};
use crate::rng::SeedStream;
use crate::scorer::{predict, score_episode};
use crate::store::{Episode, FeatureSet, Query};
use crate::trainer::{finite_diff_check, TrainState};

/// Matcher whose output the fault injector negates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultTarget {
    ChamferQ,
    ChamferS,
    ChamferQs,
    Mean,
    Max,
    Dtw,
}

impl FaultTarget {
    pub const ALL: [FaultTarget; 6] = [
        FaultTarget::ChamferQ,
        FaultTarget::ChamferS,
        FaultTarget::ChamferQs,
        FaultTarget::Mean,
        FaultTarget::Max,
        FaultTarget::Dtw,
    ];

    /// Seeded choice of the matcher to corrupt.
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = SeedStream::new(seed);
        Self::ALL[rng.below(Self::ALL.len() as u64) as usize]
    }

    pub fn name(self) -> &'static str {
        match self {
            FaultTarget::ChamferQ => "chamfer_q",
            FaultTarget::ChamferS => "chamfer_s",
            FaultTarget::ChamferQs => "chamfer_qs",
            FaultTarget::Mean => "mean",
            FaultTarget::Max => "max",
            FaultTarget::Dtw => "dtw",
        }
    }
}

#[derive(Debug, Clone)]
pub struct VerifyConfig {
    pub seed: u64,
    pub chamfer_matrices: usize,
    pub dtw_matrices: usize,
    pub dtw_max_n: usize,
    pub grad_episodes: usize,
    pub permutation_episodes: usize,
    pub fault: Option<FaultTarget>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            chamfer_matrices: 1000,
            dtw_matrices: 200,
            dtw_max_n: 5,
            grad_episodes: 10,
            permutation_episodes: 100,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub tested: usize,
    pub unit: &'static str,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{}\t{} {}\t{}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.tested,
            self.unit,
            self.detail
        )
    }
}

struct Subject {
    fault: Option<FaultTarget>,
}

impl Subject {
    fn sign(&self, target: FaultTarget) -> f64 {
        if self.fault == Some(target) {
            -1.0
        } else {
            1.0
        }
    }

    fn chamfer(&self, variant: ChamferVariant, m: &SimilarityMatrix) -> f64 {
        let target = match variant {
            ChamferVariant::Q => FaultTarget::ChamferQ,
            ChamferVariant::S => FaultTarget::ChamferS,
            ChamferVariant::Qs => FaultTarget::ChamferQs,
        };
        self.sign(target) * match_chamfer(variant, m)
    }

    fn simple(&self, kind: SimpleKind, m: &SimilarityMatrix) -> Result<f64> {
        let target = match kind {
            SimpleKind::Max => FaultTarget::Max,
            _ => FaultTarget::Mean,
        };
        Ok(self.sign(target) * match_simple(kind, m)?)
    }

    fn dtw(&self, m: &SimilarityMatrix) -> Result<f64> {
        Ok(self.sign(FaultTarget::Dtw) * match_dtw(m, 0.0)?)
    }
}

fn random_matrix(rng: &mut SeedStream, rows: usize, cols: usize) -> SimilarityMatrix {
    let values = (0..rows * cols).map(|_| rng.symmetric(1.0)).collect();
    SimilarityMatrix::new(rows, cols, values).expect("nonempty")
}

/// `(1/rows) sum_i max_j m_ij` by plain loops.
pub fn naive_chamfer_q(m: &SimilarityMatrix) -> f64 {
    let mut total = 0.0;
    for i in 0..m.rows() {
        let mut best = f64::NEG_INFINITY;
        for j in 0..m.cols() {
            best = best.max(m.get(i, j));
        }
        total += best;
    }
    total / m.rows() as f64
}

pub fn naive_chamfer_s(m: &SimilarityMatrix) -> f64 {
    naive_chamfer_q(&m.transpose())
}

/// Best mean similarity over every monotone path, by depth-first enumeration.
/// Returns the value and the number of paths visited.
pub fn enumerate_dtw(m: &SimilarityMatrix) -> (f64, usize) {
    fn walk(
        m: &SimilarityMatrix,
        i: usize,
        j: usize,
        sum: f64,
        len: usize,
        best: &mut f64,
        count: &mut usize,
    ) {
        let n = m.rows();
        if i == n - 1 && j == n - 1 {
            *count += 1;
            *best = best.max(sum / len as f64);
            return;
        }
        if i + 1 < n {
            walk(m, i + 1, j, sum + m.get(i + 1, j), len + 1, best, count);
        }
        if j + 1 < n {
            walk(m, i, j + 1, sum + m.get(i, j + 1), len + 1, best, count);
        }
        if i + 1 < n && j + 1 < n {
            walk(
                m,
                i + 1,
                j + 1,
                sum + m.get(i + 1, j + 1),
                len + 1,
                best,
                count,
            );
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut count = 0;
    walk(m, 0, 0, m.get(0, 0), 1, &mut best, &mut count);
    (best, count)
}

fn chamfer_check(cfg: &VerifyConfig, subject: &Subject) -> Vec<CheckOutcome> {
    let mut rng = SeedStream::new(cfg.seed ^ 0x01);
    let variants = [
        (ChamferVariant::Q, "chamfer_q"),
        (ChamferVariant::S, "chamfer_s"),
        (ChamferVariant::Qs, "chamfer_qs"),
    ];
    let mut worst = [0.0f64; 3];
    for _ in 0..cfg.chamfer_matrices {
        let rows = 1 + rng.below(8) as usize;
        let cols = 1 + rng.below(8) as usize;
        let m = random_matrix(&mut rng, rows, cols);
        let q = naive_chamfer_q(&m);
        let s = naive_chamfer_s(&m);
        for (k, (variant, _)) in variants.iter().enumerate() {
            let expected = match variant {
                ChamferVariant::Q => q,
                ChamferVariant::S => s,
                ChamferVariant::Qs => q + s,
            };
            worst[k] = worst[k].max((subject.chamfer(*variant, &m) - expected).abs());
        }
    }
    variants
        .iter()
        .zip(worst)
        .map(|((_, name), err)| CheckOutcome {
            name: format!("chamfer_oracle[{name}]"),
            passed: err <= 1e-12,
            tested: cfg.chamfer_matrices,
            unit: "matrices",
            detail: format!("max_abs_err={err:.3e}"),
        })
        .collect()
}

fn simple_check(cfg: &VerifyConfig, subject: &Subject) -> Result<Vec<CheckOutcome>> {
    let mut rng = SeedStream::new(cfg.seed ^ 0x02);
    let mut worst = [0.0f64; 2];
    for _ in 0..cfg.chamfer_matrices {
        let rows = 1 + rng.below(8) as usize;
        let cols = 1 + rng.below(8) as usize;
        let m = random_matrix(&mut rng, rows, cols);
        let mut sum = 0.0;
        let mut max = f64::NEG_INFINITY;
        for i in 0..rows {
            for j in 0..cols {
                sum += m.get(i, j);
                max = max.max(m.get(i, j));
            }
        }
        let mean = sum / (rows * cols) as f64;
        worst[0] = worst[0].max((subject.simple(SimpleKind::Mean, &m)? - mean).abs());
        worst[1] = worst[1].max((subject.simple(SimpleKind::Max, &m)? - max).abs());
    }
    Ok(["mean", "max"]
        .iter()
        .zip(worst)
        .map(|(name, err)| CheckOutcome {
            name: format!("simple_oracle[{name}]"),
            passed: err <= 1e-12,
            tested: cfg.chamfer_matrices,
            unit: "matrices",
            detail: format!("max_abs_err={err:.3e}"),
        })
        .collect())
}

fn dtw_check(cfg: &VerifyConfig, subject: &Subject) -> Result<CheckOutcome> {
    let mut rng = SeedStream::new(cfg.seed ^ 0x03);
    let mut paths = 0;
    let mut mismatches = 0;
    for k in 0..cfg.dtw_matrices {
        let n = 1 + k % cfg.dtw_max_n.max(1);
        let m = random_matrix(&mut rng, n, n);
        let (best, count) = enumerate_dtw(&m);
        paths += count;
        if subject.dtw(&m)? != best {
            mismatches += 1;
        }
    }
    Ok(CheckOutcome {
        name: "dtw_enumeration".into(),
        passed: mismatches == 0,
        tested: paths,
        unit: "paths",
        detail: format!("matrices={} mismatches={mismatches}", cfg.dtw_matrices),
    })
}

fn random_video(rng: &mut SeedStream, id: String, n: usize, d: usize) -> Arc<FeatureSet> {
    let data = (0..n * d).map(|_| rng.normal() as f32).collect();
    Arc::new(FeatureSet::new(id, n, d, data).expect("finite"))
}

/// Random episode with one query per class.
pub fn random_episode(
    rng: &mut SeedStream,
    way: usize,
    shot: usize,
    n: usize,
    d: usize,
) -> Episode {
    let support = (0..way)
        .map(|c| {
            (0..shot)
                .map(|s| random_video(rng, format!("s{c}_{s}"), n, d))
                .collect()
        })
        .collect();
    let queries = (0..way)
        .map(|c| Query {
            features: random_video(rng, format!("q{c}"), n, d),
            class: c,
        })
        .collect();
    Episode::new(
        0,
        (0..way).map(|c| format!("c{c}")).collect(),
        support,
        queries,
    )
    .expect("valid shape")
}

fn grad_check(cfg: &VerifyConfig) -> Result<CheckOutcome> {
    let mut rng = SeedStream::new(cfg.seed ^ 0x04);
    let specs = [
        MatcherSpec::new(MatcherKind::ChamferQs),
        MatcherSpec::new(MatcherKind::ChamferQs).with_aggregation(Aggregation::Joint),
        MatcherSpec::new(MatcherKind::Mean),
        MatcherSpec::new(MatcherKind::Max),
        MatcherSpec::new(MatcherKind::Diag),
        MatcherSpec::new(MatcherKind::Linear),
        MatcherSpec::new(MatcherKind::Dtw),
        MatcherSpec::chamfer_plus_plus(2),
    ];
    let mut parameters = 0;
    let mut skipped = 0;
    let mut excluded = 0;
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..cfg.grad_episodes {
        let spec = &specs[k % specs.len()];
        let episode = random_episode(&mut rng, 3, 2, 3, 4);
        let mut params = init_projection(4 * spec.tuple_len, 5, rng.next_u64())?;
        params
            .gain
            .iter_mut()
            .for_each(|g| *g = 1.0 + rng.symmetric(0.3));
        params.bias.iter_mut().for_each(|b| *b = rng.symmetric(0.3));
        let state = TrainState::new(params, spec, 10.0, 3, 0)?;
        let report = finite_diff_check(&state, &episode, spec, 1e-6, 1e-5)?;
        excluded += report.tie_excluded as usize;
        for b in &report.blocks {
            parameters += b.checked;
            skipped += b.skipped;
            worst = worst.max(b.max_rel_error);
            if !b.passed {
                failures.push(format!("{}:{}", spec.kind, b.name));
            }
        }
    }
    Ok(CheckOutcome {
        name: "gradient_check".into(),
        passed: failures.is_empty(),
        tested: parameters,
        unit: "parameters",
        detail: format!(
            "episodes={} tie_excluded={excluded} skipped={skipped} max_rel_err={worst:.3e}{}",
            cfg.grad_episodes,
            if failures.is_empty() {
                String::new()
            } else {
                format!(" failing={}", failures.join(","))
            }
        ),
    })
}

fn reversed(fs: &FeatureSet) -> FeatureSet {
    let order: Vec<usize> = (0..fs.n()).rev().collect();
    fs.permuted(&order).expect("valid order")
}

fn permute_episode(episode: &Episode, rng: &mut SeedStream) -> Episode {
    let mut shuffle = |fs: &Arc<FeatureSet>| {
        let mut order: Vec<usize> = (0..fs.n()).collect();
        rng.shuffle(&mut order);
        Arc::new(fs.permuted(&order).expect("valid order"))
    };
    let support = episode
        .support
        .iter()
        .map(|shots| shots.iter().map(&mut shuffle).collect())
        .collect();
    let queries = episode
        .queries
        .iter()
        .map(|q| Query {
            features: shuffle(&q.features),
            class: q.class,
        })
        .collect();
    Episode::new(
        episode.episode_id,
        episode.class_labels.clone(),
        support,
        queries,
    )
    .expect("same shape")
}

/// Two classes holding the same orthogonal clips in opposite orders, and a
/// query equal to the first class.
pub fn order_witness(n: usize) -> Episode {
    let clips: Vec<Vec<f32>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let forward = Arc::new(FeatureSet::from_clips("forward", &clips).expect("finite"));
    let backward = Arc::new(reversed(&forward).with_video_id("backward"));
    Episode::new(
        0,
        vec!["forward".into(), "backward".into()],
        vec![vec![forward.clone()], vec![backward.clone()]],
        vec![
            Query {
                features: forward,
                class: 0,
            },
            Query {
                features: backward,
                class: 1,
            },
        ],
    )
    .expect("valid witness")
}

fn permutation_check(cfg: &VerifyConfig, subject: &Subject) -> Result<Vec<CheckOutcome>> {
    let mut rng = SeedStream::new(cfg.seed ^ 0x05);
    let identity = ProjectionParams::identity(5);
    let invariant = [
        MatcherKind::Mean,
        MatcherKind::Max,
        MatcherKind::ChamferQ,
        MatcherKind::ChamferS,
        MatcherKind::ChamferQs,
    ];
    let mut violations = 0;
    let mut compared = 0;
    for _ in 0..cfg.permutation_episodes {
        let episode = random_episode(&mut rng, 3, 2, 4, 5);
        let shuffled = permute_episode(&episode, &mut rng);
        for kind in invariant {
            let spec = MatcherSpec::new(kind);
            let a = score_episode(&episode, &spec, &identity)?;
            let b = score_episode(&shuffled, &spec, &identity)?;
            compared += 1;
            let same = a.iter().zip(&b).all(|(x, y)| {
                x.0.iter()
                    .zip(&y.0)
                    .all(|(u, v)| u.to_bits() == v.to_bits())
            });
            if !same {
                violations += 1;
            }
        }
    }
    let mut out = vec![CheckOutcome {
        name: "permutation_invariance".into(),
        passed: violations == 0,
        tested: compared,
        unit: "episode-matcher pairs",
        detail: format!("violations={violations}"),
    }];

    // temporal matchers must see the reversal
    let witness = order_witness(4);
    let forward = &witness.support[0][0];
    let backward = &witness.support[1][0];
    let identity = ProjectionParams::identity(4);
    let m_same = crate::matchers::similarity_matrix(
        &project_all(forward, &identity)?,
        &project_all(forward, &identity)?,
    )?;
    let m_rev = crate::matchers::similarity_matrix(
        &project_all(forward, &identity)?,
        &project_all(backward, &identity)?,
    )?;
    let diag_changes =
        match_simple(SimpleKind::Diag, &m_same)? != match_simple(SimpleKind::Diag, &m_rev)?;
    let dtw_changes = subject.dtw(&m_same)? != subject.dtw(&m_rev)?;
    let chamfer_same =
        subject.chamfer(ChamferVariant::Qs, &m_same) == subject.chamfer(ChamferVariant::Qs, &m_rev);
    out.push(CheckOutcome {
        name: "temporal_witness".into(),
        passed: diag_changes && dtw_changes && chamfer_same,
        tested: 3,
        unit: "matchers",
        detail: format!("diag_changes={diag_changes} dtw_changes={dtw_changes} chamfer_unchanged={chamfer_same}"),
    });

    let plus = MatcherSpec::chamfer_plus_plus(2);
    let predictions = score_episode(&witness, &plus, &ProjectionParams::identity(8))?
        .iter()
        .map(predict)
        .collect::<Result<Vec<_>>>()?;
    out.push(CheckOutcome {
        name: "tuple_witness".into(),
        passed: predictions == [0, 1],
        tested: 2,
        unit: "queries",
        detail: format!("chamfer++ predictions={predictions:?}"),
    });
    Ok(out)
}

fn project_all(fs: &FeatureSet, params: &ProjectionParams) -> Result<Vec<Vec<f64>>> {
    fs.clips()
        .map(|c| params.project(&c.iter().map(|&v| v as f64).collect::<Vec<_>>()))
        .collect()
}

/// Runs every check. Failures are reported, not raised; errors mean the
/// suite itself could not run.
pub fn run_suite(cfg: &VerifyConfig) -> Result<Vec<CheckOutcome>> {
    let subject = Subject { fault: cfg.fault };
    let mut out = chamfer_check(cfg, &subject);
    out.extend(simple_check(cfg, &subject)?);
    out.push(dtw_check(cfg, &subject)?);
    out.push(grad_check(cfg)?);
    out.extend(permutation_check(cfg, &subject)?);
    Ok(out)
}
