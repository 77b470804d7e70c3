//! Class scores, predictions and episode-level evaluation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matchers::{
    class_score, enumerate_tuples, project_tuples, similarity_matrix, MatcherSpec,
};
use crate::parallel::map_slots;
use crate::projection::ProjectionParams;
use crate::store::{Episode, FeatureSet};

/// One score per episode class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores(pub Vec<f64>);

impl ClassScores {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Index of the best class; ties go to the smallest index.
pub fn predict(scores: &ClassScores) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Empty("class scores"));
    }
    let mut best = 0;
    for (c, &s) in scores.0.iter().enumerate().skip(1) {
        if s > scores.0[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Projected tuples of every support video, `[class][shot][tuple]`.
pub(crate) struct ProjectedSupport {
    pub tuples: Vec<Vec<usize>>,
    pub videos: Vec<Vec<Vec<Vec<f64>>>>,
}

pub(crate) fn project_support(
    episode: &Episode,
    spec: &MatcherSpec,
    params: &ProjectionParams,
) -> Result<ProjectedSupport> {
    spec.validate()?;
    let tuples = enumerate_tuples(episode.n(), spec.tuple_len, spec.tuple_mode)?;
    let videos = episode
        .support
        .iter()
        .map(|shots| {
            shots
                .iter()
                .map(|fs| project_tuples(fs, &tuples, params))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectedSupport { tuples, videos })
}

fn score_projected(
    query: &FeatureSet,
    support: &ProjectedSupport,
    spec: &MatcherSpec,
    params: &ProjectionParams,
) -> Result<ClassScores> {
    let q = project_tuples(query, &support.tuples, params)?;
    let scores = support
        .videos
        .iter()
        .map(|shots| {
            let mats = shots
                .iter()
                .map(|x| similarity_matrix(&q, x))
                .collect::<Result<Vec<_>>>()?;
            class_score(spec, &mats)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ClassScores(scores))
}

/// Score of `query` against every class of `episode`.
pub fn score_query(
    query: &FeatureSet,
    episode: &Episode,
    spec: &MatcherSpec,
    params: &ProjectionParams,
) -> Result<ClassScores> {
    let support = project_support(episode, spec, params)?;
    score_projected(query, &support, spec, params)
}

/// Scores for every query of an episode, projecting each support once.
pub fn score_episode(
    episode: &Episode,
    spec: &MatcherSpec,
    params: &ProjectionParams,
) -> Result<Vec<ClassScores>> {
    let support = project_support(episode, spec, params)?;
    episode
        .queries
        .iter()
        .map(|q| score_projected(&q.features, &support, spec, params))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub true_class: usize,
    pub predicted: usize,
    pub scores: ClassScores,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub episode_id: u64,
    pub queries: Vec<QueryOutcome>,
}

impl EpisodeResult {
    pub fn from_scores(episode: &Episode, scores: Vec<ClassScores>) -> Result<Self> {
        if scores.len() != episode.queries.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} score vectors for {} queries",
                scores.len(),
                episode.queries.len()
            )));
        }
        let queries = episode
            .queries
            .iter()
            .zip(scores)
            .map(|(q, s)| {
                if s.len() != episode.way() {
                    return Err(Error::ShapeMismatch(format!(
                        "{} class scores for a {}-way episode",
                        s.len(),
                        episode.way()
                    )));
                }
                Ok(QueryOutcome {
                    true_class: q.class,
                    predicted: predict(&s)?,
                    scores: s,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            episode_id: episode.episode_id,
            queries,
        })
    }

    pub fn correct(&self) -> usize {
        self.queries
            .iter()
            .filter(|q| q.predicted == q.true_class)
            .count()
    }

    /// Fraction of correctly classified queries (0 for an episode without queries).
    pub fn accuracy(&self) -> f64 {
        if self.queries.is_empty() {
            0.0
        } else {
            self.correct() as f64 / self.queries.len() as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub results: Vec<EpisodeResult>,
}

impl Evaluation {
    pub fn total_queries(&self) -> usize {
        self.results.iter().map(|r| r.queries.len()).sum()
    }

    pub fn total_correct(&self) -> usize {
        self.results.iter().map(EpisodeResult::correct).sum()
    }

    /// Mean per-query correctness over all episodes.
    pub fn mean_accuracy(&self) -> f64 {
        let total = self.total_queries();
        if total == 0 {
            0.0
        } else {
            self.total_correct() as f64 / total as f64
        }
    }

    /// Half-width of the 95% normal-approximation interval of the accuracy.
    pub fn ci95(&self) -> f64 {
        let total = self.total_queries() as f64;
        if total == 0.0 {
            return 0.0;
        }
        let p = self.mean_accuracy();
        1.96 * (p * (1.0 - p) / total).sqrt()
    }

    /// Tab-separated results: one row per query, then a summary comment line.
    pub fn to_tsv(&self, method: &str) -> String {
        let way = self
            .results
            .iter()
            .flat_map(|r| r.queries.first())
            .map(|q| q.scores.len())
            .next()
            .unwrap_or(0);
        let mut out = String::from("episode_id\tquery_index\ttrue_class\tpredicted_class");
        for c in 0..way {
            let _ = write!(out, "\tscore_{c}");
        }
        out.push('\n');
        for r in &self.results {
            for (i, q) in r.queries.iter().enumerate() {
                let _ = write!(
                    out,
                    "{}\t{}\t{}\t{}",
                    r.episode_id, i, q.true_class, q.predicted
                );
                for s in &q.scores.0 {
                    let _ = write!(out, "\t{s}");
                }
                out.push('\n');
            }
        }
        let _ = writeln!(
            out,
            "# summary\tmethod={method}\tepisodes={}\tqueries={}\tmean_accuracy={:.6}\tci95={:.6}",
            self.results.len(),
            self.total_queries(),
            self.mean_accuracy(),
            self.ci95()
        );
        out
    }
}

/// Runs `score` on every episode, `workers` at a time, keeping input order.
pub fn evaluate_with<F>(episodes: &[Episode], workers: usize, score: F) -> Result<Evaluation>
where
    F: Fn(&Episode) -> Result<Vec<ClassScores>> + Sync + Send,
{
    let results = map_slots(episodes, workers, |e| {
        score(e).and_then(|s| EpisodeResult::from_scores(e, s))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation { results })
}

/// Evaluates a matcher on a fixed list of episodes.
pub fn evaluate(
    episodes: &[Episode],
    spec: &MatcherSpec,
    params: &ProjectionParams,
    workers: usize,
) -> Result<Evaluation> {
    if let Some(first) = episodes.first() {
        let shape = (first.n(), first.d());
        if let Some(bad) = episodes.iter().find(|e| (e.n(), e.d()) != shape) {
            return Err(Error::ShapeMismatch(format!(
                "episode {} is {}x{}, expected {}x{}",
                bad.episode_id,
                bad.n(),
                bad.d(),
                shape.0,
                shape.1
            )));
        }
    }
    evaluate_with(episodes, workers, |e| score_episode(e, spec, params))
}
