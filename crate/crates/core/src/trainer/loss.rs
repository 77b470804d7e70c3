//! Cross-entropy over temperature-scaled class scores and its gradient,
//! accumulated backwards through the matcher and the projection head.

use crate::error::{Error, Result};
use crate::matchers::{
    class_score_grad, class_selection_margin, similarity_matrix, MatcherKind, MatcherSpec,
};
use crate::projection::{concat_tuple, dot, ProjectionGrads};
use crate::scorer::project_support;
use crate::store::Episode;

use super::TrainState;

/// Gradients of the episode loss in every trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub projection: ProjectionGrads,
    /// Gradient in `log tau`; the temperature is trained in log space.
    pub log_tau: f64,
    pub linear: Option<Vec<f64>>,
}

pub(crate) struct LossEval {
    pub loss: f64,
    pub grads: Grads,
    /// Hash of the matrix cells selected by every max in the forward pass.
    pub selection: u64,
    /// Distance of the nearest max to a tie.
    pub margin: f64,
}

/// `log(sum(exp(z)))` and `softmax(z)`.
pub(crate) fn log_softmax_parts(z: &[f64]) -> (f64, Vec<f64>) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (max + sum.ln(), exps.into_iter().map(|e| e / sum).collect())
}

fn fnv(hash: u64, value: u64) -> u64 {
    value.to_le_bytes().iter().fold(hash, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(crate) fn check_differentiable(spec: &MatcherSpec) -> Result<()> {
    spec.validate()?;
    if spec.kind == MatcherKind::Dtw && spec.dtw_gamma == 0.0 {
        return Err(Error::NonDifferentiable(
            "dtw with gamma = 0 has no training gradient; set dtw_gamma > 0".into(),
        ));
    }
    Ok(())
}

pub(crate) fn evaluate_loss(
    episode: &Episode,
    spec: &MatcherSpec,
    state: &TrainState,
) -> Result<LossEval> {
    check_differentiable(spec)?;
    let spec = state.effective_spec(spec);
    let params = &state.params;
    let tau = state.tau();
    let support = project_support(episode, &spec, params)?;
    let tuples = &support.tuples;

    let mut proj_grads = ProjectionGrads::zeros_like(params);
    let mut linear = (spec.kind == MatcherKind::Linear).then(|| {
        let side = tuples.len();
        vec![0.0; side * side]
    });
    let mut d_support: Vec<Vec<Vec<Vec<f64>>>> = support
        .videos
        .iter()
        .map(|shots| {
            shots
                .iter()
                .map(|v| vec![vec![0.0; params.output_dim()]; v.len()])
                .collect()
        })
        .collect();

    let queries = episode.queries.len();
    if queries == 0 {
        return Err(Error::Empty("episode without queries"));
    }
    let inv_q = 1.0 / queries as f64;
    let mut loss = 0.0;
    let mut log_tau = 0.0;
    let mut selection = 0xcbf2_9ce4_8422_2325u64;
    let mut margin = f64::INFINITY;

    for query in &episode.queries {
        let inputs = tuples
            .iter()
            .map(|t| concat_tuple(&query.features, t))
            .collect::<Result<Vec<_>>>()?;
        let q = inputs
            .iter()
            .map(|x| params.project(x))
            .collect::<Result<Vec<_>>>()?;

        let mut scores = Vec::with_capacity(episode.way());
        let mut class_grads = Vec::with_capacity(episode.way());
        for shots in &support.videos {
            let mats = shots
                .iter()
                .map(|x| similarity_matrix(&q, x))
                .collect::<Result<Vec<_>>>()?;
            margin = margin.min(class_selection_margin(&spec, &mats)?);
            let g = class_score_grad(&spec, &mats)?;
            scores.push(g.value);
            class_grads.push(g);
        }

        let logits: Vec<f64> = scores.iter().map(|s| tau * s).collect();
        let (lse, probs) = log_softmax_parts(&logits);
        loss += (lse - logits[query.class]) * inv_q;

        let mut dq = vec![vec![0.0; params.output_dim()]; q.len()];
        for (c, g) in class_grads.iter().enumerate() {
            let target = if c == query.class { 1.0 } else { 0.0 };
            let d_logit = (probs[c] - target) * inv_q;
            log_tau += d_logit * tau * scores[c];
            let d_score = d_logit * tau;
            if let (Some(acc), Some(lg)) = (linear.as_mut(), g.linear.as_ref()) {
                for (a, v) in acc.iter_mut().zip(lg) {
                    *a += d_score * v;
                }
            }
            for (s, dm) in g.shots.iter().enumerate() {
                let x = &support.videos[c][s];
                let cols = x.len();
                for (t, qt) in q.iter().enumerate() {
                    for (u, xu) in x.iter().enumerate() {
                        let w = dm[t * cols + u];
                        if w == 0.0 {
                            continue;
                        }
                        selection = fnv(selection, ((c * 64 + s) * 4096 + t * 64 + u) as u64);
                        let w = w * d_score;
                        for (a, b) in dq[t].iter_mut().zip(xu) {
                            *a += w * b;
                        }
                        for (a, b) in d_support[c][s][u].iter_mut().zip(qt) {
                            *a += w * b;
                        }
                    }
                }
            }
        }
        if !params.is_identity() {
            for (x, up) in inputs.iter().zip(&dq) {
                params.accumulate_backward(x, up, &mut proj_grads)?;
            }
        }
    }

    if !params.is_identity() {
        for (shots, d_shots) in episode.support.iter().zip(&d_support) {
            for (video, d_video) in shots.iter().zip(d_shots) {
                for (t, up) in tuples.iter().zip(d_video) {
                    if dot(up, up) == 0.0 {
                        continue;
                    }
                    params.accumulate_backward(&concat_tuple(video, t)?, up, &mut proj_grads)?;
                }
            }
        }
    }

    Ok(LossEval {
        loss,
        grads: Grads {
            projection: proj_grads,
            log_tau,
            linear,
        },
        selection,
        margin,
    })
}

/// Mean over queries of `-log softmax(tau * S)[true class]`, with gradients.
pub fn episode_loss(
    episode: &Episode,
    spec: &MatcherSpec,
    state: &TrainState,
) -> Result<(f64, Grads)> {
    let eval = evaluate_loss(episode, spec, state)?;
    Ok((eval.loss, eval.grads))
}
