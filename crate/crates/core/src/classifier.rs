//! Per-episode linear classifier baseline.
//!
//! A fresh softmax classifier is fit on the support clips of each episode,
//! every clip labelled with its video's class, and a query is scored by
//! summing the per-clip class probabilities.

use crate::error::{Error, Result};
use crate::rng::SeedStream;
use crate::scorer::ClassScores;
use crate::store::{Episode, FeatureSet};

pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_LR: f64 = 0.01;

/// Mixed into the episode id to seed the clip order.
const SHUFFLE_SALT: u64 = 0xc1a5_5f1e_0000_0000;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeClassifier {
    pub way: usize,
    pub d: usize,
    /// Row-major `way x d`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EpisodeClassifier {
    pub fn zeros(way: usize, d: usize) -> Self {
        Self {
            way,
            d,
            weights: vec![0.0; way * d],
            bias: vec![0.0; way],
        }
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.way)
            .map(|c| {
                let row = &self.weights[c * self.d..(c + 1) * self.d];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c]
            })
            .collect()
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, &g)) in params.iter_mut().zip(grads).enumerate() {
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

fn clip_f64(fs: &FeatureSet, i: usize) -> Vec<f64> {
    fs.clip(i).iter().map(|&v| v as f64).collect()
}

/// Fits a zero-initialized classifier with Adam, one step per support clip,
/// visiting the clips in a fresh seeded order every epoch.
pub fn fit_episode_classifier(
    episode: &Episode,
    epochs: usize,
    lr: f64,
) -> Result<EpisodeClassifier> {
    fit_with_seed(episode, epochs, lr, episode.episode_id ^ SHUFFLE_SALT)
}

pub fn fit_with_seed(
    episode: &Episode,
    epochs: usize,
    lr: f64,
    seed: u64,
) -> Result<EpisodeClassifier> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be >= 0, got {lr}"
        )));
    }
    let way = episode.way();
    let d = episode.d();
    let mut samples: Vec<(Vec<f64>, usize)> = Vec::new();
    for (c, shots) in episode.support.iter().enumerate() {
        for fs in shots {
            for i in 0..fs.n() {
                samples.push((clip_f64(fs, i), c));
            }
        }
    }

    let mut h = EpisodeClassifier::zeros(way, d);
    let mut params = vec![0.0; way * d + way];
    let mut adam = Adam::new(params.len(), lr);
    let mut grads = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = SeedStream::new(seed);
    for _ in 0..epochs {
        rng.shuffle(&mut order);
        for &k in &order {
            let (x, y) = &samples[k];
            let p = h.probabilities(x);
            for c in 0..way {
                let delta = p[c] - if c == *y { 1.0 } else { 0.0 };
                for (g, v) in grads[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *g = delta * v;
                }
                grads[way * d + c] = delta;
            }
            adam.step(&mut params, &grads);
            h.weights.copy_from_slice(&params[..way * d]);
            h.bias.copy_from_slice(&params[way * d..]);
        }
    }
    Ok(h)
}

/// Sum over the query's clips of the per-clip class probabilities.
pub fn classify_query(h: &EpisodeClassifier, query: &FeatureSet) -> Result<ClassScores> {
    if query.d() != h.d {
        return Err(Error::DimensionMismatch {
            expected: h.d,
            got: query.d(),
        });
    }
    let mut scores = vec![0.0; h.way];
    for i in 0..query.n() {
        for (s, p) in scores.iter_mut().zip(h.probabilities(&clip_f64(query, i))) {
            *s += p;
        }
    }
    Ok(ClassScores(scores))
}

/// Scores of every query of `episode` under a classifier fit on its support.
pub fn score_episode_classifier(
    episode: &Episode,
    epochs: usize,
    lr: f64,
) -> Result<Vec<ClassScores>> {
    let h = fit_episode_classifier(episode, epochs, lr)?;
    episode
        .queries
        .iter()
        .map(|q| classify_query(&h, &q.features))
        .collect()
}
