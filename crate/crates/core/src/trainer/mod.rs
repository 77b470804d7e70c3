//! Episodic training of the projection head, the temperature and the linear
//! matcher weights with plain SGD and early stopping on validation episodes.

mod gradcheck;
mod loss;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub use gradcheck::{finite_diff_check, finite_diff_check_against, BlockReport, GradCheckReport};
pub use loss::{episode_loss, Grads};

use crate::error::{Error, Result};
use crate::matchers::{default_linear_weights, MatcherKind, MatcherSpec};
use crate::projection::ProjectionParams;
use crate::rng::SeedStream;
use crate::scorer::evaluate;
use crate::store::{build_fixed_test_episodes, sample_episode, Dataset, Split};

/// Seed offset separating the validation episode stream from the training stream.
pub const VAL_SEED_OFFSET: u64 = 0x5eed_0000_0000_0001;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub tau_init: f64,
    pub episodes_per_epoch: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub way: usize,
    pub shot: usize,
    pub queries_per_class: usize,
    pub val_episodes: usize,
    /// Evaluation workers for the validation pass.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            tau_init: 10.0,
            episodes_per_epoch: 200,
            max_epochs: 20,
            patience: 3,
            seed: 0,
            way: 5,
            shot: 1,
            queries_per_class: 1,
            val_episodes: 200,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig("learning rate must be > 0".into()));
        }
        if !(self.tau_init > 0.0 && self.tau_init.is_finite()) {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.queries_per_class == 0 {
            return Err(Error::InvalidConfig(
                "training needs >= 1 query per class".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ProjectionParams,
    /// `tau = exp(log_tau)` stays positive under any update.
    pub log_tau: f64,
    pub linear_weights: Option<Vec<f64>>,
    pub epoch: u64,
    pub best_val_accuracy: f64,
    pub best_epoch: u64,
    pub rng: SeedStream,
}

impl TrainState {
    /// Fresh state; the linear matcher starts at the uniform (mean) weights.
    pub fn new(
        params: ProjectionParams,
        spec: &MatcherSpec,
        tau: f64,
        n: usize,
        seed: u64,
    ) -> Result<Self> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(Error::InvalidConfig("temperature must be > 0".into()));
        }
        let linear_weights = match spec.kind {
            MatcherKind::Linear => Some(match &spec.linear_weights {
                Some(w) => w.clone(),
                None => default_linear_weights(spec.tuple_count(n)?),
            }),
            _ => None,
        };
        Ok(Self {
            params,
            log_tau: tau.ln(),
            linear_weights,
            epoch: 0,
            best_val_accuracy: f64::NEG_INFINITY,
            best_epoch: 0,
            rng: SeedStream::new(seed),
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// `spec` with this state's linear weights substituted.
    pub fn effective_spec(&self, spec: &MatcherSpec) -> MatcherSpec {
        let mut spec = spec.clone();
        if spec.kind == MatcherKind::Linear {
            if let Some(w) = &self.linear_weights {
                spec.linear_weights = Some(w.clone());
            }
        }
        spec
    }

    pub fn trainable_count(&self) -> usize {
        self.params.trainable_count() + 1 + self.linear_weights.as_ref().map_or(0, Vec::len)
    }

    /// Projection checkpoint followed by `u64` epoch, `f64` tau and a
    /// `u32`-counted list of `f64` linear weights.
    pub fn encode_checkpoint(&self) -> Vec<u8> {
        let mut out = self.params.encode();
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.tau().to_le_bytes());
        let linear = self.linear_weights.as_deref().unwrap_or(&[]);
        out.extend_from_slice(&(linear.len() as u32).to_le_bytes());
        for w in linear {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_checkpoint()).map_err(|e| Error::io(path, e))
    }
}

/// Contents of a training checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ProjectionParams,
    pub epoch: u64,
    pub tau: f64,
    pub linear_weights: Option<Vec<f64>>,
}

impl Checkpoint {
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let (params, mut at) = ProjectionParams::decode(bytes)?;
        let take = |at: &mut usize, len: usize| -> Result<&[u8]> {
            let end = *at + len;
            if bytes.len() < end {
                return Err(Error::TruncatedPayload {
                    expected: end,
                    found: bytes.len(),
                });
            }
            let slice = &bytes[*at..end];
            *at = end;
            Ok(slice)
        };
        let epoch = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        let tau = f64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        // older checkpoints may end right after tau
        let linear_weights = if at == bytes.len() {
            None
        } else {
            let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
            let raw = take(&mut at, 8 * count)?;
            (count > 0).then(|| {
                raw.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect()
            })
        };
        Ok(Self {
            params,
            epoch,
            tau,
            linear_weights,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Matcher spec carrying the trained linear weights, if any.
    pub fn apply_to(&self, spec: &MatcherSpec) -> MatcherSpec {
        let mut spec = spec.clone();
        if spec.kind == MatcherKind::Linear && self.linear_weights.is_some() {
            spec.linear_weights = self.linear_weights.clone();
        }
        spec
    }
}

/// One SGD step `t <- t - lr * dloss/dt` on every trainable.
pub fn train_step(
    state: &TrainState,
    episode: &crate::store::Episode,
    spec: &MatcherSpec,
    lr: f64,
) -> Result<(TrainState, f64)> {
    let (loss, grads) = episode_loss(episode, spec, state)?;
    let mut next = state.clone();
    next.params.apply_update(&grads.projection, lr);
    next.log_tau -= lr * grads.log_tau;
    if let (Some(w), Some(g)) = (next.linear_weights.as_mut(), grads.linear.as_ref()) {
        for (a, b) in w.iter_mut().zip(g) {
            *a -= lr * b;
        }
    }
    Ok((next, loss))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: u64,
    pub mean_train_loss: f64,
    pub val_accuracy: f64,
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("epoch\tmean_train_loss\tval_accuracy\ttau\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}",
                e.epoch, e.mean_train_loss, e.val_accuracy, e.tau
            );
        }
        out
    }
}

/// Trains from `init` and returns the state with the best validation accuracy.
///
/// Each epoch draws `episodes_per_epoch` training episodes from the state's
/// stream, then scores a fixed validation set. Training stops after
/// `patience` consecutive epochs without a strict improvement, or at
/// `max_epochs`.
pub fn train(
    config: &TrainConfig,
    dataset: &Dataset,
    spec: &MatcherSpec,
    init: TrainState,
) -> Result<(TrainState, TrainLog)> {
    config.validate()?;
    check_trainable_spec(spec)?;
    for split in [Split::Train, Split::Val] {
        if !dataset.has_split(split) {
            return Err(Error::Empty(match split {
                Split::Train => "training split required",
                _ => "validation split required",
            }));
        }
    }
    let val = build_fixed_test_episodes(
        dataset,
        Split::Val,
        config.way,
        config.shot,
        config.queries_per_class,
        config.val_episodes,
        config.seed.wrapping_add(VAL_SEED_OFFSET),
    )?;

    let mut state = init;
    let mut best = state.clone();
    let mut log = TrainLog::default();
    let mut stale = 0;
    for _ in 0..config.max_epochs {
        let mut total = 0.0;
        for i in 0..config.episodes_per_epoch {
            let mut rng = state.rng.clone();
            let episode = sample_episode(
                dataset,
                Split::Train,
                config.way,
                config.shot,
                config.queries_per_class,
                &mut rng,
                i as u64,
            )?;
            let (mut next, loss) = train_step(&state, &episode, spec, config.lr)?;
            next.rng = rng;
            state = next;
            total += loss;
        }
        state.epoch += 1;
        let val_spec = state.effective_spec(spec);
        let accuracy = evaluate(&val, &val_spec, &state.params, config.workers)?.mean_accuracy();
        log.epochs.push(EpochLog {
            epoch: state.epoch,
            mean_train_loss: if config.episodes_per_epoch == 0 {
                0.0
            } else {
                total / config.episodes_per_epoch as f64
            },
            val_accuracy: accuracy,
            tau: state.tau(),
        });
        if accuracy > state.best_val_accuracy {
            state.best_val_accuracy = accuracy;
            state.best_epoch = state.epoch;
            best = state.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    best.best_val_accuracy = state.best_val_accuracy;
    best.best_epoch = state.best_epoch;
    Ok((best, log))
}

fn check_trainable_spec(spec: &MatcherSpec) -> Result<()> {
    loss::check_differentiable(spec)
}
