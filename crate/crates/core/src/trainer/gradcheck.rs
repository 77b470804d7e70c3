//! Central finite-difference check of every trainable partial of the episode loss.

use crate::error::Result;
use crate::matchers::MatcherSpec;
use crate::store::Episode;

use super::loss::{evaluate_loss, Grads};
use super::TrainState;

/// Max matchers whose nearest tie is closer than this are not checked.
pub const TIE_EXCLUSION: f64 = 1e-7;
/// Denominator floor of the relative error, so partials that are zero
/// analytically are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockReport {
    pub name: &'static str,
    pub checked: usize,
    /// Partials whose perturbation moved a max selection and were not compared.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    /// Set when the episode sits within `TIE_EXCLUSION` of a max tie.
    pub tie_excluded: bool,
    pub blocks: Vec<BlockReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.blocks.iter().all(|b| b.passed)
    }

    pub fn block(&self, name: &str) -> Option<&BlockReport> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn checked(&self) -> usize {
        self.blocks.iter().map(|b| b.checked).sum()
    }
}

pub(crate) fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

pub fn finite_diff_check(
    state: &TrainState,
    episode: &Episode,
    spec: &MatcherSpec,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let grads = evaluate_loss(episode, spec, state)?.grads;
    finite_diff_check_against(state, episode, spec, step, tolerance, &grads)
}

/// Compares `analytic` (normally the output of `episode_loss`) against
/// central differences of the loss at `state`.
pub fn finite_diff_check_against(
    state: &TrainState,
    episode: &Episode,
    spec: &MatcherSpec,
    step: f64,
    tolerance: f64,
    analytic: &Grads,
) -> Result<GradCheckReport> {
    let base = evaluate_loss(episode, spec, state)?;
    let mut report = GradCheckReport {
        tolerance,
        tie_excluded: base.margin < TIE_EXCLUSION,
        blocks: Vec::new(),
    };
    if report.tie_excluded {
        return Ok(report);
    }

    let mut blocks: Vec<(&'static str, Vec<f64>)> = Vec::new();
    if !state.params.is_identity() {
        blocks.push(("weight", analytic.projection.weight.clone()));
        if state.params.affine {
            blocks.push(("gain", analytic.projection.gain.clone()));
            blocks.push(("bias", analytic.projection.bias.clone()));
        }
    }
    blocks.push(("tau", vec![analytic.log_tau]));
    if let (Some(_), Some(g)) = (&state.linear_weights, &analytic.linear) {
        blocks.push(("linear", g.clone()));
    }

    for (name, values) in blocks {
        let mut block = BlockReport {
            name,
            checked: 0,
            skipped: 0,
            max_rel_error: 0.0,
            passed: true,
        };
        for (k, &a) in values.iter().enumerate() {
            let plus = evaluate_loss(episode, spec, &perturbed(state, name, k, step))?;
            let minus = evaluate_loss(episode, spec, &perturbed(state, name, k, -step))?;
            if plus.selection != base.selection || minus.selection != base.selection {
                block.skipped += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * step);
            block.checked += 1;
            block.max_rel_error = block.max_rel_error.max(rel_error(a, numeric));
        }
        block.passed = block.max_rel_error <= tolerance;
        report.blocks.push(block);
    }
    Ok(report)
}

fn perturbed(state: &TrainState, block: &str, k: usize, delta: f64) -> TrainState {
    let mut s = state.clone();
    match block {
        "weight" => s.params.weight[k] += delta,
        "gain" => s.params.gain[k] += delta,
        "bias" => s.params.bias[k] += delta,
        "tau" => s.log_tau += delta,
        "linear" => s.linear_weights.as_mut().expect("linear block")[k] += delta,
        _ => unreachable!("unknown block {block}"),
    }
    s
}
