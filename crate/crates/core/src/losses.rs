//! Task losses and the two uncertainty objectives.
//!
//! The toolkit trains heads to predict the task loss of a frozen model from
//! its embedding alone. Two objectives are supported: plain L2 regression
//! onto the recorded task loss, and a margin ranking objective that only uses
//! the *order* of two losses and is therefore invariant to their scale. The
//! historical joint objective (task loss plus loss-prediction error) is kept
//! as a reference function; in the decoupled regime there is nothing behind
//! the embeddings for its task term to update, so the trainer refuses it.

use crate::error::{Error, Result};

/// Which objective the trainer optimizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossVariant {
    /// Pairwise hinge on uncertainty order, driven by task-loss comparisons.
    RankingMargin { margin: f32, leeway: f32 },
    /// Squared error between predicted uncertainty and recorded task loss.
    L2Regression,
    /// Reference-only joint objective; rejected by the trainer.
    JointVanilla,
}

/// Default ranking margin.
pub const DEFAULT_MARGIN: f32 = 0.1;

/// Cross-entropy of `logits` against the true `label`.
///
/// Computed via the log-sum-exp trick in double precision, so tiny losses
/// (well-separated logits) keep their value instead of rounding to zero, and
/// adding a constant to all logits leaves the result unchanged. The result is
/// nonnegative for finite logits.
pub fn task_cross_entropy(logits: &[f32], label: usize) -> Result<f32> {
    if logits.is_empty() {
        return Err(Error::invalid("cross-entropy needs at least one logit"));
    }
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let mut max = f64::NEG_INFINITY;
    for &l in logits {
        max = max.max(l as f64);
    }
    // ln(sum exp(l - max)) = ln_1p(sum over non-max terms), which preserves
    // magnitudes down to ~1e-300 where a direct ln(1 + tiny) would truncate.
    let mut rest = 0.0f64;
    let mut max_seen = false;
    for &l in logits {
        let l = l as f64;
        if !max_seen && l == max {
            max_seen = true; // exactly one max term contributes exp(0) = 1
        } else {
            rest += (l - max).exp();
        }
    }
    let log_sum = rest.ln_1p();
    Ok((log_sum - (logits[label] as f64 - max)) as f32)
}

/// Squared loss-prediction error `(u - task_loss)^2`.
pub fn l2_losspred(u: f32, task_loss: f32) -> f32 {
    let d = u - task_loss;
    d * d
}

/// Gradient of [`l2_losspred`] with respect to `u`.
pub fn l2_losspred_grad(u: f32, task_loss: f32) -> f32 {
    2.0 * (u - task_loss)
}

/// Three-way comparison of two task losses under a symmetric leeway band.
///
/// Returns `+1` if `t1 > leeway + t2`, `-1` if `t1 + leeway < t2`, and `0`
/// when the two losses are within `leeway` of each other (with `leeway = 0`
/// exact ties map to `0`, so tied pairs never produce a gradient).
pub fn loss_indicator(t1: f32, t2: f32, leeway: f32) -> i8 {
    if t1 > leeway + t2 {
        1
    } else if t1 + leeway < t2 {
        -1
    } else {
        0
    }
}

/// Margin ranking loss on a pair of predicted uncertainties.
///
/// With `s = loss_indicator(t1, t2, leeway)`, the loss is
/// `max(0, -s * (u1 - u2) + margin)` for `s != 0` and `0` otherwise: whichever
/// sample lost more must be ranked more uncertain by at least the margin.
/// Returns `(loss, grad_u1, grad_u2)`; the subgradient at the hinge kink is
/// taken to be zero, and indifferent pairs (`s = 0`) contribute nothing.
pub fn ranking_loss(
    u1: f32,
    u2: f32,
    t1: f32,
    t2: f32,
    margin: f32,
    leeway: f32,
) -> (f32, f32, f32) {
    let s = loss_indicator(t1, t2, leeway);
    if s == 0 {
        return (0.0, 0.0, 0.0);
    }
    let s_f = s as f32;
    let hinge = -s_f * (u1 - u2) + margin;
    if hinge > 0.0 {
        (hinge, -s_f, s_f)
    } else {
        (0.0, 0.0, 0.0)
    }
}

/// Reference joint objective: task loss plus squared loss-prediction error
/// against a detached copy of the task loss. Documentation of what decoupled
/// pretraining replaces; the trainer rejects it because with cached
/// embeddings the task-loss term has no parameters left to move.
pub fn joint_vanilla_loss(task_loss: f32, u: f32, detached_task_loss: f32) -> f32 {
    task_loss + l2_losspred(u, detached_task_loss)
}
