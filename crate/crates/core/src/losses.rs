//! The training objective: onset cross entropy, weighted frame cross
//! entropy, and the squared velocity error, each with analytic gradients.
//!
//! Losses are per-example sums over all (pitch, frame) cells; batching and
//! averaging are the caller's concern. The total is onset + frame; the
//! velocity term trains its own stack and is reported separately.

use crate::labels::LabelSet;
use crate::types::{BinaryRoll, Posteriorgram};
use ndarray::Array2;
use serde::Serialize;
use thiserror::Error;

/// Probabilities are clamped into `[EPSILON, 1 - EPSILON]` before the log.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("shape mismatch: labels {labels:?} vs predictions {predictions:?}")]
    ShapeMismatch {
        labels: (usize, usize),
        predictions: (usize, usize),
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub onset: f64,
    pub frame: f64,
    pub velocity: f64,
}

/// Binary cross entropy `-(y ln p + (1-y) ln(1-p))` with `p` clamped.
pub fn cross_entropy(y: u8, p: f64) -> f64 {
    let p = p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// d(cross_entropy)/dp. Zero inside the clamped region, where the loss is
/// locally constant in `p`.
fn cross_entropy_grad(y: u8, p: f64) -> f64 {
    if !(PROB_EPSILON..=1.0 - PROB_EPSILON).contains(&p) {
        return 0.0;
    }
    if y == 1 {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

fn check_shapes(labels: (usize, usize), predictions: (usize, usize)) -> Result<(), LossError> {
    if labels != predictions {
        Err(LossError::ShapeMismatch {
            labels,
            predictions,
        })
    } else {
        Ok(())
    }
}

/// Sum of cross entropies between the onset roll and onset probabilities.
pub fn onset_loss(labels: &BinaryRoll, predictions: &Posteriorgram) -> Result<f64, LossError> {
    check_shapes(labels.values().dim(), predictions.values().dim())?;
    Ok(labels
        .values()
        .iter()
        .zip(predictions.values())
        .map(|(&y, &p)| cross_entropy(y, p))
        .sum())
}

pub fn onset_loss_gradient(
    labels: &BinaryRoll,
    predictions: &Posteriorgram,
) -> Result<Array2<f64>, LossError> {
    check_shapes(labels.values().dim(), predictions.values().dim())?;
    let mut grad = Array2::zeros(predictions.values().dim());
    for ((idx, &y), &p) in labels
        .values()
        .indexed_iter()
        .zip(predictions.values().iter())
    {
        grad[idx] = cross_entropy_grad(y, p);
    }
    Ok(grad)
}

/// Frame cross entropy with the per-cell weight matrix applied.
///
/// All-ones weights reduce this to the plain frame loss.
pub fn weighted_frame_loss(
    labels: &BinaryRoll,
    predictions: &Posteriorgram,
    weights: &Array2<f64>,
) -> Result<f64, LossError> {
    check_shapes(labels.values().dim(), predictions.values().dim())?;
    check_shapes(labels.values().dim(), weights.dim())?;
    Ok(labels
        .values()
        .indexed_iter()
        .map(|(idx, &y)| weights[idx] * cross_entropy(y, predictions.values()[idx]))
        .sum())
}

pub fn weighted_frame_loss_gradient(
    labels: &BinaryRoll,
    predictions: &Posteriorgram,
    weights: &Array2<f64>,
) -> Result<Array2<f64>, LossError> {
    check_shapes(labels.values().dim(), predictions.values().dim())?;
    check_shapes(labels.values().dim(), weights.dim())?;
    let mut grad = Array2::zeros(predictions.values().dim());
    for (idx, &y) in labels.values().indexed_iter() {
        grad[idx] = weights[idx] * cross_entropy_grad(y, predictions.values()[idx]);
    }
    Ok(grad)
}

/// Squared velocity error summed over onset-labeled cells only; predictions
/// outside the onset mask never contribute.
pub fn velocity_loss(
    onsets: &BinaryRoll,
    v_label: &Array2<f64>,
    v_pred: &Array2<f64>,
) -> Result<f64, LossError> {
    check_shapes(onsets.values().dim(), v_label.dim())?;
    check_shapes(onsets.values().dim(), v_pred.dim())?;
    Ok(onsets
        .values()
        .indexed_iter()
        .filter(|&(_, &mask)| mask == 1)
        .map(|(idx, _)| {
            let d = v_label[idx] - v_pred[idx];
            d * d
        })
        .sum())
}

pub fn velocity_loss_gradient(
    onsets: &BinaryRoll,
    v_label: &Array2<f64>,
    v_pred: &Array2<f64>,
) -> Result<Array2<f64>, LossError> {
    check_shapes(onsets.values().dim(), v_label.dim())?;
    check_shapes(onsets.values().dim(), v_pred.dim())?;
    let mut grad = Array2::zeros(v_pred.dim());
    for (idx, &mask) in onsets.values().indexed_iter() {
        if mask == 1 {
            grad[idx] = 2.0 * (v_pred[idx] - v_label[idx]);
        }
    }
    Ok(grad)
}

/// Assembles the full breakdown; `total = onset + frame`.
pub fn total_loss(
    labels: &LabelSet,
    p_onset: &Posteriorgram,
    p_frame: &Posteriorgram,
    v_pred: &Array2<f64>,
) -> Result<LossBreakdown, LossError> {
    let onset = onset_loss(&labels.onsets, p_onset)?;
    let frame = weighted_frame_loss(&labels.frames, p_frame, &labels.weights)?;
    let velocity = velocity_loss(&labels.onsets, &labels.velocities, v_pred)?;
    Ok(LossBreakdown {
        total: onset + frame,
        onset,
        frame,
        velocity,
    })
}
