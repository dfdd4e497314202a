use serde::{Deserialize, Serialize};

use super::detector::log_softmax;
use crate::error::{Error, Result};

/// Loss components for one student step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Supervised classification loss on source objects.
    pub l_sup: f64,
    /// Hard cross-entropy on reliable pseudo-labels.
    pub l_unsup_hard: f64,
    /// Soft cross-entropy against teacher distributions on unreliable ones.
    pub l_unsup_soft: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossReport {
    pub fn new(l_sup: f64, l_unsup_hard: f64, l_unsup_soft: f64, lambda: f64) -> Self {
        Self {
            l_sup,
            l_unsup_hard,
            l_unsup_soft,
            lambda,
            total: total_loss(l_sup, l_unsup_hard, l_unsup_soft, lambda),
        }
    }
}

pub fn total_loss(l_sup: f64, l_unsup_hard: f64, l_unsup_soft: f64, lambda: f64) -> f64 {
    l_sup + lambda * (l_unsup_hard + l_unsup_soft)
}

/// Mean `−log softmax(z)[y]`; zero for an empty batch.
pub fn hard_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (z, &y) in logits.iter().zip(labels) {
        let lp = log_softmax(z);
        sum -= lp
            .get(y)
            .ok_or_else(|| Error::dim(format!("label {y} outside {} classes", z.len())))?;
    }
    Ok(sum / logits.len() as f64)
}

/// Mean `−Σ_c q_c · log softmax(z)_c`; zero for an empty batch.
pub fn soft_cross_entropy(logits: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if logits.len() != targets.len() {
        return Err(Error::dim(format!(
            "{} logit rows for {} target distributions",
            logits.len(),
            targets.len()
        )));
    }
    if logits.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for (z, q) in logits.iter().zip(targets) {
        if z.len() != q.len() {
            return Err(Error::dim("target distribution and logits differ in length"));
        }
        sum -= log_softmax(z)
            .iter()
            .zip(q)
            .map(|(lp, qc)| if *qc > 0.0 { qc * lp } else { 0.0 })
            .sum::<f64>();
    }
    Ok(sum / logits.len() as f64)
}

/// `(hard, soft)`: hard cross-entropy of student logits against reliable
/// pseudo-label classes, soft cross-entropy against teacher distributions on
/// unreliable items.
pub fn classification_losses(
    reliable_logits: &[Vec<f64>],
    reliable_labels: &[usize],
    unreliable_logits: &[Vec<f64>],
    teacher_probs: &[Vec<f64>],
) -> Result<(f64, f64)> {
    Ok((
        hard_cross_entropy(reliable_logits, reliable_labels)?,
        soft_cross_entropy(unreliable_logits, teacher_probs)?,
    ))
}
