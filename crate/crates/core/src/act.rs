//! Label-distribution-aware confidence thresholding.
//!
//! Given a class-ratio prior and a budget of objects per image, each class
//! receives a quota of pseudo-labels and its threshold is set at the
//! quota-th highest teacher score. [`dynamic_selection`] grows the budget
//! until the mean confidence of the selected labels drops below a target.

use serde::{Deserialize, Serialize};

use crate::detection::{by_score_desc, DetectionRecord};
use crate::distribution::ClassRatio;
use crate::error::{Error, Result};

/// Threshold value meaning "select nothing for this class". Any value above
/// 1 works because scores never exceed 1.
pub const SENTINEL_NONE: f64 = 2.0;

/// Slack for float representation error at rounding boundaries.
const ROUNDING_SLACK: f64 = 1e-9;

/// Per-class confidence thresholds; selection rule is `score >= t_c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub thresholds: Vec<f64>,
}

impl ThresholdSet {
    pub fn len(&self) -> usize {
        self.thresholds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thresholds.is_empty()
    }

    pub fn is_none(&self, class_id: usize) -> bool {
        self.thresholds.get(class_id).is_none_or(|t| *t > 1.0)
    }

    pub fn selects(&self, d: &DetectionRecord) -> bool {
        self.thresholds.get(d.class_id).is_some_and(|t| d.score >= *t)
    }
}

/// Selected pseudo-labels split into reliable (hard loss) and unreliable
/// (soft loss) parts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelSet {
    pub reliable: Vec<DetectionRecord>,
    pub unreliable: Vec<DetectionRecord>,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.reliable.len() + self.unreliable.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reliable records followed by unreliable ones.
    pub fn iter(&self) -> impl Iterator<Item = &DetectionRecord> {
        self.reliable.iter().chain(&self.unreliable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActConfig {
    /// Target mean confidence of the selected pseudo-labels.
    pub tau: f64,
    /// Increment of the objects-per-image budget.
    pub delta_n_o: f64,
    /// Share of each class's selection treated as reliable.
    pub reliable_fraction: f64,
    /// Upper bound on the budget; `None` means detections per image + delta.
    pub n_o_cap: Option<f64>,
}

impl Default for ActConfig {
    fn default() -> Self {
        Self {
            tau: 0.6,
            delta_n_o: 0.1,
            reliable_fraction: 0.5,
            n_o_cap: None,
        }
    }
}

impl ActConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if !(self.delta_n_o > 0.0 && self.delta_n_o.is_finite()) {
            return Err(Error::invalid(format!(
                "delta_n_o must be positive, got {}",
                self.delta_n_o
            )));
        }
        if !(self.reliable_fraction > 0.0 && self.reliable_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "reliable_fraction must lie in (0, 1], got {}",
                self.reliable_fraction
            )));
        }
        if let Some(cap) = self.n_o_cap {
            if !(cap > 0.0 && cap.is_finite()) {
                return Err(Error::invalid(format!("n_o_cap must be positive, got {cap}")));
            }
        }
        Ok(())
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + ROUNDING_SLACK).floor().max(0.0) as usize
}

/// Expected number of objects per class: `round(ratio_c · n_o · n_u)`, half up.
pub fn expected_counts(ratio: &ClassRatio, n_o: f64, n_u: usize) -> Vec<usize> {
    ratio
        .values()
        .iter()
        .map(|r| round_half_up(r * n_o.max(0.0) * n_u as f64))
        .collect()
}

/// Scores of each class sorted in descending order.
fn class_scores(detections: &[DetectionRecord], n_classes: usize) -> Vec<Vec<f64>> {
    let mut per_class = vec![Vec::new(); n_classes];
    for d in detections {
        if let Some(v) = per_class.get_mut(d.class_id) {
            v.push(d.score);
        }
    }
    for v in &mut per_class {
        v.sort_by(|a, b| by_score_desc(*a, *b));
    }
    per_class
}

/// Threshold for class `c` is its `counts[c]`-th highest score (1-indexed),
/// the lowest score when the quota exceeds what is available, and
/// [`SENTINEL_NONE`] for a zero quota or a class without detections.
pub fn select_thresholds(detections: &[DetectionRecord], counts: &[usize]) -> ThresholdSet {
    let thresholds = class_scores(detections, counts.len())
        .iter()
        .zip(counts)
        .map(|(scores, &k)| match (k, scores.last()) {
            (0, _) | (_, None) => SENTINEL_NONE,
            (k, Some(&lowest)) => scores.get(k - 1).copied().unwrap_or(lowest),
        })
        .collect();
    ThresholdSet { thresholds }
}

/// Indices into `detections` of the (reliable, unreliable) selections.
pub(crate) fn split_indices(
    detections: &[DetectionRecord],
    t: &ThresholdSet,
    reliable_fraction: f64,
) -> (Vec<usize>, Vec<usize>) {
    let mut reliable = Vec::new();
    let mut unreliable = Vec::new();
    for c in 0..t.len() {
        let mut chosen: Vec<usize> = (0..detections.len())
            .filter(|&i| detections[i].class_id == c && t.selects(&detections[i]))
            .collect();
        chosen.sort_by(|&a, &b| by_score_desc(detections[a].score, detections[b].score));
        let n_reliable = ((reliable_fraction * chosen.len() as f64) - ROUNDING_SLACK).ceil();
        let n_reliable = (n_reliable.max(0.0) as usize).min(chosen.len());
        reliable.extend_from_slice(&chosen[..n_reliable]);
        unreliable.extend_from_slice(&chosen[n_reliable..]);
    }
    (reliable, unreliable)
}

/// Selects `score >= t_c` per class and splits each class's selection: the
/// top `ceil(reliable_fraction · selected)` by score are reliable.
pub fn apply_thresholds(
    detections: &[DetectionRecord],
    t: &ThresholdSet,
    reliable_fraction: f64,
) -> PseudoLabelSet {
    let (reliable, unreliable) = split_indices(detections, t, reliable_fraction);
    let pick = |idx: Vec<usize>| idx.into_iter().map(|i| detections[i].clone()).collect();
    PseudoLabelSet {
        reliable: pick(reliable),
        unreliable: pick(unreliable),
    }
}

/// Mean score of all selected labels; 1.0 when nothing is selected.
pub fn mean_confidence(labels: &PseudoLabelSet) -> f64 {
    if labels.is_empty() {
        return 1.0;
    }
    labels.iter().map(|d| d.score).sum::<f64>() / labels.len() as f64
}

/// One full thresholding pass at a fixed objects-per-image budget.
pub fn act(
    detections: &[DetectionRecord],
    ratio: &ClassRatio,
    n_o: f64,
    n_u: usize,
    reliable_fraction: f64,
) -> (ThresholdSet, PseudoLabelSet) {
    let counts = expected_counts(ratio, n_o, n_u);
    let t = select_thresholds(detections, &counts);
    let labels = apply_thresholds(detections, &t, reliable_fraction);
    (t, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActStep {
    pub n_o: f64,
    pub mean_confidence: f64,
}

/// Outcome of the objects-per-image search.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicSelection {
    /// Chosen budget, a multiple of `delta_n_o`.
    pub n_o: f64,
    /// Every budget evaluated, in order.
    pub steps: Vec<ActStep>,
    /// True when the search stopped at the cap rather than at `tau`.
    pub capped: bool,
    pub cap: f64,
}

pub fn auto_cap(n_detections: usize, n_u: usize, delta_n_o: f64) -> f64 {
    n_detections as f64 / n_u as f64 + delta_n_o
}

/// Grows `n_o` in steps of `delta_n_o` from zero, running ACT at each step,
/// and returns the last budget whose mean confidence stayed at or above
/// `tau`. Stops at the largest multiple of `delta_n_o` not exceeding the cap.
pub fn dynamic_selection(
    detections: &[DetectionRecord],
    ratio: &ClassRatio,
    n_u: usize,
    cfg: &ActConfig,
) -> Result<DynamicSelection> {
    cfg.validate()?;
    if n_u == 0 {
        return Err(Error::invalid("n_u must be at least 1"));
    }
    if let Some(d) = detections.iter().find(|d| d.class_id >= ratio.len()) {
        return Err(Error::dim(format!(
            "detection class {} outside the {}-class prior",
            d.class_id,
            ratio.len()
        )));
    }
    let delta = cfg.delta_n_o;
    let cap = cfg
        .n_o_cap
        .unwrap_or_else(|| auto_cap(detections.len(), n_u, delta));
    let max_steps = (cap / delta + ROUNDING_SLACK).floor() as usize;

    let mut steps = Vec::new();
    for k in 1..=max_steps {
        let n_o = k as f64 * delta;
        let (_, labels) = act(detections, ratio, n_o, n_u, cfg.reliable_fraction);
        let mean = mean_confidence(&labels);
        steps.push(ActStep {
            n_o,
            mean_confidence: mean,
        });
        if mean < cfg.tau {
            return Ok(DynamicSelection {
                n_o: (k - 1) as f64 * delta,
                steps,
                capped: false,
                cap,
            });
        }
    }
    Ok(DynamicSelection {
        n_o: max_steps as f64 * delta,
        steps,
        capped: true,
        cap,
    })
}

pub fn dynamic_objects_per_image(
    detections: &[DetectionRecord],
    ratio: &ClassRatio,
    n_u: usize,
    cfg: &ActConfig,
) -> Result<f64> {
    dynamic_selection(detections, ratio, n_u, cfg).map(|s| s.n_o)
}
