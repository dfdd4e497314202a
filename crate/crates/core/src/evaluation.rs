//! Pseudo-label quality and class-ratio prediction accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::act::{act, auto_cap, mean_confidence, ActConfig, PseudoLabelSet};
use crate::detection::{by_score_desc, BBox, DetectionRecord};
use crate::distribution::{kl_directed, ClassRatio, KlDirection};
use crate::error::{Error, Result};
use crate::regression::{labelled_ratio, LabelledExample, PredictConfig, RatioPredictor};

/// IoU needed for a pseudo-label to count as a hit.
pub const DEFAULT_IOU_MIN: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthObject {
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Annotated objects keyed by image id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthSet {
    pub images: BTreeMap<String, Vec<GroundTruthObject>>,
}

impl GroundTruthSet {
    pub fn insert(&mut self, image_id: impl Into<String>, objects: Vec<GroundTruthObject>) {
        self.images.entry(image_id.into()).or_default().extend(objects);
    }

    pub fn n_objects(&self) -> usize {
        self.images.values().map(Vec::len).sum()
    }

    /// Object counts per class for each image, in image-id order.
    pub fn class_counts(&self, n_classes: usize) -> Result<BTreeMap<String, Vec<u32>>> {
        self.images
            .iter()
            .map(|(id, objs)| {
                let mut counts = vec![0u32; n_classes];
                for o in objs {
                    let slot = counts.get_mut(o.class_id).ok_or_else(|| {
                        Error::dim(format!(
                            "image {id}: class {} outside {n_classes} classes",
                            o.class_id
                        ))
                    })?;
                    *slot += 1;
                }
                Ok((id.clone(), counts))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl F1Score {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let predicted = tp + fp;
        let actual = tp + fn_;
        let (precision, recall, f1) = if predicted == 0 && actual == 0 {
            (1.0, 1.0, 1.0)
        } else {
            let p = if predicted == 0 {
                0.0
            } else {
                tp as f64 / predicted as f64
            };
            let r = if actual == 0 {
                0.0
            } else {
                tp as f64 / actual as f64
            };
            let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
            (p, r, f)
        };
        Self {
            precision,
            recall,
            f1,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
        }
    }
}

/// Greedy score-ordered matching of pseudo-labels to ground truth.
pub fn pseudo_label_f1(labels: &PseudoLabelSet, truth: &GroundTruthSet, iou_min: f64) -> F1Score {
    let records: Vec<&DetectionRecord> = labels.iter().collect();
    match_records(&records, truth, iou_min)
}

/// Each record, in descending score order (ties keep input order), claims the
/// unclaimed same-class ground-truth box of highest IoU `>= iou_min`; equal
/// IoUs go to the lowest ground-truth index.
pub fn match_records(records: &[&DetectionRecord], truth: &GroundTruthSet, iou_min: f64) -> F1Score {
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(records[a].score, records[b].score));

    let mut claimed: BTreeMap<&str, Vec<bool>> = truth
        .images
        .iter()
        .map(|(id, objs)| (id.as_str(), vec![false; objs.len()]))
        .collect();

    let mut tp = 0;
    for i in order {
        let d = records[i];
        let (Some(objs), Some(taken)) = (
            truth.images.get(&d.image_id),
            claimed.get_mut(d.image_id.as_str()),
        ) else {
            continue;
        };
        let mut best: Option<(usize, f64)> = None;
        for (g, obj) in objs.iter().enumerate() {
            if taken[g] || obj.class_id != d.class_id {
                continue;
            }
            let iou = obj.bbox.iou(&d.bbox);
            if iou >= iou_min && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            taken[g] = true;
            tp += 1;
        }
    }
    F1Score::from_counts(tp, records.len() - tp, truth.n_objects() - tp)
}

/// One point of an objects-per-image sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub n_o: f64,
    pub mean_confidence: f64,
    pub score: F1Score,
}

/// Evaluates ACT at every multiple of `delta_n_o` up to the cap and scores
/// each selection against `truth`.
pub fn f1_sweep(
    detections: &[DetectionRecord],
    truth: &GroundTruthSet,
    ratio: &ClassRatio,
    n_u: usize,
    cfg: &ActConfig,
    iou_min: f64,
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    if n_u == 0 {
        return Err(Error::invalid("n_u must be at least 1"));
    }
    let cap = cfg
        .n_o_cap
        .unwrap_or_else(|| auto_cap(detections.len(), n_u, cfg.delta_n_o));
    let steps = (cap / cfg.delta_n_o + 1e-9).floor() as usize;
    Ok((1..=steps)
        .map(|k| {
            let n_o = k as f64 * cfg.delta_n_o;
            let (_, labels) = act(detections, ratio, n_o, n_u, cfg.reliable_fraction);
            SweepPoint {
                n_o,
                mean_confidence: mean_confidence(&labels),
                score: pseudo_label_f1(&labels, truth, iou_min),
            }
        })
        .collect())
}

/// KL divergence of each ratio estimate from the true unlabelled ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlReport {
    pub scenario: String,
    pub kl_labelled: f64,
    pub kl_merged: f64,
    pub kl_squared: f64,
}

pub fn kl_report(
    labelled: &ClassRatio,
    merged: &ClassRatio,
    squared: &ClassRatio,
    truth: &ClassRatio,
    name: &str,
    dir: KlDirection,
) -> Result<KlReport> {
    Ok(KlReport {
        scenario: name.to_string(),
        kl_labelled: kl_directed(truth, labelled, dir)?,
        kl_merged: kl_directed(truth, merged, dir)?,
        kl_squared: kl_directed(truth, squared, dir)?,
    })
}

/// Similarity vectors plus per-image annotation counts for one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<LabelledExample>,
}

/// Fit on `labelled`, predict the ratio of `unlabelled` from its similarity
/// vectors alone, and score against its annotations.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub labelled: &'a Dataset,
    pub unlabelled: &'a Dataset,
}

impl Scenario<'_> {
    pub fn name(&self) -> String {
        format!("{}->{}", self.labelled.name, self.unlabelled.name)
    }
}

/// Every ordered pair of distinct datasets.
pub fn ordered_scenarios(datasets: &[Dataset]) -> Vec<Scenario<'_>> {
    let mut out = Vec::with_capacity(datasets.len() * datasets.len().saturating_sub(1));
    for (i, labelled) in datasets.iter().enumerate() {
        for (j, unlabelled) in datasets.iter().enumerate() {
            if i != j {
                out.push(Scenario { labelled, unlabelled });
            }
        }
    }
    out
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub scenario: String,
    pub result: Result<KlReport>,
}

pub fn evaluate_scenario(
    scenario: &Scenario<'_>,
    classes: &[String],
    cfg: &PredictConfig,
    dir: KlDirection,
) -> Result<KlReport> {
    let predictor = RatioPredictor::fit(&scenario.labelled.examples, classes.to_vec())?;
    let sims: Vec<_> = scenario
        .unlabelled
        .examples
        .iter()
        .map(|e| e.similarity.clone())
        .collect();
    let prediction = predictor.predict(&sims, cfg)?;
    let truth = labelled_ratio(&scenario.unlabelled.examples, classes.to_vec())?;
    kl_report(
        &prediction.labelled_prior,
        &prediction.merged,
        &prediction.squared,
        &truth,
        &scenario.name(),
        dir,
    )
}

/// Evaluates every scenario; a failing scenario is reported, not fatal.
pub fn scenario_sweep(
    scenarios: &[Scenario<'_>],
    classes: &[String],
    cfg: &PredictConfig,
    dir: KlDirection,
) -> Vec<ScenarioOutcome> {
    scenarios
        .iter()
        .map(|s| ScenarioOutcome {
            scenario: s.name(),
            result: evaluate_scenario(s, classes, cfg, dir),
        })
        .collect()
}
