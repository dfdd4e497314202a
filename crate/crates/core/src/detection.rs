//! Boxes, detection records and greedy per-class NMS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box `(x1, y1, x2, y2)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(Error::invalid(format!(
                "invalid box [{x1}, {y1}, {x2}, {y2}]: need x1 < x2 and y1 < y2"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let w = (self.x2.min(other.x2) - self.x1.max(other.x1)).max(0.0);
        let h = (self.y2.min(other.y2) - self.y1.max(other.y1)).max(0.0);
        let inter = w * h;
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// One teacher prediction on an unlabelled image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

impl DetectionRecord {
    pub fn new(image_id: impl Into<String>, class_id: usize, bbox: BBox, score: f64) -> Result<Self> {
        let rec = Self {
            image_id: image_id.into(),
            class_id,
            bbox,
            score,
        };
        rec.validate()?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::invalid(format!(
                "score {} outside [0, 1] for image {}",
                self.score, self.image_id
            )));
        }
        Ok(())
    }
}

/// Descending by score; equal scores keep input order.
pub(crate) fn by_score_desc(a: f64, b: f64) -> Ordering {
    b.partial_cmp(&a).unwrap_or(Ordering::Equal)
}

/// Indices of the records kept by greedy per-class, per-image NMS, in
/// descending score order.
pub fn nms_indices(detections: &[DetectionRecord], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| by_score_desc(detections[a].score, detections[b].score));

    let mut keep: Vec<usize> = Vec::new();
    for &i in &order {
        let d = &detections[i];
        let suppressed = keep.iter().any(|&k| {
            let kept = &detections[k];
            kept.class_id == d.class_id
                && kept.image_id == d.image_id
                && kept.bbox.iou(&d.bbox) > iou_threshold
        });
        if !suppressed {
            keep.push(i);
        }
    }
    keep
}

pub fn nms(detections: &[DetectionRecord], iou_threshold: f64) -> Vec<DetectionRecord> {
    nms_indices(detections, iou_threshold)
        .into_iter()
        .map(|i| detections[i].clone())
        .collect()
}
