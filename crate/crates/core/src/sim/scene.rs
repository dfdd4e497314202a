use serde::{Deserialize, Serialize};

use crate::detection::BBox;
use crate::evaluation::{GroundTruthObject, GroundTruthSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub feature: Vec<f64>,
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Unannotated region the detector still scores, such as background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClutterRegion {
    pub feature: Vec<f64>,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// One synthetic image: annotated objects plus optional clutter regions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub image_id: String,
    pub domain: Domain,
    pub objects: Vec<SceneObject>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clutter: Vec<ClutterRegion>,
}

impl SyntheticScene {
    /// Features and boxes of every detectable region: objects, then clutter.
    pub fn regions(&self) -> impl Iterator<Item = (&[f64], BBox)> {
        self.objects
            .iter()
            .map(|o| (o.feature.as_slice(), o.bbox))
            .chain(self.clutter.iter().map(|c| (c.feature.as_slice(), c.bbox)))
    }

    pub fn class_counts(&self, n_classes: usize) -> Vec<u32> {
        let mut counts = vec![0; n_classes];
        for o in &self.objects {
            if let Some(c) = counts.get_mut(o.class_id) {
                *c += 1;
            }
        }
        counts
    }
}

pub(crate) fn ground_truth(scenes: &[SyntheticScene]) -> GroundTruthSet {
    let mut gt = GroundTruthSet::default();
    for s in scenes {
        gt.insert(
            s.image_id.clone(),
            s.objects
                .iter()
                .map(|o| GroundTruthObject {
                    class_id: o.class_id,
                    bbox: o.bbox,
                })
                .collect(),
        );
    }
    gt
}
