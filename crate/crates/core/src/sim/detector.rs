use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::scene::SyntheticScene;
use crate::detection::DetectionRecord;
use crate::error::{Error, Result};
use crate::rng;

/// Linear softmax classifier over per-object feature vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDetectorWeights {
    n_classes: usize,
    d_feat: usize,
    /// Row-major `n_classes × d_feat`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl ToyDetectorWeights {
    pub fn zeros(n_classes: usize, d_feat: usize) -> Self {
        Self {
            n_classes,
            d_feat,
            w: vec![0.0; n_classes * d_feat],
            b: vec![0.0; n_classes],
        }
    }

    pub fn new(w: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let n_classes = b.len();
        let d_feat = w.first().map_or(0, Vec::len);
        if w.len() != n_classes || w.iter().any(|r| r.len() != d_feat) || n_classes == 0 {
            return Err(Error::dim(
                "weights must be n_classes × d_feat with one bias per class",
            ));
        }
        let w: Vec<f64> = w.into_iter().flatten().collect();
        if w.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::invalid("detector weights must be finite"));
        }
        Ok(Self {
            n_classes,
            d_feat,
            w,
            b,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn d_feat(&self) -> usize {
        self.d_feat
    }

    pub fn weight(&self, class: usize, j: usize) -> f64 {
        self.w[class * self.d_feat + j]
    }

    pub fn bias(&self, class: usize) -> f64 {
        self.b[class]
    }

    pub fn logits(&self, feature: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let row = &self.w[c * self.d_feat..(c + 1) * self.d_feat];
                row.iter().zip(feature).map(|(w, f)| w * f).sum::<f64>() + self.b[c]
            })
            .collect()
    }

    pub fn probs(&self, feature: &[f64]) -> Vec<f64> {
        softmax(&self.logits(feature))
    }

    pub fn predict(&self, feature: &[f64]) -> usize {
        argmax(&self.logits(feature))
    }

    /// `self -= lr · grad`, where `grad` has the same layout.
    pub(crate) fn descend(&mut self, grad: &ToyDetectorWeights, lr: f64) {
        for (p, g) in self.w.iter_mut().zip(&grad.w) {
            *p -= lr * g;
        }
        for (p, g) in self.b.iter_mut().zip(&grad.b) {
            *p -= lr * g;
        }
    }

    /// Adds `scale · (probs − target) ⊗ [feature, 1]` to this gradient.
    pub(crate) fn add_outer(&mut self, feature: &[f64], residual: &[f64], scale: f64) {
        for (c, r) in residual.iter().enumerate() {
            let g = scale * r;
            for (w, f) in self.w[c * self.d_feat..(c + 1) * self.d_feat]
                .iter_mut()
                .zip(feature)
            {
                *w += g * f;
            }
            self.b[c] += g;
        }
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.w.iter().chain(&self.b)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.w.iter_mut().chain(self.b.iter_mut())
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// `teacher ← alpha · teacher + (1 − alpha) · student`, parameter-wise.
pub fn ema_update(
    teacher: &ToyDetectorWeights,
    student: &ToyDetectorWeights,
    alpha: f64,
) -> Result<ToyDetectorWeights> {
    if teacher.n_classes != student.n_classes || teacher.d_feat != student.d_feat {
        return Err(Error::dim(format!(
            "teacher is {}×{}, student is {}×{}",
            teacher.n_classes, teacher.d_feat, student.n_classes, student.d_feat
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mut out = teacher.clone();
    for (t, s) in out.params_mut().zip(student.params()) {
        *t = alpha * *t + (1.0 - alpha) * s;
    }
    Ok(out)
}

/// Adds `N(0, sigma²)` noise to every coordinate, then zeroes each coordinate
/// independently with probability `dropout`.
pub fn perturb(feature: &[f64], sigma: f64, dropout: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = feature.to_vec();
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        for v in &mut out {
            *v += normal.sample(rng);
        }
    }
    if dropout > 0.0 {
        for v in &mut out {
            if rng.random::<f64>() < dropout {
                *v = 0.0;
            }
        }
    }
    out
}

/// Detections plus the full class-probability vector behind each one, in
/// region order (objects, then clutter).
pub fn detect_with_probs(
    weights: &ToyDetectorWeights,
    scene: &SyntheticScene,
    noise_sigma: f64,
    dropout: f64,
    rng_seed: u64,
) -> Vec<(DetectionRecord, Vec<f64>)> {
    let mut rng = rng::stream(rng_seed, "detect", &[]);
    scene
        .regions()
        .map(|(feature, bbox)| {
            let f = perturb(feature, noise_sigma, dropout, &mut rng);
            let p = weights.probs(&f);
            let class_id = argmax(&p);
            let rec = DetectionRecord {
                image_id: scene.image_id.clone(),
                class_id,
                bbox,
                score: p[class_id].clamp(0.0, 1.0),
            };
            (rec, p)
        })
        .collect()
}

/// One detection per scene region: class is the softmax argmax and score the
/// softmax maximum, computed on a perturbed copy of the region's features.
pub fn detect(
    weights: &ToyDetectorWeights,
    scene: &SyntheticScene,
    noise_sigma: f64,
    dropout: f64,
    rng_seed: u64,
) -> Vec<DetectionRecord> {
    detect_with_probs(weights, scene, noise_sigma, dropout, rng_seed)
        .into_iter()
        .map(|(d, _)| d)
        .collect()
}
