//! Class-ratio arithmetic and the KL divergence used to score ratio predictions.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Additive smoothing applied to both KL arguments (and to the labelled prior
/// when it appears as a divisor) before renormalizing.
pub const SMOOTHING_EPS: f64 = 1e-8;

/// Tolerance on `Σ values = 1` for a constructed [`ClassRatio`].
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Nonnegative proportions over an ordered, duplicate-free list of classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRatio {
    classes: Vec<String>,
    values: Vec<f64>,
}

impl ClassRatio {
    /// Builds a ratio from values that already sum to one.
    pub fn new(classes: Vec<String>, values: Vec<f64>) -> Result<Self> {
        check_classes(&classes, values.len())?;
        check_nonnegative(&values)?;
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invalid(format!("ratio sums to {total}, expected 1")));
        }
        Ok(Self { classes, values })
    }

    /// L1-normalizes nonnegative weights into a ratio.
    pub fn normalized(classes: Vec<String>, weights: &[f64]) -> Result<Self> {
        check_classes(&classes, weights.len())?;
        check_nonnegative(weights)?;
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroTotal);
        }
        let values = weights.iter().map(|w| w / total).collect();
        Ok(Self { classes, values })
    }

    pub fn uniform(classes: Vec<String>) -> Result<Self> {
        let n = classes.len();
        Self::normalized(classes, &vec![1.0; n])
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Values after adding [`SMOOTHING_EPS`] to every entry and renormalizing.
    pub fn smoothed(&self) -> Vec<f64> {
        smooth(&self.values)
    }

    pub(crate) fn same_layout(&self, other: &ClassRatio) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::dim(format!(
                "ratio has {} classes, other has {}",
                self.len(),
                other.len()
            )));
        }
        if self.classes != other.classes {
            return Err(Error::dim("ratios use different class orderings"));
        }
        Ok(())
    }
}

pub(crate) fn smooth(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().map(|v| v + SMOOTHING_EPS).sum();
    values.iter().map(|v| (v + SMOOTHING_EPS) / total).collect()
}

fn check_classes(classes: &[String], n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::dim("a ratio needs at least one class"));
    }
    if classes.len() != n {
        return Err(Error::dim(format!(
            "{} class names for {} values",
            classes.len(),
            n
        )));
    }
    let mut seen = HashSet::with_capacity(n);
    for c in classes {
        if !seen.insert(c.as_str()) {
            return Err(Error::invalid(format!("duplicate class name {c:?}")));
        }
    }
    Ok(())
}

fn check_nonnegative(values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !v.is_finite() || **v < 0.0) {
        Some(v) => Err(Error::invalid(format!(
            "ratio entries must be finite and nonnegative, got {v}"
        ))),
        None => Ok(()),
    }
}

/// Default class names `class_0 .. class_{n-1}`.
pub fn default_class_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("class_{i}")).collect()
}

/// Per-class object counts over a set of images.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassCounts {
    counts: Vec<f64>,
    total_images: usize,
}

impl ClassCounts {
    pub fn new(counts: Vec<f64>, total_images: usize) -> Result<Self> {
        if total_images == 0 {
            return Err(Error::invalid("total_images must be at least 1"));
        }
        check_nonnegative(&counts)?;
        Ok(Self { counts, total_images })
    }

    /// Sums integer per-image counts.
    pub fn from_images<'a, I>(n_classes: usize, images: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u32]>,
    {
        let mut counts = vec![0.0; n_classes];
        let mut n = 0;
        for image in images {
            if image.len() != n_classes {
                return Err(Error::dim(format!(
                    "image has {} class counts, expected {n_classes}",
                    image.len()
                )));
            }
            for (acc, &c) in counts.iter_mut().zip(image) {
                *acc += f64::from(c);
            }
            n += 1;
        }
        Self::new(counts, n)
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total_images(&self) -> usize {
        self.total_images
    }
}

pub fn ratio_from_counts(counts: &ClassCounts, classes: Vec<String>) -> Result<ClassRatio> {
    ClassRatio::normalized(classes, counts.counts())
}

/// Average number of objects per image.
pub fn objects_per_image(counts: &ClassCounts) -> f64 {
    counts.counts().iter().sum::<f64>() / counts.total_images() as f64
}

/// `D(p ∥ q)` in nats, computed on ε-smoothed copies of both arguments.
pub fn kl_divergence(p: &ClassRatio, q: &ClassRatio) -> Result<f64> {
    p.same_layout(q)?;
    let (p, q) = (p.smoothed(), q.smoothed());
    // Each term p·(x − 1 − ln x) with x = q/p is nonnegative; the extra
    // (q − p) terms cancel because both arguments sum to one.
    Ok(p.iter()
        .zip(&q)
        .map(|(&pc, &qc)| {
            let d = (qc - pc) / pc;
            (pc * (d - d.ln_1p())).max(0.0)
        })
        .sum())
}

/// Which way round the KL divergence is taken when scoring a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirection {
    /// `D(true ∥ predicted)`
    #[default]
    TrueToPredicted,
    /// `D(predicted ∥ true)`
    PredictedToTrue,
}

pub fn kl_directed(truth: &ClassRatio, predicted: &ClassRatio, dir: KlDirection) -> Result<f64> {
    match dir {
        KlDirection::TrueToPredicted => kl_divergence(truth, predicted),
        KlDirection::PredictedToTrue => kl_divergence(predicted, truth),
    }
}
