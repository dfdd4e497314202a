//! Linear class-ratio predictors over similarity vectors.
//!
//! Two models are fitted on labelled images: an *absolute* model regressing
//! per-image object counts and a *relative* model regressing per-image class
//! proportions. Both are evaluated at the mean similarity vector of the
//! unlabelled set, then combined by a geometric mean and a squared-shift
//! correction against the labelled prior.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::distribution::{ratio_from_counts, smooth, ClassCounts, ClassRatio};
use crate::error::{Error, Result};
use crate::similarity::{mean_similarity, SimilarityVector};

/// Diagonal damping added to the centred Gram matrix.
pub const RIDGE_LAMBDA: f64 = 1e-6;

/// Floor applied to raw model outputs before L1 normalization.
pub const CLAMP_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// Targets are raw per-image object counts.
    Absolute,
    /// Targets are per-image class proportions.
    Relative,
}

/// Affine map from a similarity vector to one output per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub kind: ModelKind,
    pub classes: Vec<String>,
    /// `weights[c][j]`: coefficient of similarity feature `j` for class `c`.
    pub weights: Vec<Vec<f64>>,
    pub intercept: Vec<f64>,
}

impl RegressionModel {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.classes.len();
        if self.intercept.len() != n || self.weights.len() != n {
            return Err(Error::dim(format!(
                "model has {n} classes but {} weight rows and {} intercepts",
                self.weights.len(),
                self.intercept.len()
            )));
        }
        if self.weights.iter().any(|w| w.len() != n) {
            return Err(Error::dim("weight rows must have one entry per class"));
        }
        let finite = self
            .weights
            .iter()
            .flatten()
            .chain(&self.intercept)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("model coefficients must be finite"));
        }
        Ok(())
    }

    /// `weights · s + intercept`, unclamped.
    pub fn raw_output(&self, s: &[f64]) -> Result<Vec<f64>> {
        if s.len() != self.n_classes() {
            return Err(Error::dim(format!(
                "similarity vector has {} entries, model expects {}",
                s.len(),
                self.n_classes()
            )));
        }
        Ok(self
            .weights
            .iter()
            .zip(&self.intercept)
            .map(|(w, b)| w.iter().zip(s).map(|(a, x)| a * x).sum::<f64>() + b)
            .collect())
    }
}

/// One labelled image: its similarity vector and its per-class object counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledExample {
    pub similarity: SimilarityVector,
    pub counts: Vec<u32>,
}

/// Ordinary least squares with intercept, one output per class.
///
/// Features and targets are centred so the intercept is never damped; the
/// slope system is solved through the normal equations with
/// [`RIDGE_LAMBDA`] on the diagonal. Relative fits skip images without any
/// annotation.
pub fn fit_model(
    examples: &[LabelledExample],
    kind: ModelKind,
    classes: Vec<String>,
) -> Result<RegressionModel> {
    let n_c = classes.len();
    if n_c == 0 {
        return Err(Error::dim("at least one class is required"));
    }
    for ex in examples {
        if ex.similarity.scores.len() != n_c || ex.counts.len() != n_c {
            return Err(Error::dim(format!(
                "image {} has {} scores and {} counts, expected {n_c}",
                ex.similarity.image_id,
                ex.similarity.scores.len(),
                ex.counts.len()
            )));
        }
    }

    let rows: Vec<(&[f64], Vec<f64>)> = examples
        .iter()
        .filter_map(|ex| {
            let total: u32 = ex.counts.iter().sum();
            let target: Vec<f64> = match kind {
                ModelKind::Absolute => ex.counts.iter().map(|&c| f64::from(c)).collect(),
                ModelKind::Relative if total == 0 => return None,
                ModelKind::Relative => ex
                    .counts
                    .iter()
                    .map(|&c| f64::from(c) / f64::from(total))
                    .collect(),
            };
            Some((ex.similarity.scores.as_slice(), target))
        })
        .collect();

    let required = n_c + 1;
    if rows.len() < required {
        return Err(Error::Underdetermined {
            available: rows.len(),
            required,
        });
    }

    let n = rows.len() as f64;
    let d = n_c;
    let mut x_mean = DVector::<f64>::zeros(d);
    let mut y_mean = DVector::<f64>::zeros(n_c);
    for (x, y) in &rows {
        x_mean += DVector::from_column_slice(x);
        y_mean += DVector::from_column_slice(y);
    }
    x_mean /= n;
    y_mean /= n;

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut cross = DMatrix::<f64>::zeros(d, n_c);
    for (x, y) in &rows {
        let xc = DVector::from_column_slice(x) - &x_mean;
        let yc = DVector::from_column_slice(y) - &y_mean;
        gram += &xc * xc.transpose();
        cross += &xc * yc.transpose();
    }
    for i in 0..d {
        gram[(i, i)] += RIDGE_LAMBDA;
    }

    let beta = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&cross),
        None => gram
            .lu()
            .solve(&cross)
            .ok_or_else(|| Error::invalid("normal equations are singular"))?,
    };
    if beta.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("regression produced non-finite coefficients"));
    }

    let weights: Vec<Vec<f64>> = (0..n_c).map(|c| (0..d).map(|j| beta[(j, c)]).collect()).collect();
    let intercept = (0..n_c)
        .map(|c| y_mean[c] - (0..d).map(|j| beta[(j, c)] * x_mean[j]).sum::<f64>())
        .collect();

    Ok(RegressionModel {
        kind,
        classes,
        weights,
        intercept,
    })
}

fn expect_kind(model: &RegressionModel, kind: ModelKind) -> Result<()> {
    if model.kind != kind {
        return Err(Error::invalid(format!(
            "expected a {kind:?} model, got {:?}",
            model.kind
        )));
    }
    Ok(())
}

/// Clamps raw outputs at [`CLAMP_EPS`] and L1-normalizes them.
pub fn clamp_normalize(classes: Vec<String>, raw: &[f64]) -> Result<ClassRatio> {
    let clamped: Vec<f64> = raw
        .iter()
        .map(|&v| if v.is_nan() || v < CLAMP_EPS { CLAMP_EPS } else { v })
        .collect();
    ClassRatio::normalized(classes, &clamped)
}

pub fn predict_absolute_ratio(model: &RegressionModel, mean_sim: &[f64]) -> Result<ClassRatio> {
    expect_kind(model, ModelKind::Absolute)?;
    clamp_normalize(model.classes.clone(), &model.raw_output(mean_sim)?)
}

pub fn predict_relative_ratio(model: &RegressionModel, mean_sim: &[f64]) -> Result<ClassRatio> {
    expect_kind(model, ModelKind::Relative)?;
    clamp_normalize(model.classes.clone(), &model.raw_output(mean_sim)?)
}

/// Elementwise `sqrt(r_a · r_r)` without normalization.
pub fn merge_unnormalized(r_a: &ClassRatio, r_r: &ClassRatio) -> Result<Vec<f64>> {
    r_a.same_layout(r_r)?;
    Ok(r_a
        .values()
        .iter()
        .zip(r_r.values())
        .map(|(a, r)| (a * r).sqrt())
        .collect())
}

/// Geometric-mean merge of the two predictions, L1-normalized.
pub fn merge_predictions(r_a: &ClassRatio, r_r: &ClassRatio) -> Result<ClassRatio> {
    let m = merge_unnormalized(r_a, r_r)?;
    ClassRatio::normalized(r_a.classes().to_vec(), &m)
}

/// `r_a · r_r / r_label`, L1-normalized. `r_label` is ε-smoothed first.
pub fn square_prediction(r_label: &ClassRatio, r_a: &ClassRatio, r_r: &ClassRatio) -> Result<ClassRatio> {
    shift_prediction(r_label, r_a, r_r, 2.0)
}

/// Generalized shift correction `r_label · (merge / r_label)^exponent`,
/// L1-normalized; `exponent = 2` gives [`square_prediction`].
pub fn shift_prediction(
    r_label: &ClassRatio,
    r_a: &ClassRatio,
    r_r: &ClassRatio,
    exponent: f64,
) -> Result<ClassRatio> {
    r_label.same_layout(r_a)?;
    r_label.same_layout(r_r)?;
    if !exponent.is_finite() || exponent < 0.0 {
        return Err(Error::invalid(format!(
            "shift exponent must be >= 0, got {exponent}"
        )));
    }
    let label = smooth(r_label.values());
    let u: Vec<f64> = if exponent == 2.0 {
        r_a.values()
            .iter()
            .zip(r_r.values())
            .zip(&label)
            .map(|((a, r), l)| a * r / l)
            .collect()
    } else {
        merge_unnormalized(r_a, r_r)?
            .iter()
            .zip(&label)
            .map(|(m, l)| l * (m / l).powf(exponent))
            .collect()
    };
    ClassRatio::normalized(r_label.classes().to_vec(), &u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictConfig {
    /// Whether the reported merged prediction is L1-normalized.
    pub normalize_merge: bool,
    /// Power applied to the predicted relative shift.
    pub shift_exponent: f64,
}

impl Default for PredictConfig {
    fn default() -> Self {
        Self {
            normalize_merge: true,
            shift_exponent: 2.0,
        }
    }
}

/// The labelled prior and every ratio prediction for one unlabelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioPrediction {
    pub labelled_prior: ClassRatio,
    pub absolute: ClassRatio,
    pub relative: ClassRatio,
    pub merged: ClassRatio,
    pub merged_unnormalized: Vec<f64>,
    pub squared: ClassRatio,
}

impl RatioPrediction {
    /// Merged values as reported under `cfg`.
    pub fn merged_values(&self, cfg: &PredictConfig) -> &[f64] {
        if cfg.normalize_merge {
            self.merged.values()
        } else {
            &self.merged_unnormalized
        }
    }
}

/// Fitted absolute and relative models plus the labelled class ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioPredictor {
    pub absolute: RegressionModel,
    pub relative: RegressionModel,
    pub labelled_prior: ClassRatio,
}

impl RatioPredictor {
    pub fn fit(examples: &[LabelledExample], classes: Vec<String>) -> Result<Self> {
        let absolute = fit_model(examples, ModelKind::Absolute, classes.clone())?;
        let relative = fit_model(examples, ModelKind::Relative, classes.clone())?;
        let labelled_prior = labelled_ratio(examples, classes)?;
        Ok(Self {
            absolute,
            relative,
            labelled_prior,
        })
    }

    pub fn predict(&self, unlabelled: &[SimilarityVector], cfg: &PredictConfig) -> Result<RatioPrediction> {
        let mean = mean_similarity(unlabelled)?;
        predict_from_mean(&self.absolute, &self.relative, &self.labelled_prior, &mean, cfg)
    }
}

/// Runs the full prediction chain at a precomputed mean similarity vector.
pub fn predict_from_mean(
    absolute: &RegressionModel,
    relative: &RegressionModel,
    labelled_prior: &ClassRatio,
    mean_sim: &[f64],
    cfg: &PredictConfig,
) -> Result<RatioPrediction> {
    let r_a = predict_absolute_ratio(absolute, mean_sim)?;
    let r_r = predict_relative_ratio(relative, mean_sim)?;
    labelled_prior.same_layout(&r_a)?;
    let merged_unnormalized = merge_unnormalized(&r_a, &r_r)?;
    let merged = ClassRatio::normalized(r_a.classes().to_vec(), &merged_unnormalized)?;
    let squared = shift_prediction(labelled_prior, &r_a, &r_r, cfg.shift_exponent)?;
    Ok(RatioPrediction {
        labelled_prior: labelled_prior.clone(),
        absolute: r_a,
        relative: r_r,
        merged,
        merged_unnormalized,
        squared,
    })
}

/// Class ratio of all annotated objects in `examples`.
pub fn labelled_ratio(examples: &[LabelledExample], classes: Vec<String>) -> Result<ClassRatio> {
    if examples.is_empty() {
        return Err(Error::EmptyDataset("no labelled images".into()));
    }
    let counts = ClassCounts::from_images(classes.len(), examples.iter().map(|e| e.counts.as_slice()))?;
    ratio_from_counts(&counts, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::default_class_names;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ratio(v: &[f64]) -> ClassRatio {
        ClassRatio::new(default_class_names(v.len()), v.to_vec()).unwrap()
    }

    fn model(kind: ModelKind, intercept: &[f64]) -> RegressionModel {
        let n = intercept.len();
        RegressionModel {
            kind,
            classes: default_class_names(n),
            weights: vec![vec![0.0; n]; n],
            intercept: intercept.to_vec(),
        }
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    fn example(id: usize, s: Vec<f64>, counts: Vec<u32>) -> LabelledExample {
        LabelledExample {
            similarity: SimilarityVector {
                image_id: format!("img{id}"),
                scores: s,
            },
            counts,
        }
    }

    /// Noiseless data `counts = A·s + b` with integer targets: draw `s` on an
    /// integer lattice so `A·s + b` stays integral.
    fn linear_examples(n: usize, a: &[[i32; 3]; 3], b: &[i32; 3], seed: u64) -> Vec<LabelledExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let s: Vec<i32> = (0..3).map(|_| rng.random_range(0..6)).collect();
                let counts = (0..3)
                    .map(|c| (0..3).map(|j| a[c][j] * s[j]).sum::<i32>() + b[c])
                    .map(|v| u32::try_from(v).unwrap())
                    .collect();
                example(i, s.iter().map(|&v| f64::from(v)).collect(), counts)
            })
            .collect()
    }

    #[test]
    fn noiseless_recovery() {
        let a = [[1, 0, 2], [0, 3, 1], [2, 1, 0]];
        let b = [4, 1, 2];
        let ex = linear_examples(50, &a, &b, 7);
        let m = fit_model(&ex, ModelKind::Absolute, default_class_names(3)).unwrap();
        for c in 0..3 {
            for (w, &want) in m.weights[c].iter().zip(&a[c]) {
                assert!((w - f64::from(want)).abs() < 1e-6);
            }
            assert!((m.intercept[c] - f64::from(b[c])).abs() < 1e-6);
        }
    }

    /// Unpenalized least squares on `[1, s]` by Gauss-Jordan elimination
    /// with partial pivoting; returns `[intercept, w_0, ..]` per output.
    fn normal_equations_oracle(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let p = xs[0].len() + 1;
        let aug = |x: &Vec<f64>| -> Vec<f64> { std::iter::once(1.0).chain(x.iter().copied()).collect() };
        (0..ys[0].len())
            .map(|c| {
                let mut m = vec![vec![0.0; p + 1]; p];
                for (x, y) in xs.iter().zip(ys) {
                    let a = aug(x);
                    for i in 0..p {
                        for j in 0..p {
                            m[i][j] += a[i] * a[j];
                        }
                        m[i][p] += a[i] * y[c];
                    }
                }
                for col in 0..p {
                    let piv = (col..p)
                        .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                        .unwrap();
                    m.swap(col, piv);
                    let d = m[col][col];
                    for v in &mut m[col] {
                        *v /= d;
                    }
                    for r in 0..p {
                        if r != col {
                            let f = m[r][col];
                            let pivot_row = m[col].clone();
                            for (v, pv) in m[r].iter_mut().zip(&pivot_row) {
                                *v -= f * pv;
                            }
                        }
                    }
                }
                m.iter().map(|row| row[p]).collect()
            })
            .collect()
    }

    #[test]
    fn noisy_fit_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let noise = rand_distr::Normal::new(0.0, 0.1).unwrap();
        let ex: Vec<LabelledExample> = (0..60)
            .map(|i| {
                let s: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
                let counts = (0..3)
                    .map(|c| {
                        let mean = 1.0 + s[c] + 0.5 * s[(c + 1) % 3];
                        let v: f64 = mean + rand_distr::Distribution::sample(&noise, &mut rng);
                        v.round().max(0.0) as u32
                    })
                    .collect();
                example(i, s, counts)
            })
            .collect();
        let xs: Vec<Vec<f64>> = ex.iter().map(|e| e.similarity.scores.clone()).collect();

        let ys: Vec<Vec<f64>> = ex
            .iter()
            .map(|e| e.counts.iter().map(|&c| f64::from(c)).collect())
            .collect();
        let oracle = normal_equations_oracle(&xs, &ys);
        let m = fit_model(&ex, ModelKind::Absolute, default_class_names(3)).unwrap();
        for (c, row) in oracle.iter().enumerate() {
            assert!((m.intercept[c] - row[0]).abs() < 1e-6);
            assert!(close(&m.weights[c], &row[1..], 1e-6));
        }

        let ys: Vec<Vec<f64>> = ex
            .iter()
            .map(|e| {
                let t: u32 = e.counts.iter().sum();
                e.counts.iter().map(|&c| f64::from(c) / f64::from(t)).collect()
            })
            .collect();
        let oracle = normal_equations_oracle(&xs, &ys);
        let m = fit_model(&ex, ModelKind::Relative, default_class_names(3)).unwrap();
        for (c, row) in oracle.iter().enumerate() {
            assert!((m.intercept[c] - row[0]).abs() < 1e-6);
            assert!(close(&m.weights[c], &row[1..], 1e-6));
        }
    }

    #[test]
    fn constant_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ex: Vec<_> = (0..20)
            .map(|i| example(i, (0..3).map(|_| rng.random::<f64>()).collect(), vec![2, 0, 5]))
            .collect();
        let m = fit_model(&ex, ModelKind::Absolute, default_class_names(3)).unwrap();
        assert!(m.weights.iter().flatten().all(|w| w.abs() < 1e-6));
        assert!(close(&m.intercept, &[2.0, 0.0, 5.0], 1e-6));
    }

    #[test]
    fn too_few_examples() {
        let ex = vec![
            example(0, vec![0.1, 0.2, 0.3], vec![1, 0, 0]),
            example(1, vec![0.3, 0.2, 0.1], vec![0, 1, 0]),
        ];
        let err = fit_model(&ex, ModelKind::Absolute, default_class_names(3)).unwrap_err();
        assert!(matches!(
            err,
            Error::Underdetermined {
                available: 2,
                required: 4
            }
        ));
    }

    #[test]
    fn relative_fit_skips_empty_images() {
        let mut ex: Vec<_> = (0..4)
            .map(|i| example(i, vec![i as f64, 1.0], vec![1, 1]))
            .collect();
        ex.push(example(9, vec![5.0, 5.0], vec![0, 0]));
        // 4 nonempty images suffice for 2 classes
        let m = fit_model(&ex, ModelKind::Relative, default_class_names(2)).unwrap();
        assert!(close(&m.intercept, &[0.5, 0.5], 1e-6));

        let only_empty: Vec<_> = (0..5)
            .map(|i| example(i, vec![i as f64, 0.0], vec![0, 0]))
            .collect();
        assert!(matches!(
            fit_model(&only_empty, ModelKind::Relative, default_class_names(2)),
            Err(Error::Underdetermined { available: 0, .. })
        ));
        assert!(fit_model(&only_empty, ModelKind::Absolute, default_class_names(2)).is_ok());
    }

    #[test]
    fn collinear_features_are_damped_not_fatal() {
        let ex: Vec<_> = (0..10)
            .map(|i| example(i, vec![i as f64, 2.0 * i as f64], vec![i as u32, 1]))
            .collect();
        let m = fit_model(&ex, ModelKind::Absolute, default_class_names(2)).unwrap();
        m.validate().unwrap();
        let out = m.raw_output(&[3.0, 6.0]).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn absolute_ratio_examples() {
        let s = [0.0, 0.0];
        let r = predict_absolute_ratio(&model(ModelKind::Absolute, &[2.0, 2.0]), &s).unwrap();
        assert!(close(r.values(), &[0.5, 0.5], 1e-15));
        let r = predict_absolute_ratio(&model(ModelKind::Absolute, &[3.0, 1.0]), &s).unwrap();
        assert!(close(r.values(), &[0.75, 0.25], 1e-15));
        let r = predict_absolute_ratio(&model(ModelKind::Absolute, &[-1.0, 1.0]), &s).unwrap();
        let z = 1.0 + 1e-6;
        assert!(close(r.values(), &[1e-6 / z, 1.0 / z], 1e-15));
    }

    #[test]
    fn relative_ratio_examples() {
        let s = [0.0, 0.0];
        let r = predict_relative_ratio(&model(ModelKind::Relative, &[0.5, 0.5]), &s).unwrap();
        assert!(close(r.values(), &[0.5, 0.5], 1e-15));
        let r = predict_relative_ratio(&model(ModelKind::Relative, &[0.4, 0.4]), &s).unwrap();
        assert!(close(r.values(), &[0.5, 0.5], 1e-15));
        let r = predict_relative_ratio(&model(ModelKind::Relative, &[0.9, -0.1]), &s).unwrap();
        assert!((r.values()[0] - 1.0).abs() < 2e-6);
        assert!(close(r.values(), &[0.9 / 0.900001, 1e-6 / 0.900001], 1e-15));
        assert!((r.values()[1] - 1.1e-6).abs() < 2e-8);
    }

    #[test]
    fn wrong_kind_rejected() {
        let m = model(ModelKind::Relative, &[0.5, 0.5]);
        assert!(predict_absolute_ratio(&m, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn merge_examples() {
        let r = ratio(&[0.3, 0.7]);
        assert!(close(
            merge_predictions(&r, &r).unwrap().values(),
            &[0.3, 0.7],
            1e-12
        ));

        let m = merge_unnormalized(&ratio(&[0.8, 0.2]), &ratio(&[0.2, 0.8])).unwrap();
        assert!(close(&m, &[0.4, 0.4], 1e-12));
        let m = merge_predictions(&ratio(&[0.8, 0.2]), &ratio(&[0.2, 0.8])).unwrap();
        assert!(close(m.values(), &[0.5, 0.5], 1e-12));

        let m = merge_predictions(&ratio(&[1.0, 0.0]), &ratio(&[0.5, 0.5])).unwrap();
        assert_eq!(m.values(), &[1.0, 0.0]);

        assert!(matches!(
            merge_predictions(&ratio(&[1.0]), &ratio(&[0.5, 0.5])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn square_examples() {
        let l = ratio(&[0.5, 0.5]);
        let a = ratio(&[0.6, 0.4]);
        let s = square_prediction(&l, &a, &a).unwrap();
        // u = [0.72, 0.32]; 0.72 / 1.04 = 9/13
        assert!(close(s.values(), &[9.0 / 13.0, 4.0 / 13.0], 1e-7));
        assert!((s.values()[0] - 0.6923).abs() < 1e-4);

        let l = ratio(&[0.2, 0.3, 0.5]);
        // ε-smoothing of the divisor perturbs the identity at the 1e-8 level
        assert!(close(
            square_prediction(&l, &l, &l).unwrap().values(),
            l.values(),
            1e-7
        ));

        let u = ratio(&[0.5, 0.5]);
        assert!(close(
            square_prediction(&u, &u, &u).unwrap().values(),
            &[0.5, 0.5],
            1e-15
        ));
    }

    #[test]
    fn square_with_zero_label_class_is_finite() {
        let l = ratio(&[1.0, 0.0]);
        let a = ratio(&[0.6, 0.4]);
        let s = square_prediction(&l, &a, &a).unwrap();
        assert!(s.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn exponent_one_is_merge() {
        let l = ratio(&[0.2, 0.8]);
        let a = ratio(&[0.6, 0.4]);
        let r = ratio(&[0.3, 0.7]);
        let s = shift_prediction(&l, &a, &r, 1.0).unwrap();
        let m = merge_predictions(&a, &r).unwrap();
        assert!(close(s.values(), m.values(), 1e-12));
        let two = shift_prediction(&l, &a, &r, 2.0).unwrap();
        let generic = shift_prediction(&l, &a, &r, 2.0 + 1e-15).unwrap();
        assert!(close(two.values(), generic.values(), 1e-9));
    }

    fn triple() -> impl Strategy<Value = (ClassRatio, ClassRatio, ClassRatio)> {
        (2usize..8).prop_flat_map(|n| {
            let r = move || {
                prop::collection::vec(0.01f64..1.0, n)
                    .prop_map(move |w| ClassRatio::normalized(default_class_names(n), &w).unwrap())
            };
            (r(), r(), r())
        })
    }

    proptest! {
        #[test]
        fn squaring_multiplies_relative_change((l, a, r) in triple()) {
            let label = smooth(l.values());
            let merged = merge_unnormalized(&a, &r).unwrap();
            let u: Vec<f64> = a.values().iter().zip(r.values()).zip(&label)
                .map(|((x, y), z)| x * y / z).collect();
            for c in 0..l.len() {
                let rel = merged[c] / label[c];
                prop_assert!((u[c] / label[c] - rel * rel).abs() <= 1e-9 * (rel * rel).max(1.0));
            }
        }

        #[test]
        fn outputs_are_ratios((l, a, r) in triple()) {
            for out in [merge_predictions(&a, &r).unwrap(), square_prediction(&l, &a, &r).unwrap()] {
                prop_assert!(out.values().iter().all(|v| *v >= 0.0));
                prop_assert!((out.values().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}
