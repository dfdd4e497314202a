//! Seeded synthetic data: ratio-prediction datasets and shifted detection
//! scenarios for the self-training simulator.
//!
//! Every image draws a latent context `π` (a mixture over scene types) from a
//! domain-specific Dirichlet. Expected per-class object counts are linear in
//! `π`, and similarity scores are a noisy linear read-out of `π`, so the
//! linear ratio predictors are well specified but attenuated by the read-out
//! noise.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::detection::BBox;
use crate::distribution::{default_class_names, kl_divergence, ClassRatio};
use crate::error::{Error, Result};
use crate::evaluation::{Dataset, GroundTruthObject, GroundTruthSet};
use crate::regression::{LabelledExample, PredictConfig, RatioPredictor};
use crate::rng;
use crate::sim::{ClutterRegion, Domain, SceneObject, SyntheticScene};
use crate::similarity::SimilarityVector;

/// Temperature applied to the synthetic cosine similarities.
const SIM_SCALE: f64 = 100.0;
const SIM_BASE: f64 = 0.2;
const SIM_GAIN: f64 = 0.05;

/// Dirichlet draw via normalized Gamma variates.
fn dirichlet(alpha: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("positive concentration").sample(rng))
        .collect();
    let total: f64 = g.iter().sum();
    if total > 0.0 {
        g.iter().map(|v| v / total).collect()
    } else {
        vec![1.0 / alpha.len() as f64; alpha.len()]
    }
}

/// Latent-context model shared by every domain drawn from it.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWorld {
    pub n_classes: usize,
    /// `composition[k][c]`: expected share of class `c` in scene type `k`.
    pub composition: Vec<Vec<f64>>,
    /// `readout[c][k]`: similarity loading of prompt `c` on scene type `k`.
    pub readout: Vec<Vec<f64>>,
    /// Mean objects per image.
    pub objects_per_image: f64,
    /// Dirichlet concentration of per-image contexts around the domain mean.
    pub concentration: f64,
    /// Standard deviation of read-out noise, in units of the read-out gain.
    pub similarity_noise: f64,
}

impl ContextWorld {
    /// A random world with `n` scene types, each dominated by one class.
    pub fn random(n_classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let composition = (0..n_classes)
            .map(|k| {
                let m = dirichlet(&vec![0.7; n_classes], rng);
                m.iter()
                    .enumerate()
                    .map(|(c, v)| 0.5 * v + if c == k { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        let jitter = Normal::new(0.0, 0.1).expect("valid sigma");
        let readout = (0..n_classes)
            .map(|c| {
                (0..n_classes)
                    .map(|k| f64::from(u8::from(c == k)) + jitter.sample(rng))
                    .collect()
            })
            .collect();
        Self {
            n_classes,
            composition,
            readout,
            objects_per_image: 6.0,
            concentration: 4.0,
            similarity_noise: 0.2,
        }
    }

    /// One class per scene type: counts follow the context directly.
    pub fn identity(n_classes: usize) -> Self {
        let eye: Vec<Vec<f64>> = (0..n_classes)
            .map(|i| (0..n_classes).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        Self {
            n_classes,
            composition: eye.clone(),
            readout: eye,
            objects_per_image: 5.0,
            concentration: 4.0,
            similarity_noise: 0.2,
        }
    }

    /// Class ratio expected under a domain whose mean context is `mean`.
    pub fn expected_ratio(&self, mean: &[f64]) -> Result<ClassRatio> {
        let w: Vec<f64> = (0..self.n_classes)
            .map(|c| {
                mean.iter()
                    .zip(&self.composition)
                    .map(|(p, row)| p * row[c])
                    .sum()
            })
            .collect();
        ClassRatio::normalized(default_class_names(self.n_classes), &w)
    }

    fn draw_context(&self, mean: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let alpha: Vec<f64> = mean.iter().map(|m| m * self.concentration + 1e-3).collect();
        dirichlet(&alpha, rng)
    }

    fn draw_counts(&self, context: &[f64], rng: &mut ChaCha8Rng) -> Vec<u32> {
        (0..self.n_classes)
            .map(|c| {
                let lambda: f64 = context
                    .iter()
                    .zip(&self.composition)
                    .map(|(p, row)| p * row[c])
                    .sum::<f64>()
                    * self.objects_per_image;
                if lambda <= 0.0 {
                    0
                } else {
                    Poisson::new(lambda).expect("positive rate").sample(rng) as u32
                }
            })
            .collect()
    }

    fn draw_similarity(&self, context: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let noise = Normal::new(0.0, self.similarity_noise).expect("valid sigma");
        self.readout
            .iter()
            .map(|row| {
                let signal: f64 = row.iter().zip(context).map(|(g, p)| g * p).sum();
                SIM_SCALE * (SIM_BASE + SIM_GAIN * (signal + noise.sample(rng)))
            })
            .collect()
    }

    /// Draws one image: (context, counts, similarity scores).
    fn draw_image(&self, mean: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u32>, Vec<f64>) {
        let context = self.draw_context(mean, rng);
        let counts = self.draw_counts(&context, rng);
        let sims = self.draw_similarity(&context, rng);
        (context, counts, sims)
    }

    pub fn dataset(&self, name: &str, mean: &[f64], n_images: usize, rng: &mut ChaCha8Rng) -> Dataset {
        let examples = (0..n_images)
            .map(|i| {
                let (_, counts, scores) = self.draw_image(mean, rng);
                LabelledExample {
                    similarity: SimilarityVector {
                        image_id: format!("{name}_{i:05}"),
                        scores,
                    },
                    counts,
                }
            })
            .collect();
        Dataset {
            name: name.to_string(),
            examples,
        }
    }
}

/// Annotation boxes for count-only examples, laid out left to right.
pub fn annotations_from_counts(dataset: &Dataset) -> GroundTruthSet {
    let mut truth = GroundTruthSet::default();
    for e in &dataset.examples {
        let objects = e
            .counts
            .iter()
            .enumerate()
            .flat_map(|(c, &k)| std::iter::repeat_n(c, k as usize))
            .enumerate()
            .map(|(slot, class_id)| {
                let x = 40.0 * slot as f64;
                GroundTruthObject {
                    class_id,
                    bbox: BBox::new(x, 0.0, x + 30.0, 30.0).expect("positive extent"),
                }
            })
            .collect();
        truth.insert(e.similarity.image_id.clone(), objects);
    }
    truth
}

/// Moves `base` toward scene type `k` until the expected class ratio is at
/// least `target_kl` nats from the base ratio. `None` when even a pure scene
/// type falls short.
fn shifted_mean(world: &ContextWorld, base: &[f64], k: usize, target_kl: f64) -> Result<Option<Vec<f64>>> {
    let base_ratio = world.expected_ratio(base)?;
    let toward = |t: f64| -> Vec<f64> {
        base.iter()
            .enumerate()
            .map(|(i, b)| (1.0 - t) * b + if i == k { t } else { 0.0 })
            .collect()
    };
    let kl_at = |t: f64| -> Result<f64> { kl_divergence(&base_ratio, &world.expected_ratio(&toward(t))?) };
    if kl_at(1.0)? < target_kl {
        return Ok(None);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if kl_at(mid)? < target_kl {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(toward(hi)))
}

/// A labelled/unlabelled pair with a controlled class-ratio shift.
#[derive(Debug, Clone)]
pub struct RatioBenchmark {
    pub classes: Vec<String>,
    pub labelled: Dataset,
    pub unlabelled: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatioBenchmarkConfig {
    pub n_classes: usize,
    pub n_labelled: usize,
    pub n_unlabelled: usize,
    /// KL between expected labelled and unlabelled ratios, in nats.
    pub shift_kl: f64,
}

impl Default for RatioBenchmarkConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_labelled: 400,
            n_unlabelled: 400,
            shift_kl: 0.25,
        }
    }
}

pub fn ratio_benchmark(cfg: &RatioBenchmarkConfig, seed: u64) -> Result<RatioBenchmark> {
    if cfg.n_classes < 2 {
        return Err(Error::invalid("a class-ratio shift needs at least two classes"));
    }
    let mut r = rng::stream(seed, "ratio-benchmark", &[]);
    let world = ContextWorld::random(cfg.n_classes, &mut r);
    let base = dirichlet(&vec![3.0; cfg.n_classes], &mut r);
    let start = r.random_range(0..cfg.n_classes);
    let shifted = (0..cfg.n_classes)
        .map(|i| shifted_mean(&world, &base, (start + i) % cfg.n_classes, cfg.shift_kl))
        .find_map(|m| m.transpose())
        .transpose()?
        .ok_or_else(|| Error::invalid("no scene type reaches the requested shift"))?;
    Ok(RatioBenchmark {
        classes: default_class_names(cfg.n_classes),
        labelled: world.dataset("labelled", &base, cfg.n_labelled, &mut r),
        unlabelled: world.dataset("unlabelled", &shifted, cfg.n_unlabelled, &mut r),
    })
}

/// `n` datasets drawn from one world with different mean contexts.
pub fn synthetic_datasets(n: usize, n_classes: usize, images_per_dataset: usize, seed: u64) -> Vec<Dataset> {
    let mut r = rng::stream(seed, "datasets", &[]);
    let world = ContextWorld::random(n_classes, &mut r);
    (0..n)
        .map(|i| {
            let mean = dirichlet(&vec![1.5; n_classes], &mut r);
            world.dataset(&format!("d{i}"), &mean, images_per_dataset, &mut r)
        })
        .collect()
}

/// Detection scenario with both an appearance shift and a class-ratio shift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftScenarioConfig {
    pub n_source: usize,
    pub n_target: usize,
    /// Mean class shares of the source domain; its length sets the class count.
    pub source_prior: Vec<f64>,
    pub target_prior: Vec<f64>,
    pub d_feat: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
    pub feature_noise: f64,
    /// Minimum per-object signal strength; strengths are uniform in `[min, 1]`.
    pub min_signal: f64,
    /// Target-domain offset toward the class-0 mean.
    pub appearance_shift: f64,
    pub objects_per_image: f64,
    /// Mean number of unannotated clutter regions per image.
    pub clutter_per_image: f64,
    /// Standard deviation of clutter features around the origin.
    pub clutter_noise: f64,
    /// Read-out noise of the similarity vectors.
    pub similarity_noise: f64,
}

impl Default for ShiftScenarioConfig {
    fn default() -> Self {
        Self {
            n_source: 150,
            n_target: 150,
            source_prior: vec![0.5, 0.2, 0.2, 0.1],
            target_prior: vec![0.1, 0.2, 0.3, 0.4],
            d_feat: 8,
            separation: 2.5,
            feature_noise: 0.8,
            min_signal: 0.3,
            appearance_shift: 0.5,
            objects_per_image: 5.0,
            clutter_per_image: 8.0,
            clutter_noise: 0.3,
            similarity_noise: 0.35,
        }
    }
}

impl ShiftScenarioConfig {
    pub fn n_classes(&self) -> usize {
        self.source_prior.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_classes();
        if n < 2 || self.target_prior.len() != n {
            return Err(Error::dim(format!(
                "source and target priors need the same length >= 2, got {} and {}",
                n,
                self.target_prior.len()
            )));
        }
        for p in [&self.source_prior, &self.target_prior] {
            ClassRatio::normalized(default_class_names(n), p)?;
        }
        if self.d_feat < n {
            return Err(Error::invalid("d_feat must be at least the number of classes"));
        }
        let finite_nonneg = [
            self.separation,
            self.feature_noise,
            self.appearance_shift,
            self.objects_per_image,
            self.clutter_per_image,
            self.clutter_noise,
            self.similarity_noise,
        ]
        .iter()
        .all(|v| v.is_finite() && *v >= 0.0);
        if !finite_nonneg || !(0.0..=1.0).contains(&self.min_signal) {
            return Err(Error::invalid("scenario parameters out of range"));
        }
        if self.n_source == 0 || self.n_target == 0 {
            return Err(Error::EmptyDataset("both domains need at least one scene".into()));
        }
        Ok(())
    }
}

/// Scenes and per-scene similarity vectors for both domains.
#[derive(Debug, Clone)]
pub struct ShiftScenario {
    pub classes: Vec<String>,
    pub source: Vec<SyntheticScene>,
    pub target: Vec<SyntheticScene>,
    pub source_similarities: Vec<SimilarityVector>,
    pub target_similarities: Vec<SimilarityVector>,
}

impl ShiftScenario {
    fn ratio_of(&self, scenes: &[SyntheticScene]) -> Result<ClassRatio> {
        let n = self.classes.len();
        let mut counts = vec![0.0; n];
        for s in scenes {
            for (acc, c) in counts.iter_mut().zip(s.class_counts(n)) {
                *acc += f64::from(c);
            }
        }
        ClassRatio::normalized(self.classes.clone(), &counts)
    }

    /// Class ratio of the annotated source scenes.
    pub fn labelled_prior(&self) -> Result<ClassRatio> {
        self.ratio_of(&self.source)
    }

    /// Class ratio of the target scenes' hidden annotations.
    pub fn true_prior(&self) -> Result<ClassRatio> {
        self.ratio_of(&self.target)
    }

    /// Squared-shift prediction from source annotations and target similarities.
    pub fn predicted_prior(&self) -> Result<ClassRatio> {
        predicted_prior(
            &self.source,
            &self.source_similarities,
            &self.target_similarities,
            &self.classes,
        )
    }
}

/// Fits the ratio predictor on labelled scenes and their similarity vectors,
/// then predicts the squared-shift ratio for the unlabelled similarities.
pub fn predicted_prior(
    labelled: &[SyntheticScene],
    labelled_sims: &[SimilarityVector],
    unlabelled_sims: &[SimilarityVector],
    classes: &[String],
) -> Result<ClassRatio> {
    if labelled.len() != labelled_sims.len() {
        return Err(Error::dim(format!(
            "{} labelled scenes but {} similarity vectors",
            labelled.len(),
            labelled_sims.len()
        )));
    }
    let examples: Vec<LabelledExample> = labelled
        .iter()
        .zip(labelled_sims)
        .map(|(s, v)| LabelledExample {
            similarity: v.clone(),
            counts: s.class_counts(classes.len()),
        })
        .collect();
    let predictor = RatioPredictor::fit(&examples, classes.to_vec())?;
    Ok(predictor
        .predict(unlabelled_sims, &PredictConfig::default())?
        .squared)
}

pub fn shifted_scenario(cfg: &ShiftScenarioConfig, seed: u64) -> Result<ShiftScenario> {
    cfg.validate()?;
    let n_c = cfg.n_classes();
    let world = ContextWorld {
        objects_per_image: cfg.objects_per_image,
        similarity_noise: cfg.similarity_noise,
        ..ContextWorld::identity(n_c)
    };
    let clutter_count =
        (cfg.clutter_per_image > 0.0).then(|| Poisson::new(cfg.clutter_per_image).expect("positive rate"));
    let normalize = |p: &[f64]| -> Vec<f64> {
        let t: f64 = p.iter().sum();
        p.iter().map(|v| v / t).collect()
    };
    let means: Vec<Vec<f64>> = (0..n_c)
        .map(|c| {
            (0..cfg.d_feat)
                .map(|j| if j == c { cfg.separation } else { 0.0 })
                .collect()
        })
        .collect();
    // unit vector from the centroid of the class means toward class 0
    let toward0: Vec<f64> = {
        let d: Vec<f64> = (0..cfg.d_feat)
            .map(|j| means[0][j] - means.iter().map(|m| m[j]).sum::<f64>() / n_c as f64)
            .collect();
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        d.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }).collect()
    };

    let build = |domain: Domain, n: usize, mean_ctx: &[f64], offset: f64, r: &mut ChaCha8Rng| {
        let prefix = match domain {
            Domain::Source => "src",
            Domain::Target => "tgt",
        };
        let noise = Normal::new(0.0, cfg.feature_noise).expect("valid sigma");
        let clutter_noise = Normal::new(0.0, cfg.clutter_noise).expect("valid sigma");
        let mut scenes = Vec::with_capacity(n);
        let mut sims = Vec::with_capacity(n);
        for i in 0..n {
            let (_, counts, scores) = world.draw_image(mean_ctx, r);
            let image_id = format!("{prefix}_{i:04}");
            let mut classes: Vec<usize> = counts
                .iter()
                .enumerate()
                .flat_map(|(c, &k)| std::iter::repeat_n(c, k as usize))
                .collect();
            // interleave classes across box slots
            for j in (1..classes.len()).rev() {
                classes.swap(j, r.random_range(0..=j));
            }
            let n_objects = classes.len();
            let objects = classes
                .into_iter()
                .enumerate()
                .map(|(slot, c)| {
                    let signal = r.random_range(cfg.min_signal..=1.0);
                    let feature = means[c]
                        .iter()
                        .zip(&toward0)
                        .map(|(m, t)| signal * m + offset * t + noise.sample(r))
                        .collect();
                    let x = 40.0 * slot as f64 + r.random_range(0.0..5.0);
                    let y = r.random_range(0.0..20.0);
                    SceneObject {
                        feature,
                        class_id: c,
                        bbox: BBox::new(x, y, x + 30.0, y + 30.0).expect("positive extent"),
                    }
                })
                .collect();
            let n_clutter = clutter_count.as_ref().map_or(0, |p| p.sample(r) as usize);
            let clutter = (0..n_clutter)
                .map(|k| {
                    let feature = (0..cfg.d_feat).map(|_| clutter_noise.sample(r)).collect();
                    let x = 40.0 * (n_objects + k) as f64 + r.random_range(0.0..5.0);
                    let y = r.random_range(0.0..20.0);
                    ClutterRegion {
                        feature,
                        bbox: BBox::new(x, y, x + 30.0, y + 30.0).expect("positive extent"),
                    }
                })
                .collect();
            sims.push(SimilarityVector {
                image_id: image_id.clone(),
                scores,
            });
            scenes.push(SyntheticScene {
                image_id,
                domain,
                objects,
                clutter,
            });
        }
        (scenes, sims)
    };

    let mut r = rng::stream(seed, "shift-scenario", &[]);
    let (source, source_similarities) = build(
        Domain::Source,
        cfg.n_source,
        &normalize(&cfg.source_prior),
        0.0,
        &mut r,
    );
    let (target, target_similarities) = build(
        Domain::Target,
        cfg.n_target,
        &normalize(&cfg.target_prior),
        cfg.appearance_shift,
        &mut r,
    );
    Ok(ShiftScenario {
        classes: default_class_names(n_c),
        source,
        target,
        source_similarities,
        target_similarities,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_is_seeded() {
        let cfg = RatioBenchmarkConfig {
            n_labelled: 20,
            n_unlabelled: 20,
            ..Default::default()
        };
        let a = ratio_benchmark(&cfg, 3).unwrap();
        let b = ratio_benchmark(&cfg, 3).unwrap();
        assert_eq!(a.labelled, b.labelled);
        assert_eq!(a.unlabelled, b.unlabelled);
        let c = ratio_benchmark(&cfg, 4).unwrap();
        assert_ne!(a.labelled, c.labelled);
    }

    #[test]
    fn shifted_mean_hits_target_kl() {
        let mut r = rng::stream(0, "t", &[]);
        let world = ContextWorld::random(4, &mut r);
        let base = vec![0.25; 4];
        let m = (0..4)
            .find_map(|k| shifted_mean(&world, &base, k, 0.2).unwrap())
            .unwrap();
        let kl = kl_divergence(
            &world.expected_ratio(&base).unwrap(),
            &world.expected_ratio(&m).unwrap(),
        )
        .unwrap();
        assert!((kl - 0.2).abs() < 1e-6, "{kl}");
    }

    #[test]
    fn scenario_shape() {
        let cfg = ShiftScenarioConfig::default();
        let s = shifted_scenario(&cfg, 1).unwrap();
        assert_eq!(s.source.len(), cfg.n_source);
        assert_eq!(s.target_similarities.len(), cfg.n_target);
        assert!(s
            .source
            .iter()
            .flat_map(|x| &x.objects)
            .all(|o| o.feature.len() == cfg.d_feat));
        let src = s.labelled_prior().unwrap();
        let tgt = s.true_prior().unwrap();
        assert!(src.values()[0] > 0.45, "{src:?}");
        assert!(tgt.values()[0] < 0.35, "{tgt:?}");
        let pred = s.predicted_prior().unwrap();
        assert!(pred.values()[0] < src.values()[0]);
    }

    #[test]
    fn datasets_differ() {
        let ds = synthetic_datasets(4, 3, 30, 9);
        assert_eq!(ds.len(), 4);
        assert_ne!(ds[0].examples[0].counts.len(), 0);
        assert!(ds.iter().all(|d| d.examples.len() == 30));
    }
}
