use serde::{Deserialize, Serialize};

use super::detector::{detect_with_probs, ema_update, perturb, softmax, ToyDetectorWeights};
use super::loss::{classification_losses, hard_cross_entropy, LossReport};
use super::scene::{ground_truth, SyntheticScene};
use crate::act::{
    dynamic_selection, expected_counts, select_thresholds, split_indices, ActConfig, PseudoLabelSet,
};
use crate::detection::{nms_indices, DetectionRecord};
use crate::distribution::ClassRatio;
use crate::error::{Error, Result};
use crate::evaluation::{pseudo_label_f1, GroundTruthSet};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// EMA coefficient for the teacher.
    pub alpha: f64,
    /// Weight of the unsupervised loss.
    pub lambda: f64,
    pub sigma_weak: f64,
    pub sigma_strong: f64,
    pub dropout_strong: f64,
    pub burn_in_iters: usize,
    pub total_iters: usize,
    pub refresh_every: usize,
    pub learning_rate: f64,
    pub nms_iou: f64,
    pub f1_iou: f64,
    pub seed: u64,
    pub act: ActConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            alpha: 0.999,
            lambda: 1.0,
            sigma_weak: 0.05,
            sigma_strong: 0.3,
            dropout_strong: 0.2,
            burn_in_iters: 200,
            total_iters: 600,
            refresh_every: 10,
            learning_rate: 0.05,
            nms_iou: 0.5,
            f1_iou: 0.5,
            seed: 0,
            act: ActConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(Error::invalid(msg)) };
        check(
            self.alpha > 0.0 && self.alpha < 1.0,
            format!("alpha must lie in (0, 1), got {}", self.alpha),
        )?;
        check(
            self.lambda >= 0.0 && self.lambda.is_finite(),
            format!("lambda must be >= 0, got {}", self.lambda),
        )?;
        check(
            self.sigma_weak >= 0.0
                && self.sigma_strong >= 0.0
                && self.sigma_weak.is_finite()
                && self.sigma_strong.is_finite(),
            "augmentation noise must be finite and >= 0".into(),
        )?;
        check(
            (0.0..1.0).contains(&self.dropout_strong),
            format!("dropout_strong must lie in [0, 1), got {}", self.dropout_strong),
        )?;
        check(
            self.burn_in_iters < self.total_iters,
            format!(
                "burn_in_iters ({}) must be below total_iters ({})",
                self.burn_in_iters, self.total_iters
            ),
        )?;
        check(self.refresh_every >= 1, "refresh_every must be at least 1".into())?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be positive".into(),
        )?;
        check(
            self.nms_iou > 0.0 && self.nms_iou < 1.0,
            "nms_iou must lie in (0, 1)".into(),
        )?;
        check(
            self.f1_iou > 0.0 && self.f1_iou < 1.0,
            "f1_iou must lie in (0, 1)".into(),
        )?;
        self.act.validate()
    }
}

/// State recorded at each pseudo-label refresh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub n_o: f64,
    pub mean_conf: f64,
    pub pl_f1: f64,
    pub teacher_target_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// One report per student step, burn-in included.
    pub losses: Vec<LossReport>,
    /// Student accuracy on clean target features when burn-in ends.
    pub burn_in_target_acc: f64,
    pub teacher: ToyDetectorWeights,
}

impl Trace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }
}

/// Pseudo-label targets fixed at the last refresh: (scene, object, class)
/// for reliable labels and (scene, object, teacher distribution) for
/// unreliable ones.
#[derive(Default)]
struct PseudoTargets {
    reliable: Vec<(usize, usize, usize)>,
    unreliable: Vec<(usize, usize, Vec<f64>)>,
}

struct Refresh {
    row: TraceRow,
    targets: PseudoTargets,
}

fn check_scenes(scenes: &[SyntheticScene], n_classes: usize, d_feat: usize, what: &str) -> Result<()> {
    if scenes.is_empty() {
        return Err(Error::EmptyDataset(format!("no {what} scenes")));
    }
    for s in scenes {
        for (feature, _) in s.regions() {
            if feature.len() != d_feat {
                return Err(Error::dim(format!(
                    "{what} scene {}: feature of length {}, expected {d_feat}",
                    s.image_id,
                    feature.len()
                )));
            }
        }
        for o in &s.objects {
            if o.class_id >= n_classes {
                return Err(Error::dim(format!(
                    "{what} scene {}: class {} outside {n_classes} classes",
                    s.image_id, o.class_id
                )));
            }
        }
    }
    Ok(())
}

fn accuracy(w: &ToyDetectorWeights, scenes: &[SyntheticScene]) -> f64 {
    let (mut hit, mut n) = (0usize, 0usize);
    for o in scenes.iter().flat_map(|s| &s.objects) {
        hit += usize::from(w.predict(&o.feature) == o.class_id);
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        hit as f64 / n as f64
    }
}

/// Augmented feature views for every region, one RNG stream per scene.
fn views(
    scenes: &[SyntheticScene],
    seed: u64,
    tag: &str,
    iter: usize,
    sigma: f64,
    dropout: f64,
) -> Vec<Vec<Vec<f64>>> {
    scenes
        .iter()
        .map(|s| {
            let mut r = rng::stream(seed, tag, &[iter as u64, rng::id_hash(&s.image_id)]);
            s.regions()
                .map(|(f, _)| perturb(f, sigma, dropout, &mut r))
                .collect()
        })
        .collect()
}

fn refresh(
    teacher: &ToyDetectorWeights,
    target: &[SyntheticScene],
    truth: &GroundTruthSet,
    prior: &ClassRatio,
    cfg: &SimConfig,
    iter: usize,
) -> Result<Refresh> {
    let mut records: Vec<DetectionRecord> = Vec::new();
    let mut origin: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for (si, scene) in target.iter().enumerate() {
        let seed = rng::stream_seed(cfg.seed, "weak", &[iter as u64, rng::id_hash(&scene.image_id)]);
        for (oi, (rec, probs)) in detect_with_probs(teacher, scene, cfg.sigma_weak, 0.0, seed)
            .into_iter()
            .enumerate()
        {
            records.push(rec);
            origin.push((si, oi, probs));
        }
    }
    let kept = nms_indices(&records, cfg.nms_iou);
    let records: Vec<DetectionRecord> = kept.iter().map(|&i| records[i].clone()).collect();
    let origin: Vec<_> = kept.into_iter().map(|i| origin[i].clone()).collect();

    let n_u = target.len();
    let selection = dynamic_selection(&records, prior, n_u, &cfg.act)?;
    let thresholds = select_thresholds(&records, &expected_counts(prior, selection.n_o, n_u));
    let (reliable, unreliable) = split_indices(&records, &thresholds, cfg.act.reliable_fraction);

    let labels = PseudoLabelSet {
        reliable: reliable.iter().map(|&i| records[i].clone()).collect(),
        unreliable: unreliable.iter().map(|&i| records[i].clone()).collect(),
    };
    let row = TraceRow {
        iter,
        n_o: selection.n_o,
        mean_conf: crate::act::mean_confidence(&labels),
        pl_f1: pseudo_label_f1(&labels, truth, cfg.f1_iou).f1,
        teacher_target_acc: accuracy(teacher, target),
    };
    let targets = PseudoTargets {
        reliable: reliable
            .iter()
            .map(|&i| (origin[i].0, origin[i].1, records[i].class_id))
            .collect(),
        unreliable: unreliable.into_iter().map(|i| origin[i].clone()).collect(),
    };
    Ok(Refresh { row, targets })
}

/// Adds the mean cross-entropy gradient of `items` (feature, target
/// distribution) scaled by `weight`.
fn accumulate(
    grad: &mut ToyDetectorWeights,
    student: &ToyDetectorWeights,
    items: &[(&[f64], Vec<f64>)],
    weight: f64,
) {
    if items.is_empty() || weight == 0.0 {
        return;
    }
    let scale = weight / items.len() as f64;
    for (f, q) in items {
        let p = softmax(&student.logits(f));
        let residual: Vec<f64> = p.iter().zip(q).map(|(pc, qc)| pc - qc).collect();
        grad.add_outer(f, &residual, scale);
    }
}

fn one_hot(n: usize, c: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[c] = 1.0;
    v
}

/// Burn-in on source, then Mean Teacher self-training on target with
/// pseudo-labels chosen by dynamic ACT under `prior`.
///
/// Pseudo-labels are refreshed every `refresh_every` iterations from the
/// teacher's weak-view detections, and once more after the last step so the
/// final row reflects the final teacher. The student runs full-batch
/// gradient descent; the teacher is an EMA of the student, initialised from
/// it when burn-in ends. All randomness comes from streams keyed by
/// (seed, purpose, iteration, image id).
pub fn run_self_training(
    source: &[SyntheticScene],
    target: &[SyntheticScene],
    prior: &ClassRatio,
    cfg: &SimConfig,
) -> Result<Trace> {
    cfg.validate()?;
    let n_c = prior.len();
    let d_feat = source
        .iter()
        .chain(target)
        .flat_map(SyntheticScene::regions)
        .map(|(f, _)| f.len())
        .next()
        .ok_or_else(|| Error::EmptyDataset("scenes contain no regions".into()))?;
    check_scenes(source, n_c, d_feat, "source")?;
    check_scenes(target, n_c, d_feat, "target")?;
    let truth = ground_truth(target);

    let mut student = ToyDetectorWeights::zeros(n_c, d_feat);
    let mut teacher = student.clone();
    let mut losses = Vec::with_capacity(cfg.total_iters);
    let mut rows = Vec::new();
    let mut targets = PseudoTargets::default();
    let mut burn_in_target_acc = 0.0;

    for iter in 0..cfg.total_iters {
        if iter == cfg.burn_in_iters {
            teacher = student.clone();
            burn_in_target_acc = accuracy(&student, target);
        }
        let self_training = iter >= cfg.burn_in_iters;
        if self_training && (iter - cfg.burn_in_iters).is_multiple_of(cfg.refresh_every) {
            let r = refresh(&teacher, target, &truth, prior, cfg, iter)?;
            rows.push(r.row);
            targets = r.targets;
        }

        let src_views = views(source, cfg.seed, "source", iter, cfg.sigma_weak, 0.0);
        let sup: Vec<(&[f64], Vec<f64>)> = source
            .iter()
            .zip(&src_views)
            .flat_map(|(s, v)| {
                s.objects
                    .iter()
                    .zip(v)
                    .map(|(o, f)| (f.as_slice(), one_hot(n_c, o.class_id)))
            })
            .collect();
        let sup_logits: Vec<Vec<f64>> = sup.iter().map(|(f, _)| student.logits(f)).collect();
        let sup_labels: Vec<usize> = source
            .iter()
            .flat_map(|s| s.objects.iter().map(|o| o.class_id))
            .collect();
        let l_sup = hard_cross_entropy(&sup_logits, &sup_labels)?;

        let mut grad = ToyDetectorWeights::zeros(n_c, d_feat);
        accumulate(&mut grad, &student, &sup, 1.0);

        let report = if self_training {
            let strong = views(
                target,
                cfg.seed,
                "strong",
                iter,
                cfg.sigma_strong,
                cfg.dropout_strong,
            );
            let hard: Vec<(&[f64], Vec<f64>)> = targets
                .reliable
                .iter()
                .map(|&(s, o, c)| (strong[s][o].as_slice(), one_hot(n_c, c)))
                .collect();
            let soft: Vec<(&[f64], Vec<f64>)> = targets
                .unreliable
                .iter()
                .map(|(s, o, q)| (strong[*s][*o].as_slice(), q.clone()))
                .collect();
            let logits = |items: &[(&[f64], Vec<f64>)]| -> Vec<Vec<f64>> {
                items.iter().map(|(f, _)| student.logits(f)).collect()
            };
            let hard_labels: Vec<usize> = targets.reliable.iter().map(|r| r.2).collect();
            let soft_targets: Vec<Vec<f64>> = soft.iter().map(|(_, q)| q.clone()).collect();
            let (l_hard, l_soft) =
                classification_losses(&logits(&hard), &hard_labels, &logits(&soft), &soft_targets)?;
            accumulate(&mut grad, &student, &hard, cfg.lambda);
            accumulate(&mut grad, &student, &soft, cfg.lambda);
            LossReport::new(l_sup, l_hard, l_soft, cfg.lambda)
        } else {
            LossReport::new(l_sup, 0.0, 0.0, cfg.lambda)
        };
        losses.push(report);

        student.descend(&grad, cfg.learning_rate);
        if self_training {
            teacher = ema_update(&teacher, &student, cfg.alpha)?;
        }
    }

    rows.push(refresh(&teacher, target, &truth, prior, cfg, cfg.total_iters)?.row);

    Ok(Trace {
        rows,
        losses,
        burn_in_target_acc,
        teacher,
    })
}
