//! Command-line front end. Every command writes its outputs plus a
//! `<command>.manifest.json` into `--out-dir`.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 invalid input, 3 too
//! little data.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::act::{act, dynamic_selection, mean_confidence, ActConfig};
use crate::distribution::{default_class_names, ClassRatio, KlDirection};
use crate::error::{Error, Result};
use crate::evaluation::{f1_sweep, ordered_scenarios, scenario_sweep, Dataset, DEFAULT_IOU_MIN};
use crate::io::{self, KlEntry, KlValues, PredictionReport, PseudoLabelLine, RunManifest, ThresholdReport};
use crate::regression::{labelled_ratio, PredictConfig, RatioPredictor};
use crate::sim::{run_self_training, Domain, SimConfig, SyntheticScene};
use crate::similarity::{per_image_similarity, project_and_normalize, EmbeddingMatrix, ProjectionMatrix};
use crate::synth::{self, RatioBenchmarkConfig, ShiftScenarioConfig};

#[derive(Debug, Parser)]
#[command(
    name = "actshift",
    version,
    about = "Class-ratio prediction and adaptive class thresholds for self-training"
)]
pub struct Cli {
    /// Seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Directory receiving outputs and manifests.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Class names, one per line, in class-id order.
    #[arg(long, global = true)]
    pub classes: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit absolute and relative ratio models on labelled data.
    Fit(FitArgs),
    /// Predict the class ratio of an unlabelled set.
    PredictRatio(PredictArgs),
    /// Choose per-class thresholds and emit pseudo-labels.
    Thresholds(ThresholdArgs),
    /// Run the toy Mean Teacher loop and write a trace.
    Simulate(SimulateArgs),
    /// Evaluation sweeps.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Turn image and prompt embeddings into similarity vectors.
    Similarity(SimilarityArgs),
    /// Write synthetic input files.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[arg(long)]
    pub similarities: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub absolute: PathBuf,
    #[arg(long)]
    pub relative: PathBuf,
    /// Similarity vectors of the unlabelled images.
    #[arg(long)]
    pub similarities: PathBuf,
    #[arg(long)]
    pub labelled_ratio: PathBuf,
    /// Power applied to the predicted shift from the labelled ratio.
    #[arg(long, default_value_t = 2.0)]
    pub shift_exponent: f64,
    /// Also report the merged prediction before normalization.
    #[arg(long)]
    pub report_unnormalized_merge: bool,
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
pub struct ActArgs {
    /// Target mean confidence of selected pseudo-labels.
    #[arg(long, default_value_t = 0.6)]
    pub tau: f64,
    /// Step of the objects-per-image search.
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    #[arg(long, default_value_t = 0.5)]
    pub reliable_fraction: f64,
    /// Upper bound on objects per image; defaults to detections per image + delta.
    #[arg(long)]
    pub n_o_cap: Option<f64>,
}

impl ActArgs {
    fn config(&self) -> ActConfig {
        ActConfig {
            tau: self.tau,
            delta_n_o: self.delta,
            reliable_fraction: self.reliable_fraction,
            n_o_cap: self.n_o_cap,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ThresholdArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub ratio: PathBuf,
    /// Number of unlabelled images the detections come from.
    #[arg(long)]
    pub n_u: usize,
    /// Use this objects-per-image budget instead of searching for one.
    #[arg(long)]
    pub n_o: Option<f64>,
    #[command(flatten)]
    pub act: ActArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    /// Class ratio of the annotated source scenes.
    Labelled,
    /// Squared-shift prediction from similarity vectors.
    Predicted,
    /// Class ratio of the hidden target annotations.
    True,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    /// Scene file; a synthetic shifted scenario is generated when absent.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    /// Source similarity vectors, needed for `--prior predicted` with `--scenes`.
    #[arg(long, requires = "scenes")]
    pub source_similarities: Option<PathBuf>,
    #[arg(long, requires = "scenes")]
    pub target_similarities: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PriorKind::Predicted)]
    pub prior: PriorKind,
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, default_value_t = 0.999)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 200)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 600)]
    pub iters: usize,
    #[arg(long, default_value_t = 10)]
    pub refresh_every: usize,
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.05)]
    pub sigma_weak: f64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma_strong: f64,
    #[arg(long, default_value_t = 0.2)]
    pub dropout_strong: f64,
    #[command(flatten)]
    pub act: ActArgs,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct ScenarioArgs {
    #[arg(long, default_value_t = 150)]
    pub n_source: usize,
    #[arg(long, default_value_t = 150)]
    pub n_target: usize,
    /// Comma-separated mean class shares of the source domain.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.2, 0.2, 0.1])]
    pub source_prior: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.2, 0.3, 0.4])]
    pub target_prior: Vec<f64>,
    /// Target-domain feature offset toward class 0.
    #[arg(long, default_value_t = 0.5)]
    pub appearance_shift: f64,
}

impl ScenarioArgs {
    fn config(&self) -> ShiftScenarioConfig {
        ShiftScenarioConfig {
            n_source: self.n_source,
            n_target: self.n_target,
            source_prior: self.source_prior.clone(),
            target_prior: self.target_prior.clone(),
            appearance_shift: self.appearance_shift,
            ..ShiftScenarioConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KlDirectionArg {
    /// D(true ‖ predicted)
    TrueToPredicted,
    /// D(predicted ‖ true)
    PredictedToTrue,
}

impl From<KlDirectionArg> for KlDirection {
    fn from(d: KlDirectionArg) -> Self {
        match d {
            KlDirectionArg::TrueToPredicted => KlDirection::TrueToPredicted,
            KlDirectionArg::PredictedToTrue => KlDirection::PredictedToTrue,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// KL of labelled, merged and squared ratios over every ordered dataset pair.
    KlSweep(KlSweepArgs),
    /// Pseudo-label F1 against mean confidence over an objects-per-image grid.
    F1Sweep(F1SweepArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct KlSweepArgs {
    /// Dataset as NAME=SIMILARITIES.jsonl,ANNOTATIONS.jsonl; repeatable.
    #[arg(long = "dataset", value_name = "NAME=SIMS,ANNOTATIONS")]
    pub datasets: Vec<String>,
    /// Generate this many synthetic datasets instead.
    #[arg(long, conflicts_with = "datasets")]
    pub synthetic: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 200)]
    pub images_per_dataset: usize,
    #[arg(long, value_enum, default_value_t = KlDirectionArg::TrueToPredicted)]
    pub kl_direction: KlDirectionArg,
    #[arg(long, default_value_t = 2.0)]
    pub shift_exponent: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct F1SweepArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub ratio: PathBuf,
    #[arg(long)]
    pub n_u: usize,
    #[arg(long, default_value_t = DEFAULT_IOU_MIN)]
    pub iou: f64,
    #[command(flatten)]
    pub act: ActArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct SimilarityArgs {
    /// Image embeddings, `id,dim0,...`.
    #[arg(long)]
    pub images: PathBuf,
    /// Prompt embeddings in class order, `id,dim0,...`.
    #[arg(long)]
    pub prompts: PathBuf,
    /// Image projection matrix rows, `id,dim0,...`; identity when absent.
    #[arg(long)]
    pub image_projection: Option<PathBuf>,
    #[arg(long)]
    pub text_projection: Option<PathBuf>,
    /// Log of the similarity temperature.
    #[arg(long, default_value_t = 100f64.ln())]
    pub logit_scale: f64,
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// Labelled and unlabelled similarity/annotation files with a ratio shift.
    RatioBenchmark(RatioBenchArgs),
    /// Source/target scenes with similarity vectors.
    Scenario(ScenarioArgs),
}

#[derive(Debug, Args, Serialize, Clone, Copy)]
pub struct RatioBenchArgs {
    #[arg(long, default_value_t = 4)]
    pub n_classes: usize,
    #[arg(long, default_value_t = 400)]
    pub n_labelled: usize,
    #[arg(long, default_value_t = 400)]
    pub n_unlabelled: usize,
    #[arg(long, default_value_t = 0.25)]
    pub shift_kl: f64,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let ctx = Context {
        seed: cli.seed,
        out_dir: &cli.out_dir,
        classes: cli.classes.as_deref().map(io::read_classes).transpose()?,
        classes_path: cli.classes.as_deref(),
    };
    match &cli.command {
        Command::Fit(a) => cmd_fit(&ctx, a),
        Command::PredictRatio(a) => cmd_predict_ratio(&ctx, a),
        Command::Thresholds(a) => cmd_thresholds(&ctx, a),
        Command::Simulate(a) => cmd_simulate(&ctx, a),
        Command::Eval(EvalCommand::KlSweep(a)) => cmd_kl_sweep(&ctx, a),
        Command::Eval(EvalCommand::F1Sweep(a)) => cmd_f1_sweep(&ctx, a),
        Command::Similarity(a) => cmd_similarity(&ctx, a),
        Command::Synth(SynthCommand::RatioBenchmark(a)) => cmd_synth_ratio(&ctx, a),
        Command::Synth(SynthCommand::Scenario(a)) => cmd_synth_scenario(&ctx, a),
    }
}

struct Context<'a> {
    seed: u64,
    out_dir: &'a Path,
    classes: Option<Vec<String>>,
    classes_path: Option<&'a Path>,
}

impl Context<'_> {
    /// Class names from `--classes`, else `class_i` for `n` classes.
    fn class_names(&self, n: usize) -> Result<Vec<String>> {
        match &self.classes {
            Some(c) if c.len() != n => Err(Error::dim(format!(
                "class file lists {} classes but the data has {n}",
                c.len()
            ))),
            Some(c) => Ok(c.clone()),
            None => Ok(default_class_names(n)),
        }
    }

    /// Checks names read from a file against `--classes`, if given.
    fn check_names(&self, what: &str, names: &[String]) -> Result<()> {
        match &self.classes {
            Some(c) => io::check_classes(what, names, c),
            None => Ok(()),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn manifest(&self, command: &str, config: &impl Serialize, inputs: &[&Path]) -> Result<RunManifest> {
        let mut m = RunManifest::new(
            command,
            self.seed,
            serde_json::to_value(config).expect("arguments serialize"),
        );
        for p in inputs.iter().copied().chain(self.classes_path) {
            m.add_input(p)?;
        }
        Ok(m)
    }

    fn finish(&self, mut manifest: RunManifest, outputs: &[PathBuf]) -> Result<()> {
        for p in outputs {
            manifest.add_output(p)?;
        }
        io::write_json(&io::manifest_path(self.out_dir, &manifest.command), &manifest)
    }
}

fn cmd_fit(ctx: &Context, a: &FitArgs) -> Result<()> {
    let manifest = ctx.manifest("fit", a, &[&a.similarities, &a.annotations])?;
    let sims = io::read_similarities(&a.similarities)?;
    let n = sims.first().map(|s| s.scores.len()).ok_or_else(|| {
        Error::EmptyDataset(format!("{} has no similarity vectors", a.similarities.display()))
    })?;
    let classes = ctx.class_names(n)?;
    let truth = io::read_annotations(&a.annotations, n)?;
    let examples = io::join_examples(&sims, &truth, n)?;
    let predictor = RatioPredictor::fit(&examples, classes)?;

    let outputs = [
        ctx.out("model_absolute.json"),
        ctx.out("model_relative.json"),
        ctx.out("labelled_ratio.json"),
    ];
    io::write_json(&outputs[0], &predictor.absolute)?;
    io::write_json(&outputs[1], &predictor.relative)?;
    io::write_ratio(&outputs[2], &predictor.labelled_prior)?;
    ctx.finish(manifest, &outputs)
}

#[derive(Serialize)]
struct PredictionOutput {
    #[serde(flatten)]
    report: PredictionReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    r_merge_unnormalized: Option<Vec<f64>>,
}

fn cmd_predict_ratio(ctx: &Context, a: &PredictArgs) -> Result<()> {
    let manifest = ctx.manifest(
        "predict-ratio",
        a,
        &[&a.absolute, &a.relative, &a.similarities, &a.labelled_ratio],
    )?;
    let absolute = io::read_model(&a.absolute)?;
    let relative = io::read_model(&a.relative)?;
    let prior = io::read_ratio(&a.labelled_ratio)?;
    io::check_classes("relative model", &relative.classes, &absolute.classes)?;
    io::check_classes("labelled ratio", prior.classes(), &absolute.classes)?;
    ctx.check_names("model", &absolute.classes)?;
    let predictor = RatioPredictor {
        absolute,
        relative,
        labelled_prior: prior,
    };
    let sims = io::read_similarities(&a.similarities)?;
    let cfg = PredictConfig {
        normalize_merge: !a.report_unnormalized_merge,
        shift_exponent: a.shift_exponent,
    };
    let prediction = predictor.predict(&sims, &cfg)?;
    let out = PredictionOutput {
        report: PredictionReport::from(&prediction),
        r_merge_unnormalized: a
            .report_unnormalized_merge
            .then(|| prediction.merged_unnormalized.clone()),
    };
    let path = ctx.out("prediction.json");
    io::write_json(&path, &out)?;
    ctx.finish(manifest, &[path])
}

fn cmd_thresholds(ctx: &Context, a: &ThresholdArgs) -> Result<()> {
    let manifest = ctx.manifest("thresholds", a, &[&a.detections, &a.ratio])?;
    let cfg = a.act.config();
    cfg.validate()?;
    if a.n_u == 0 {
        return Err(Error::InvalidValue("--n-u must be at least 1".into()));
    }
    let ratio = io::read_ratio(&a.ratio)?;
    ctx.check_names("ratio", ratio.classes())?;
    let detections = io::read_detections(&a.detections)?;
    let n_o = match a.n_o {
        Some(n) if !(n >= 0.0 && n.is_finite()) => {
            return Err(Error::InvalidValue(format!("--n-o must be >= 0, got {n}")));
        }
        Some(n) => {
            if let Some(d) = detections.iter().find(|d| d.class_id >= ratio.len()) {
                return Err(Error::Dimension(format!(
                    "detection class {} outside the ratio",
                    d.class_id
                )));
            }
            n
        }
        None => dynamic_selection(&detections, &ratio, a.n_u, &cfg)?.n_o,
    };
    let (thresholds, labels) = act(&detections, &ratio, n_o, a.n_u, cfg.reliable_fraction);
    let report = ThresholdReport::new(ratio.classes(), &thresholds, n_o, mean_confidence(&labels));
    let lines: Vec<PseudoLabelLine> = labels
        .reliable
        .iter()
        .map(|d| (d, true))
        .chain(labels.unreliable.iter().map(|d| (d, false)))
        .map(|(d, reliable)| PseudoLabelLine {
            image_id: d.image_id.clone(),
            class_id: d.class_id,
            bbox: d.bbox,
            score: d.score,
            reliable,
        })
        .collect();
    let outputs = [ctx.out("thresholds.json"), ctx.out("pseudo_labels.jsonl")];
    io::write_json(&outputs[0], &report)?;
    io::write_jsonl(&outputs[1], &lines)?;
    ctx.finish(manifest, &outputs)
}

/// Scenes and the three candidate priors for a simulation run.
struct SimInputs {
    source: Vec<SyntheticScene>,
    target: Vec<SyntheticScene>,
    classes: Vec<String>,
    prior: ClassRatio,
}

fn scene_ratio(scenes: &[SyntheticScene], classes: &[String]) -> Result<ClassRatio> {
    let mut counts = vec![0.0; classes.len()];
    for s in scenes {
        for (acc, c) in counts.iter_mut().zip(s.class_counts(classes.len())) {
            *acc += f64::from(c);
        }
    }
    ClassRatio::normalized(classes.to_vec(), &counts)
}

fn load_sim_inputs(ctx: &Context, a: &SimulateArgs) -> Result<SimInputs> {
    let Some(path) = &a.scenes else {
        let scenario = synth::shifted_scenario(&a.scenario.config(), ctx.seed)?;
        let classes = ctx.class_names(scenario.classes.len())?;
        let prior = match a.prior {
            PriorKind::Labelled => scenario.labelled_prior()?,
            PriorKind::True => scenario.true_prior()?,
            PriorKind::Predicted => scenario.predicted_prior()?,
        };
        return Ok(SimInputs {
            prior: ClassRatio::new(classes.clone(), prior.values().to_vec())?,
            source: scenario.source,
            target: scenario.target,
            classes,
        });
    };
    let scenes = io::read_scenes(path)?;
    let n_c = scenes
        .iter()
        .flat_map(|s| &s.objects)
        .map(|o| o.class_id + 1)
        .max()
        .ok_or_else(|| Error::EmptyDataset(format!("{} has no objects", path.display())))?;
    let classes = ctx.class_names(ctx.classes.as_ref().map_or(n_c, Vec::len))?;
    let (source, target): (Vec<_>, Vec<_>) = scenes.into_iter().partition(|s| s.domain == Domain::Source);
    let prior = match a.prior {
        PriorKind::Labelled => scene_ratio(&source, &classes)?,
        PriorKind::True => scene_ratio(&target, &classes)?,
        PriorKind::Predicted => {
            let (Some(sp), Some(tp)) = (&a.source_similarities, &a.target_similarities) else {
                return Err(Error::InvalidValue(
                    "--prior predicted with --scenes needs --source-similarities and --target-similarities"
                        .into(),
                ));
            };
            let by_id =
                |vs: Vec<crate::similarity::SimilarityVector>, scenes: &[SyntheticScene], what: &str| {
                    let map: std::collections::HashMap<_, _> =
                        vs.into_iter().map(|v| (v.image_id.clone(), v)).collect();
                    scenes
                        .iter()
                        .map(|s| {
                            map.get(&s.image_id).cloned().ok_or_else(|| {
                                Error::InvalidValue(format!(
                                    "{what} scene {:?} has no similarity vector",
                                    s.image_id
                                ))
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                };
            let src_sims = by_id(io::read_similarities(sp)?, &source, "source")?;
            let tgt_sims = by_id(io::read_similarities(tp)?, &target, "target")?;
            synth::predicted_prior(&source, &src_sims, &tgt_sims, &classes)?
        }
    };
    Ok(SimInputs {
        source,
        target,
        classes,
        prior,
    })
}

fn cmd_simulate(ctx: &Context, a: &SimulateArgs) -> Result<()> {
    let inputs: Vec<&Path> = [&a.scenes, &a.source_similarities, &a.target_similarities]
        .into_iter()
        .flatten()
        .map(PathBuf::as_path)
        .collect();
    let manifest = ctx.manifest("simulate", a, &inputs)?;
    let cfg = SimConfig {
        alpha: a.alpha,
        lambda: a.lambda,
        sigma_weak: a.sigma_weak,
        sigma_strong: a.sigma_strong,
        dropout_strong: a.dropout_strong,
        burn_in_iters: a.burn_in,
        total_iters: a.iters,
        refresh_every: a.refresh_every,
        learning_rate: a.learning_rate,
        seed: ctx.seed,
        act: a.act.config(),
        ..SimConfig::default()
    };
    cfg.validate()?;
    let sim = load_sim_inputs(ctx, a)?;
    debug_assert_eq!(sim.prior.classes(), sim.classes.as_slice());
    let trace = run_self_training(&sim.source, &sim.target, &sim.prior, &cfg)?;
    let outputs = [ctx.out("trace.csv"), ctx.out("prior.json")];
    io::write_trace(&outputs[0], &trace.rows)?;
    io::write_ratio(&outputs[1], &sim.prior)?;
    ctx.finish(manifest, &outputs)
}

fn parse_dataset_spec(spec: &str) -> Result<(String, PathBuf, PathBuf)> {
    let bad = || {
        Error::InvalidValue(format!(
            "--dataset {spec:?}: expected NAME=SIMILARITIES,ANNOTATIONS"
        ))
    };
    let (name, files) = spec.split_once('=').ok_or_else(bad)?;
    let (sims, ann) = files.split_once(',').ok_or_else(bad)?;
    if name.is_empty() || sims.is_empty() || ann.is_empty() {
        return Err(bad());
    }
    Ok((name.to_string(), PathBuf::from(sims), PathBuf::from(ann)))
}

fn cmd_kl_sweep(ctx: &Context, a: &KlSweepArgs) -> Result<()> {
    let specs = a
        .datasets
        .iter()
        .map(|s| parse_dataset_spec(s))
        .collect::<Result<Vec<_>>>()?;
    let inputs: Vec<&Path> = specs
        .iter()
        .flat_map(|(_, s, an)| [s.as_path(), an.as_path()])
        .collect();
    let manifest = ctx.manifest("eval-kl-sweep", a, &inputs)?;

    let (datasets, classes) = match a.synthetic {
        Some(n) => {
            if a.n_classes < 2 {
                return Err(Error::InvalidValue("--n-classes must be at least 2".into()));
            }
            let classes = ctx.class_names(a.n_classes)?;
            (
                synth::synthetic_datasets(n, a.n_classes, a.images_per_dataset, ctx.seed),
                classes,
            )
        }
        None => {
            let mut datasets = Vec::with_capacity(specs.len());
            let mut width = None;
            for (name, sims_path, ann_path) in &specs {
                let sims = io::read_similarities(sims_path)?;
                let n = sims.first().map(|s| s.scores.len()).ok_or_else(|| {
                    Error::EmptyDataset(format!("{} has no similarity vectors", sims_path.display()))
                })?;
                if *width.get_or_insert(n) != n {
                    return Err(Error::Dimension(format!(
                        "dataset {name} has {n} classes, expected {}",
                        width.unwrap_or(n)
                    )));
                }
                let truth = io::read_annotations(ann_path, n)?;
                datasets.push(Dataset {
                    name: name.clone(),
                    examples: io::join_examples(&sims, &truth, n)?,
                });
            }
            let classes = ctx.class_names(width.unwrap_or(0))?;
            (datasets, classes)
        }
    };
    let scenarios = ordered_scenarios(&datasets);
    if scenarios.is_empty() {
        return Err(Error::EmptyDataset(
            "a KL sweep needs at least two datasets".into(),
        ));
    }
    let cfg = PredictConfig {
        shift_exponent: a.shift_exponent,
        ..PredictConfig::default()
    };
    let outcomes = scenario_sweep(&scenarios, &classes, &cfg, a.kl_direction.into());

    let mut reports = Vec::new();
    let mut entries = Vec::new();
    let mut first_error = None;
    for o in outcomes {
        match o.result {
            Ok(r) => {
                entries.push(KlEntry {
                    scenario: o.scenario,
                    report: Some(KlValues::from(&r)),
                    error: None,
                });
                reports.push(r);
            }
            Err(e) => {
                eprintln!("warning: scenario {} failed: {e}", o.scenario);
                entries.push(KlEntry {
                    scenario: o.scenario,
                    report: None,
                    error: Some(e.to_string()),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if reports.is_empty() {
        return Err(first_error.expect("every scenario failed"));
    }
    let outputs = [ctx.out("kl_report.csv"), ctx.out("kl_report.json")];
    io::write_csv_text(&outputs[0], &io::kl_csv(&reports))?;
    io::write_json(&outputs[1], &entries)?;
    ctx.finish(manifest, &outputs)
}

fn cmd_f1_sweep(ctx: &Context, a: &F1SweepArgs) -> Result<()> {
    let manifest = ctx.manifest("eval-f1-sweep", a, &[&a.detections, &a.annotations, &a.ratio])?;
    let cfg = a.act.config();
    cfg.validate()?;
    if !(a.iou > 0.0 && a.iou < 1.0) {
        return Err(Error::InvalidValue(format!(
            "--iou must lie in (0, 1), got {}",
            a.iou
        )));
    }
    let ratio = io::read_ratio(&a.ratio)?;
    ctx.check_names("ratio", ratio.classes())?;
    let detections = io::read_detections(&a.detections)?;
    if let Some(d) = detections.iter().find(|d| d.class_id >= ratio.len()) {
        return Err(Error::Dimension(format!(
            "detection class {} outside the ratio",
            d.class_id
        )));
    }
    let truth = io::read_annotations(&a.annotations, ratio.len())?;
    let points = f1_sweep(&detections, &truth, &ratio, a.n_u, &cfg, a.iou)?;
    let path = ctx.out("f1_sweep.csv");
    io::write_csv_text(&path, &io::f1_sweep_csv(&points))?;
    ctx.finish(manifest, &[path])
}

fn read_projection(path: Option<&Path>, d: usize) -> Result<ProjectionMatrix> {
    match path {
        Some(p) => ProjectionMatrix::from_rows(&io::read_embeddings(p)?.1),
        None => Ok(ProjectionMatrix::identity(d)),
    }
}

fn cmd_similarity(ctx: &Context, a: &SimilarityArgs) -> Result<()> {
    let inputs: Vec<&Path> = [
        Some(&a.images),
        Some(&a.prompts),
        a.image_projection.as_ref(),
        a.text_projection.as_ref(),
    ]
    .into_iter()
    .flatten()
    .map(PathBuf::as_path)
    .collect();
    let manifest = ctx.manifest("similarity", a, &inputs)?;
    if !a.logit_scale.is_finite() {
        return Err(Error::InvalidValue("--logit-scale must be finite".into()));
    }
    let (ids, image_rows) = io::read_embeddings(&a.images)?;
    let (_, prompt_rows) = io::read_embeddings(&a.prompts)?;
    ctx.class_names(prompt_rows.len())?;
    let images = EmbeddingMatrix::from_rows(&image_rows)?;
    let prompts = EmbeddingMatrix::from_rows(&prompt_rows)?;
    let z_img = project_and_normalize(
        &images,
        &read_projection(a.image_projection.as_deref(), images.ncols())?,
    )?;
    let z_txt = project_and_normalize(
        &prompts,
        &read_projection(a.text_projection.as_deref(), prompts.ncols())?,
    )?;
    let vectors = per_image_similarity(Some(&z_img), &z_txt, a.logit_scale, &ids)?;
    let path = ctx.out("similarities.jsonl");
    io::write_similarities(&path, &vectors)?;
    ctx.finish(manifest, &[path])
}

fn cmd_synth_ratio(ctx: &Context, a: &RatioBenchArgs) -> Result<()> {
    let manifest = ctx.manifest("synth-ratio-benchmark", a, &[])?;
    let cfg = RatioBenchmarkConfig {
        n_classes: a.n_classes,
        n_labelled: a.n_labelled,
        n_unlabelled: a.n_unlabelled,
        shift_kl: a.shift_kl,
    };
    let bench = synth::ratio_benchmark(&cfg, ctx.seed)?;
    let classes = ctx.class_names(a.n_classes)?;
    let mut outputs = Vec::new();
    for d in [&bench.labelled, &bench.unlabelled] {
        let sims: Vec<_> = d.examples.iter().map(|e| e.similarity.clone()).collect();
        let s = ctx.out(&format!("{}_similarities.jsonl", d.name));
        let t = ctx.out(&format!("{}_annotations.jsonl", d.name));
        io::write_similarities(&s, &sims)?;
        io::write_annotations(&t, &synth::annotations_from_counts(d))?;
        outputs.extend([s, t]);
    }
    let r = ctx.out("unlabelled_true_ratio.json");
    io::write_ratio(&r, &labelled_ratio(&bench.unlabelled.examples, classes)?)?;
    outputs.push(r);
    ctx.finish(manifest, &outputs)
}

fn cmd_synth_scenario(ctx: &Context, a: &ScenarioArgs) -> Result<()> {
    let manifest = ctx.manifest("synth-scenario", a, &[])?;
    let s = synth::shifted_scenario(&a.config(), ctx.seed)?;
    let scenes: Vec<SyntheticScene> = s.source.iter().chain(&s.target).cloned().collect();
    let outputs = [
        ctx.out("scenes.jsonl"),
        ctx.out("source_similarities.jsonl"),
        ctx.out("target_similarities.jsonl"),
    ];
    io::write_scenes(&outputs[0], &scenes)?;
    io::write_similarities(&outputs[1], &s.source_similarities)?;
    io::write_similarities(&outputs[2], &s.target_similarities)?;
    ctx.finish(manifest, &outputs)
}
