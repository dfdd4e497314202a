//! File formats: JSON, JSON lines and CSV readers and writers.
//!
//! Every real number written by this module is first rounded to 9
//! significant digits so that output digests are reproducible. Parse errors
//! carry the 1-based line number of the offending record.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::act::ThresholdSet;
use crate::detection::{BBox, DetectionRecord};
use crate::distribution::{ClassRatio, SUM_TOLERANCE};
use crate::error::{Error, Result};
use crate::evaluation::{GroundTruthObject, GroundTruthSet, KlReport, SweepPoint};
use crate::regression::{LabelledExample, RatioPrediction, RegressionModel};
use crate::sim::{SyntheticScene, TraceRow};
use crate::similarity::SimilarityVector;

/// Tolerance on the sum of a ratio read from disk; written ratios carry
/// rounding error from the 9-digit output precision.
const READ_SUM_TOLERANCE: f64 = 1e-6;

/// Rounds to 9 significant digits.
pub fn sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Rounds every floating-point number inside a JSON value.
pub fn round_value(v: &mut Value) {
    match v {
        Value::Number(n) if n.is_f64() => {
            if let Some(r) = n.as_f64().map(sig9).and_then(serde_json::Number::from_f64) {
                *n = r;
            }
        }
        Value::Array(items) => items.iter_mut().for_each(round_value),
        Value::Object(map) => map.values_mut().for_each(round_value),
        _ => {}
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Write {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl ToString) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    }
}

/// Attaches a location to a validation error raised while reading a record.
fn at_line(path: &Path, line: usize, e: Error) -> Error {
    match e {
        e @ (Error::Parse { .. } | Error::Io { .. }) => e,
        other => parse_err(path, line, other),
    }
}

fn to_rounded_value<T: Serialize>(value: &T) -> Value {
    let mut v = serde_json::to_value(value).expect("output types serialize");
    round_value(&mut v);
    v
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(&to_rounded_value(value)).expect("value serializes");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.line(), e))
}

pub fn to_jsonl_string<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(&to_rounded_value(item)).expect("value serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    write_text(path, &to_jsonl_string(items))
}

/// Parses one record per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| parse_err(path, i + 1, e))
        })
        .collect()
}

/// Class names, one per non-blank line.
pub fn read_classes(path: &Path) -> Result<Vec<String>> {
    let names: Vec<String> = read_text(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if names.is_empty() {
        return Err(parse_err(path, 1, "class file lists no classes"));
    }
    Ok(names)
}

#[derive(Deserialize)]
struct RawRatio {
    classes: Vec<String>,
    values: Vec<f64>,
}

pub fn read_ratio(path: &Path) -> Result<ClassRatio> {
    let raw: RawRatio = read_json(path)?;
    let total: f64 = raw.values.iter().sum();
    if (total - 1.0).abs() > READ_SUM_TOLERANCE {
        return Err(parse_err(
            path,
            1,
            format!("ratio values sum to {total}, expected 1"),
        ));
    }
    ClassRatio::normalized(raw.classes, &raw.values).map_err(|e| at_line(path, 1, e))
}

pub fn write_ratio(path: &Path, ratio: &ClassRatio) -> Result<()> {
    write_json(path, ratio)
}

pub fn read_similarities(path: &Path) -> Result<Vec<SimilarityVector>> {
    let rows: Vec<(usize, SimilarityVector)> = read_jsonl(path)?;
    let width = rows.first().map(|(_, v)| v.scores.len());
    rows.into_iter()
        .map(|(line, v)| {
            if v.scores.is_empty() || Some(v.scores.len()) != width {
                return Err(parse_err(
                    path,
                    line,
                    format!("expected {} scores, found {}", width.unwrap_or(0), v.scores.len()),
                ));
            }
            if v.scores.iter().any(|s| !s.is_finite()) {
                return Err(parse_err(path, line, "scores must be finite"));
            }
            Ok(v)
        })
        .collect()
}

pub fn write_similarities(path: &Path, vectors: &[SimilarityVector]) -> Result<()> {
    write_jsonl(path, vectors)
}

/// One annotated image: `{"image_id": str, "objects": [{"class_id", "box"}]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationLine {
    pub image_id: String,
    pub objects: Vec<GroundTruthObject>,
}

/// Reads annotations, rejecting duplicate images and out-of-range classes.
pub fn read_annotations(path: &Path, n_classes: usize) -> Result<GroundTruthSet> {
    let mut truth = GroundTruthSet::default();
    for (line, a) in read_jsonl::<AnnotationLine>(path)? {
        if truth.images.contains_key(&a.image_id) {
            return Err(parse_err(
                path,
                line,
                format!("duplicate image id {:?}", a.image_id),
            ));
        }
        if let Some(o) = a.objects.iter().find(|o| o.class_id >= n_classes) {
            return Err(parse_err(
                path,
                line,
                format!("class_id {} outside the {n_classes} classes", o.class_id),
            ));
        }
        truth.insert(a.image_id, a.objects);
    }
    Ok(truth)
}

pub fn write_annotations(path: &Path, truth: &GroundTruthSet) -> Result<()> {
    let lines: Vec<AnnotationLine> = truth
        .images
        .iter()
        .map(|(id, objects)| AnnotationLine {
            image_id: id.clone(),
            objects: objects.clone(),
        })
        .collect();
    write_jsonl(path, &lines)
}

/// Pairs similarity vectors with annotation counts by image id. Images
/// without an annotation line are an error, since their counts are unknown.
pub fn join_examples(
    similarities: &[SimilarityVector],
    truth: &GroundTruthSet,
    n_classes: usize,
) -> Result<Vec<LabelledExample>> {
    let counts = truth.class_counts(n_classes)?;
    similarities
        .iter()
        .map(|s| {
            let c = counts
                .get(&s.image_id)
                .ok_or_else(|| Error::invalid(format!("image {:?} has no annotation line", s.image_id)))?;
            Ok(LabelledExample {
                similarity: s.clone(),
                counts: c.clone(),
            })
        })
        .collect()
}

pub fn read_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    read_jsonl::<DetectionRecord>(path)?
        .into_iter()
        .map(|(line, d)| d.validate().map(|_| d).map_err(|e| at_line(path, line, e)))
        .collect()
}

pub fn write_detections(path: &Path, detections: &[DetectionRecord]) -> Result<()> {
    write_jsonl(path, detections)
}

/// A selected pseudo-label with its reliable/unreliable flag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelLine {
    pub image_id: String,
    pub class_id: usize,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
    pub reliable: bool,
}

pub fn read_pseudo_labels(path: &Path) -> Result<Vec<PseudoLabelLine>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, l)| l).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub classes: Vec<String>,
    pub thresholds: Vec<f64>,
    pub n_o: f64,
    pub mean_confidence: f64,
}

impl ThresholdReport {
    pub fn new(classes: &[String], t: &ThresholdSet, n_o: f64, mean_confidence: f64) -> Self {
        Self {
            classes: classes.to_vec(),
            thresholds: t.thresholds.clone(),
            n_o,
            mean_confidence,
        }
    }
}

pub fn read_model(path: &Path) -> Result<RegressionModel> {
    let m: RegressionModel = read_json(path)?;
    m.validate().map_err(|e| at_line(path, 1, e))?;
    Ok(m)
}

/// Prediction report: the labelled prior and the four ratio predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub labelled_prior: ClassRatio,
    pub r_a: ClassRatio,
    pub r_r: ClassRatio,
    pub r_merge: ClassRatio,
    pub r_square: ClassRatio,
}

impl From<&RatioPrediction> for PredictionReport {
    fn from(p: &RatioPrediction) -> Self {
        Self {
            labelled_prior: p.labelled_prior.clone(),
            r_a: p.absolute.clone(),
            r_r: p.relative.clone(),
            r_merge: p.merged.clone(),
            r_square: p.squared.clone(),
        }
    }
}

pub fn read_scenes(path: &Path) -> Result<Vec<SyntheticScene>> {
    let scenes: Vec<(usize, SyntheticScene)> = read_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    scenes
        .into_iter()
        .map(|(line, s)| {
            if !seen.insert(s.image_id.clone()) {
                return Err(parse_err(
                    path,
                    line,
                    format!("duplicate image id {:?}", s.image_id),
                ));
            }
            Ok(s)
        })
        .collect()
}

pub fn write_scenes(path: &Path, scenes: &[SyntheticScene]) -> Result<()> {
    write_jsonl(path, scenes)
}

fn csv_number(x: f64) -> String {
    sig9(x).to_string()
}

fn csv_string(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

pub const TRACE_HEADER: [&str; 5] = ["iter", "n_o", "mean_conf", "pl_f1", "teacher_target_acc"];

pub fn trace_csv(rows: &[TraceRow]) -> String {
    csv_string(
        &TRACE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.iter.to_string(),
                csv_number(r.n_o),
                csv_number(r.mean_conf),
                csv_number(r.pl_f1),
                csv_number(r.teacher_target_acc),
            ]
        }),
    )
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_text(path, &trace_csv(rows))
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.iter().ne(want.iter().copied()) {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header {}, found {}",
                want.join(","),
                got.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    Ok(())
}

fn csv_records(path: &Path) -> Result<(csv::StringRecord, Vec<(usize, csv::StringRecord)>)> {
    let text = read_text(path)?;
    let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| parse_err(path, 1, e))?.clone();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(path, line, e)
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec));
    }
    Ok((header, rows))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, i: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec
        .get(i)
        .ok_or_else(|| parse_err(path, line, format!("missing column {i}")))?;
    raw.trim()
        .parse()
        .map_err(|e| parse_err(path, line, format!("column {i} ({raw:?}): {e}")))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let (header, rows) = csv_records(path)?;
    check_header(path, &header, &TRACE_HEADER)?;
    rows.iter()
        .map(|(line, rec)| {
            Ok(TraceRow {
                iter: field(path, *line, rec, 0)?,
                n_o: field(path, *line, rec, 1)?,
                mean_conf: field(path, *line, rec, 2)?,
                pl_f1: field(path, *line, rec, 3)?,
                teacher_target_acc: field(path, *line, rec, 4)?,
            })
        })
        .collect()
}

pub const KL_HEADER: [&str; 4] = ["scenario", "kl_labelled", "kl_merged", "kl_squared"];

pub fn kl_csv(reports: &[KlReport]) -> String {
    csv_string(
        &KL_HEADER,
        reports.iter().map(|r| {
            vec![
                r.scenario.clone(),
                csv_number(r.kl_labelled),
                csv_number(r.kl_merged),
                csv_number(r.kl_squared),
            ]
        }),
    )
}

pub fn read_kl_csv(path: &Path) -> Result<Vec<KlReport>> {
    let (header, rows) = csv_records(path)?;
    check_header(path, &header, &KL_HEADER)?;
    rows.iter()
        .map(|(line, rec)| {
            Ok(KlReport {
                scenario: field(path, *line, rec, 0)?,
                kl_labelled: field(path, *line, rec, 1)?,
                kl_merged: field(path, *line, rec, 2)?,
                kl_squared: field(path, *line, rec, 3)?,
            })
        })
        .collect()
}

/// A scenario entry in the JSON KL report; failed scenarios carry `error`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlEntry {
    pub scenario: String,
    #[serde(flatten, skip_serializing_if = "Option::is_none")]
    pub report: Option<KlValues>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KlValues {
    pub kl_labelled: f64,
    pub kl_merged: f64,
    pub kl_squared: f64,
}

impl From<&KlReport> for KlValues {
    fn from(r: &KlReport) -> Self {
        Self {
            kl_labelled: r.kl_labelled,
            kl_merged: r.kl_merged,
            kl_squared: r.kl_squared,
        }
    }
}

pub const F1_SWEEP_HEADER: [&str; 8] = [
    "n_o",
    "mean_conf",
    "precision",
    "recall",
    "f1",
    "true_positives",
    "false_positives",
    "false_negatives",
];

pub fn f1_sweep_csv(points: &[SweepPoint]) -> String {
    csv_string(
        &F1_SWEEP_HEADER,
        points.iter().map(|p| {
            vec![
                csv_number(p.n_o),
                csv_number(p.mean_confidence),
                csv_number(p.score.precision),
                csv_number(p.score.recall),
                csv_number(p.score.f1),
                p.score.true_positives.to_string(),
                p.score.false_positives.to_string(),
                p.score.false_negatives.to_string(),
            ]
        }),
    )
}

/// Reads `id,dim0,dim1,...` embedding CSV.
pub fn read_embeddings(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let (header, rows) = csv_records(path)?;
    let dims = header.len().saturating_sub(1);
    let expected: Vec<String> = std::iter::once("id".to_string())
        .chain((0..dims).map(|j| format!("dim{j}")))
        .collect();
    if dims == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(path, 1, "expected header id,dim0,dim1,..."));
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset(format!("{} has no rows", path.display())));
    }
    let mut ids = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    for (line, rec) in &rows {
        if rec.len() != dims + 1 {
            return Err(parse_err(
                path,
                *line,
                format!("expected {} columns, found {}", dims + 1, rec.len()),
            ));
        }
        ids.push(rec[0].to_string());
        let row = (1..=dims)
            .map(|j| field::<f64>(path, *line, rec, j))
            .collect::<Result<Vec<_>>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(parse_err(path, *line, "embedding values must be finite"));
        }
        values.push(row);
    }
    Ok((ids, values))
}

pub fn embeddings_csv(ids: &[String], rows: &[Vec<f64>]) -> String {
    let dims = rows.first().map_or(0, Vec::len);
    let header: Vec<String> = std::iter::once("id".to_string())
        .chain((0..dims).map(|j| format!("dim{j}")))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    csv_string(
        &header,
        ids.iter().zip(rows).map(|(id, r)| {
            std::iter::once(id.clone())
                .chain(r.iter().map(|v| csv_number(*v)))
                .collect()
        }),
    )
}

pub fn write_csv_text(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Everything needed to reproduce a command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub seed: u64,
    pub config: Value,
    /// Input path → SHA-256 of its contents.
    pub inputs: BTreeMap<String, String>,
    /// Output path → SHA-256 of its contents.
    pub outputs: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, config: Value) -> Self {
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            config,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        let digest = sha256_file(path).map_err(|e| match e {
            Error::Io { path, source } => Error::Write { path, source },
            other => other,
        })?;
        self.outputs.insert(file_name(path), digest);
        Ok(())
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(
        || path.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

pub fn manifest_path(out_dir: &Path, command: &str) -> PathBuf {
    out_dir.join(format!("{command}.manifest.json"))
}

/// Checks a ratio read from disk against the expected class names.
pub fn check_classes(what: &str, got: &[String], want: &[String]) -> Result<()> {
    if got != want {
        return Err(Error::dim(format!(
            "{what} classes {got:?} do not match {want:?}"
        )));
    }
    Ok(())
}

/// Whether two ratios agree to within rounding.
pub fn ratios_close(a: &ClassRatio, b: &ClassRatio) -> bool {
    a.classes() == b.classes()
        && a.values()
            .iter()
            .zip(b.values())
            .all(|(x, y)| (x - y).abs() <= 1e-8 + SUM_TOLERANCE)
}
