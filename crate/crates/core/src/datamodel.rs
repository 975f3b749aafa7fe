//! Prediction-log types, their JSON Lines format, and validated ingestion.
//!
//! A log file is one header object followed by one object per example.
//! Examples are identified by position: logs from different models on the
//! same split must have the same length and are compared index by index.
//!
//! ```text
//! {"model_id":"m0","split_id":"id","task":"classification","n_classes":3}
//! {"gold":2,"predicted":2,"logits":[0.1,-0.3,1.7]}
//! ```

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MANIFEST_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Classification,
    ExtractiveQa,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Classification => "classification",
            Task::ExtractiveQa => "extractive_qa",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    ExactMatch,
    F1,
}

impl Metric {
    pub fn task(self) -> Task {
        match self {
            Metric::Accuracy => Task::Classification,
            Metric::ExactMatch | Metric::F1 => Task::ExtractiveQa,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::ExactMatch => "exact_match",
            Metric::F1 => "f1",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "accuracy" | "acc" => Ok(Metric::Accuracy),
            "exact_match" | "exact-match" | "em" => Ok(Metric::ExactMatch),
            "f1" => Ok(Metric::F1),
            other => Err(format!("unknown metric `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed record at {}:{line}: {message}", .path.display())]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("shape mismatch for model `{model_id}`: {detail}")]
    ShapeMismatch { model_id: String, detail: String },
    #[error("duplicate manifest entry for model `{model_id}` on split `{split_id}`")]
    DuplicateEntry { model_id: String, split_id: String },
    #[error("metric `{metric}` is not defined for task `{task}`")]
    MetricTaskMismatch { metric: Metric, task: Task },
    #[error(
        "model `{model_id}`, example {index}: predicted label is not the argmax of the logits"
    )]
    ArgmaxMismatch { model_id: String, index: usize },
    #[error("model `{model_id}`, example {index}: {detail}")]
    RangeViolation {
        model_id: String,
        index: usize,
        detail: String,
    },
    #[error("model `{model_id}`, example {index}: {detail}")]
    LengthViolation {
        model_id: String,
        index: usize,
        detail: String,
    },
    #[error("invalid header for model `{model_id}`: {detail}")]
    InvalidHeader { model_id: String, detail: String },
    #[error("log {} does not match its manifest entry: {detail}", .path.display())]
    HeaderMismatch { path: PathBuf, detail: String },
    #[error("manifest {} lists no entries", .0.display())]
    EmptyManifest(PathBuf),
    #[error("unsupported manifest version `{0}` (expected `{MANIFEST_VERSION}`)")]
    UnsupportedVersion(String),
    #[error("split layout: {0}")]
    SplitLayout(String),
}

// ---------------------------------------------------------------------------
// Log types
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassificationRecord {
    pub gold: usize,
    pub predicted: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logits: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationLog {
    pub model_id: String,
    pub split_id: String,
    pub n_classes: usize,
    pub examples: Vec<ClassificationRecord>,
}

impl ClassificationLog {
    pub fn has_logits(&self) -> bool {
        !self.examples.is_empty() && self.examples.iter().all(|r| r.logits.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanRecord {
    pub n_tokens: usize,
    pub start_logits: Vec<f64>,
    pub end_logits: Vec<f64>,
    pub gold_start: usize,
    pub gold_end: usize,
    pub pred_start: usize,
    pub pred_end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpanLog {
    pub model_id: String,
    pub split_id: String,
    pub examples: Vec<SpanRecord>,
}

/// One model's predictions on one split.
#[derive(Debug, Clone, PartialEq)]
pub enum Log {
    Classification(ClassificationLog),
    Span(SpanLog),
}

impl Log {
    pub fn model_id(&self) -> &str {
        match self {
            Log::Classification(l) => &l.model_id,
            Log::Span(l) => &l.model_id,
        }
    }

    pub fn split_id(&self) -> &str {
        match self {
            Log::Classification(l) => &l.split_id,
            Log::Span(l) => &l.split_id,
        }
    }

    pub fn task(&self) -> Task {
        match self {
            Log::Classification(_) => Task::Classification,
            Log::Span(_) => Task::ExtractiveQa,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Log::Classification(l) => l.examples.len(),
            Log::Span(l) => l.examples.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<(), DataError> {
        validate_log(self)
    }
}

impl From<ClassificationLog> for Log {
    fn from(l: ClassificationLog) -> Self {
        Log::Classification(l)
    }
}

impl From<SpanLog> for Log {
    fn from(l: SpanLog) -> Self {
        Log::Span(l)
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

pub fn validate_log(log: &Log) -> Result<(), DataError> {
    match log {
        Log::Classification(l) => validate_classification(l),
        Log::Span(l) => validate_span(l),
    }
}

fn validate_classification(log: &ClassificationLog) -> Result<(), DataError> {
    let k = log.n_classes;
    if k == 0 {
        return Err(DataError::InvalidHeader {
            model_id: log.model_id.clone(),
            detail: "n_classes must be positive".into(),
        });
    }
    let range = |index: usize, detail: String| DataError::RangeViolation {
        model_id: log.model_id.clone(),
        index,
        detail,
    };
    for (i, rec) in log.examples.iter().enumerate() {
        if let Some(logits) = &rec.logits {
            if logits.len() != k {
                return Err(DataError::LengthViolation {
                    model_id: log.model_id.clone(),
                    index: i,
                    detail: format!("{} logits for {k} classes", logits.len()),
                });
            }
        }
        if rec.gold >= k {
            return Err(range(i, format!("gold label {} not in [0, {k})", rec.gold)));
        }
        if rec.predicted >= k {
            return Err(range(
                i,
                format!("predicted label {} not in [0, {k})", rec.predicted),
            ));
        }
        if let Some(logits) = &rec.logits {
            if logits.iter().any(|v| !v.is_finite()) {
                return Err(range(i, "non-finite logit".into()));
            }
            if argmax(logits) != Some(rec.predicted) {
                return Err(DataError::ArgmaxMismatch {
                    model_id: log.model_id.clone(),
                    index: i,
                });
            }
        }
    }
    Ok(())
}

fn validate_span(log: &SpanLog) -> Result<(), DataError> {
    let range = |index: usize, detail: String| DataError::RangeViolation {
        model_id: log.model_id.clone(),
        index,
        detail,
    };
    for (i, rec) in log.examples.iter().enumerate() {
        let n = rec.n_tokens;
        if n == 0 || rec.start_logits.len() != n || rec.end_logits.len() != n {
            return Err(DataError::LengthViolation {
                model_id: log.model_id.clone(),
                index: i,
                detail: format!(
                    "n_tokens {n}, {} start logits, {} end logits",
                    rec.start_logits.len(),
                    rec.end_logits.len()
                ),
            });
        }
        if rec.gold_start > rec.gold_end || rec.gold_end >= n {
            return Err(range(
                i,
                format!(
                    "gold span ({}, {}) invalid for {n} tokens",
                    rec.gold_start, rec.gold_end
                ),
            ));
        }
        if rec.pred_start >= n || rec.pred_end >= n {
            return Err(range(
                i,
                format!(
                    "predicted span ({}, {}) outside {n} tokens",
                    rec.pred_start, rec.pred_end
                ),
            ));
        }
        if rec
            .start_logits
            .iter()
            .chain(&rec.end_logits)
            .any(|v| !v.is_finite())
        {
            return Err(range(i, "non-finite logit".into()));
        }
        if argmax(&rec.start_logits) != Some(rec.pred_start)
            || argmax(&rec.end_logits) != Some(rec.pred_end)
        {
            return Err(DataError::ArgmaxMismatch {
                model_id: log.model_id.clone(),
                index: i,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// JSON Lines I/O
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LogHeader {
    model_id: String,
    split_id: String,
    task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_classes: Option<usize>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_log<W: Write>(log: &Log, mut out: W) -> std::io::Result<()> {
    let header = match log {
        Log::Classification(l) => LogHeader {
            model_id: l.model_id.clone(),
            split_id: l.split_id.clone(),
            task: Task::Classification,
            n_classes: Some(l.n_classes),
        },
        Log::Span(l) => LogHeader {
            model_id: l.model_id.clone(),
            split_id: l.split_id.clone(),
            task: Task::ExtractiveQa,
            n_classes: None,
        },
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    match log {
        Log::Classification(l) => {
            for rec in &l.examples {
                serde_json::to_writer(&mut out, rec)?;
                out.write_all(b"\n")?;
            }
        }
        Log::Span(l) => {
            for rec in &l.examples {
                serde_json::to_writer(&mut out, rec)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()
}

pub fn save_log(log: &Log, path: &Path) -> Result<(), DataError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_log(log, BufWriter::new(file)).map_err(io_err(path))
}

/// Parses a log without checking its invariants (see [`validate_log`]).
pub fn read_log<R: Read>(input: R, path: &Path) -> Result<Log, DataError> {
    let malformed = |line: usize, message: String| DataError::MalformedRecord {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(input)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l));

    let header = loop {
        match lines.next() {
            None => return Err(malformed(1, "missing header line".into())),
            Some((n, line)) => {
                let line = line.map_err(io_err(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str::<LogHeader>(&line)
                    .map_err(|e| malformed(n, e.to_string()))?;
            }
        }
    };

    let mut class_examples = Vec::new();
    let mut span_examples = Vec::new();
    for (n, line) in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match header.task {
            Task::Classification => class_examples.push(
                serde_json::from_str::<ClassificationRecord>(&line)
                    .map_err(|e| malformed(n, e.to_string()))?,
            ),
            Task::ExtractiveQa => span_examples.push(
                serde_json::from_str::<SpanRecord>(&line)
                    .map_err(|e| malformed(n, e.to_string()))?,
            ),
        }
    }

    Ok(match header.task {
        Task::Classification => {
            let n_classes = header
                .n_classes
                .ok_or_else(|| malformed(1, "classification header needs n_classes".into()))?;
            Log::Classification(ClassificationLog {
                model_id: header.model_id,
                split_id: header.split_id,
                n_classes,
                examples: class_examples,
            })
        }
        Task::ExtractiveQa => {
            if header.n_classes.is_some() {
                return Err(malformed(
                    1,
                    "extractive_qa header takes no n_classes".into(),
                ));
            }
            Log::Span(SpanLog {
                model_id: header.model_id,
                split_id: header.split_id,
                examples: span_examples,
            })
        }
    })
}

pub fn load_log(path: &Path) -> Result<Log, DataError> {
    if !path.is_file() {
        return Err(DataError::MissingFile(path.to_path_buf()));
    }
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_log(file, path)
}

// ---------------------------------------------------------------------------
// Manifests and split pairs
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub model_id: String,
    pub split_id: String,
    /// Relative to the manifest's directory.
    pub path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub task: Task,
    pub metric: Metric,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Manifest, DataError> {
        if !path.is_file() {
            return Err(DataError::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let manifest: Manifest =
            serde_json::from_str(&text).map_err(|e| DataError::MalformedRecord {
                path: path.to_path_buf(),
                line: e.line(),
                message: e.to_string(),
            })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(DataError::UnsupportedVersion(manifest.version));
        }
        if manifest.metric.task() != manifest.task {
            return Err(DataError::MetricTaskMismatch {
                metric: manifest.metric,
                task: manifest.task,
            });
        }
        if manifest.entries.is_empty() {
            return Err(DataError::EmptyManifest(path.to_path_buf()));
        }
        let mut seen = HashSet::new();
        for e in &manifest.entries {
            if !seen.insert((e.model_id.as_str(), e.split_id.as_str())) {
                return Err(DataError::DuplicateEntry {
                    model_id: e.model_id.clone(),
                    split_id: e.split_id.clone(),
                });
            }
        }
        Ok(manifest)
    }

    pub fn write(&self, path: &Path) -> Result<(), DataError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }

    /// Split ids in order of first appearance.
    pub fn split_ids(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.split_id.as_str()) {
                out.push(&e.split_id);
            }
        }
        out
    }
}

/// All models' logs for one split, as listed by a manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSplit {
    pub split_id: String,
    pub task: Task,
    pub metric: Metric,
    pub logs: Vec<Log>,
}

/// Aligned ID and OOD logs for an ensemble, with the metric to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub metric: Metric,
    pub id_logs: Vec<Log>,
    pub ood_logs: Vec<Log>,
}

impl SplitPair {
    pub fn new(metric: Metric, id_logs: Vec<Log>, ood_logs: Vec<Log>) -> Result<Self, DataError> {
        if id_logs.len() < 2 {
            return Err(DataError::SplitLayout(format!(
                "at least two models are required, found {}",
                id_logs.len()
            )));
        }
        for log in id_logs.iter().chain(&ood_logs) {
            if log.task() != metric.task() {
                return Err(DataError::MetricTaskMismatch {
                    metric,
                    task: log.task(),
                });
            }
            validate_log(log)?;
        }
        if id_logs.len() != ood_logs.len() {
            let missing = id_logs
                .iter()
                .map(Log::model_id)
                .find(|m| !ood_logs.iter().any(|l| l.model_id() == *m))
                .or_else(|| {
                    ood_logs
                        .iter()
                        .map(Log::model_id)
                        .find(|m| !id_logs.iter().any(|l| l.model_id() == *m))
                })
                .unwrap_or_default();
            return Err(DataError::ShapeMismatch {
                model_id: missing.to_string(),
                detail: "model appears on only one split".into(),
            });
        }
        for (a, b) in id_logs.iter().zip(&ood_logs) {
            if a.model_id() != b.model_id() {
                return Err(DataError::ShapeMismatch {
                    model_id: b.model_id().to_string(),
                    detail: format!(
                        "OOD logs are not in ID model order (expected `{}`)",
                        a.model_id()
                    ),
                });
            }
        }
        check_split_shape(&id_logs)?;
        check_split_shape(&ood_logs)?;
        if let (Log::Classification(a), Log::Classification(b)) = (&id_logs[0], &ood_logs[0]) {
            if a.n_classes != b.n_classes {
                return Err(DataError::ShapeMismatch {
                    model_id: b.model_id.clone(),
                    detail: format!("{} classes on OOD vs {} on ID", b.n_classes, a.n_classes),
                });
            }
        }
        Ok(SplitPair {
            metric,
            id_logs,
            ood_logs,
        })
    }

    pub fn task(&self) -> Task {
        self.metric.task()
    }

    pub fn n_models(&self) -> usize {
        self.id_logs.len()
    }

    pub fn model_ids(&self) -> Vec<String> {
        self.id_logs
            .iter()
            .map(|l| l.model_id().to_string())
            .collect()
    }

    pub fn id_split(&self) -> &str {
        self.id_logs[0].split_id()
    }

    pub fn ood_split(&self) -> &str {
        self.ood_logs[0].split_id()
    }
}

/// Within one split: unique model ids, equal lengths, equal class counts,
/// and for QA equal per-example token counts.
fn check_split_shape(logs: &[Log]) -> Result<(), DataError> {
    let mut ids = HashSet::new();
    for log in logs {
        if !ids.insert(log.model_id()) {
            return Err(DataError::DuplicateEntry {
                model_id: log.model_id().to_string(),
                split_id: log.split_id().to_string(),
            });
        }
    }
    if let Some(odd) = logs.iter().find(|l| l.split_id() != logs[0].split_id()) {
        return Err(DataError::ShapeMismatch {
            model_id: odd.model_id().to_string(),
            detail: format!(
                "split `{}` mixed with `{}`",
                odd.split_id(),
                logs[0].split_id()
            ),
        });
    }

    // Reference length is the most common one so the outlier gets named.
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for log in logs {
        *counts.entry(log.len()).or_default() += 1;
    }
    let reference = logs
        .iter()
        .map(Log::len)
        .max_by_key(|len| (counts[len], std::cmp::Reverse(*len)))
        .unwrap_or(0);
    if let Some(odd) = logs.iter().find(|l| l.len() != reference) {
        return Err(DataError::ShapeMismatch {
            model_id: odd.model_id().to_string(),
            detail: format!("{} examples, expected {reference}", odd.len()),
        });
    }
    if reference == 0 {
        return Err(DataError::ShapeMismatch {
            model_id: logs[0].model_id().to_string(),
            detail: "log has no examples".into(),
        });
    }

    match &logs[0] {
        Log::Classification(first) => {
            for log in &logs[1..] {
                if let Log::Classification(l) = log {
                    if l.n_classes != first.n_classes {
                        return Err(DataError::ShapeMismatch {
                            model_id: l.model_id.clone(),
                            detail: format!(
                                "{} classes, expected {}",
                                l.n_classes, first.n_classes
                            ),
                        });
                    }
                }
            }
        }
        Log::Span(first) => {
            for log in &logs[1..] {
                if let Log::Span(l) = log {
                    let bad = l
                        .examples
                        .iter()
                        .zip(&first.examples)
                        .position(|(a, b)| a.n_tokens != b.n_tokens);
                    if let Some(i) = bad {
                        return Err(DataError::ShapeMismatch {
                            model_id: l.model_id.clone(),
                            detail: format!("example {i} has a different token count"),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

fn load_entries(manifest: &Manifest, base: &Path, split: &str) -> Result<Vec<Log>, DataError> {
    manifest
        .entries
        .iter()
        .filter(|e| e.split_id == split)
        .map(|e| {
            let path = base.join(&e.path);
            let log = load_log(&path)?;
            let mismatch = |detail: String| DataError::HeaderMismatch {
                path: path.clone(),
                detail,
            };
            if log.model_id() != e.model_id {
                return Err(mismatch(format!(
                    "model_id `{}` vs manifest `{}`",
                    log.model_id(),
                    e.model_id
                )));
            }
            if log.split_id() != e.split_id {
                return Err(mismatch(format!(
                    "split_id `{}` vs manifest `{}`",
                    log.split_id(),
                    e.split_id
                )));
            }
            if log.task() != manifest.task {
                return Err(mismatch(format!(
                    "task `{}` vs manifest `{}`",
                    log.task(),
                    manifest.task
                )));
            }
            validate_log(&log)?;
            Ok(log)
        })
        .collect()
}

fn manifest_dir(path: &Path) -> PathBuf {
    path.parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Loads a manifest listing a single split.
pub fn load_split(path: &Path) -> Result<LoadedSplit, DataError> {
    let manifest = Manifest::read(path)?;
    let splits = manifest.split_ids();
    if splits.len() != 1 {
        return Err(DataError::SplitLayout(format!(
            "{} lists {} splits, expected one",
            path.display(),
            splits.len()
        )));
    }
    let split_id = splits[0].to_string();
    let logs = load_entries(&manifest, &manifest_dir(path), &split_id)?;
    check_split_shape(&logs)?;
    Ok(LoadedSplit {
        split_id,
        task: manifest.task,
        metric: manifest.metric,
        logs,
    })
}

/// Loads a manifest listing exactly two splits; the first split listed is ID.
pub fn load_manifest(path: &Path) -> Result<SplitPair, DataError> {
    let manifest = Manifest::read(path)?;
    let splits = manifest.split_ids();
    if splits.len() != 2 {
        return Err(DataError::SplitLayout(format!(
            "{} lists {} splits, expected an ID and an OOD split",
            path.display(),
            splits.len()
        )));
    }
    let base = manifest_dir(path);
    let id_logs = load_entries(&manifest, &base, splits[0])?;
    let ood_logs = load_entries(&manifest, &base, splits[1])?;
    SplitPair::new(manifest.metric, id_logs, ood_logs)
}

/// Pairs two single-split manifests into a [`SplitPair`].
pub fn pair_splits(id: LoadedSplit, ood: LoadedSplit) -> Result<SplitPair, DataError> {
    if id.metric != ood.metric {
        return Err(DataError::SplitLayout(format!(
            "ID manifest metric `{}` differs from OOD manifest metric `{}`",
            id.metric, ood.metric
        )));
    }
    SplitPair::new(id.metric, id.logs, ood.logs)
}
