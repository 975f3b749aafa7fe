//! Confidence- and agreement-based baseline estimators, and the temperature
//! scaling used to calibrate confidences on ID data.
//!
//! Temperatures multiply logits by `exp(t)`. For extractive QA the
//! confidence of a span `(i, j)` is `σ(s)_i · σ(e)_j`, so the joint
//! cross-entropy splits into a start term and an end term and each
//! temperature is fitted on its own.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ClassificationLog, Log, SpanLog, Task};
use crate::metrics::{AgreementMatrix, MetricError};

/// Search box for every temperature component.
pub const TEMPERATURE_MIN: f64 = -5.0;
pub const TEMPERATURE_MAX: f64 = 5.0;
const GRID_POINTS: usize = 1001;
const GOLDEN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BaselineError {
    #[error("log for model `{0}` has no logits")]
    MissingLogits(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("temperature does not match the log's task")]
    TemperatureTaskMismatch,
    #[error("need at least {needed} models, found {found}")]
    InsufficientModels { needed: usize, found: usize },
    #[error("no ground truth for evaluation-mode selection: {0}")]
    MissingTruth(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Temperature {
    Classification { t: f64 },
    Span { t_start: f64, t_end: f64 },
}

impl Temperature {
    /// `t = 0` for the given task, i.e. raw logits.
    pub fn identity(task: Task) -> Self {
        match task {
            Task::Classification => Temperature::Classification { t: 0.0 },
            Task::ExtractiveQa => Temperature::Span {
                t_start: 0.0,
                t_end: 0.0,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineMethod {
    Ac,
    Atc,
    DocFeat,
    NaiveAgreement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    pub method: BaselineMethod,
    pub per_model: Vec<f64>,
    pub used_temperature: bool,
}

// ---------------------------------------------------------------------------
// Softmax helpers on max-shifted logits
// ---------------------------------------------------------------------------

/// Logits shifted so the largest is 0. Scaling by a positive factor keeps the
/// largest at 0, which keeps every exponent non-positive.
fn shifted(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    logits.iter().map(|l| l - max).collect()
}

/// `exp(x)` for `x ≤ 0`, skipping the slow underflow path of the system
/// `exp` for arguments whose result rounds to zero anyway.
fn exp_nonpositive(x: f64) -> f64 {
    if x < -745.2 {
        0.0
    } else {
        x.exp()
    }
}

/// `ln Σ exp(scale·d)` is evaluated as `ln_1p` of every term but one top
/// term, so confident rows keep their tiny but nonzero loss.
fn cross_entropy(shifted: &[f64], gold: usize, scale: f64) -> f64 {
    let top = shifted.iter().position(|&d| d == 0.0).unwrap_or(0);
    let rest: f64 = shifted
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != top)
        .map(|(_, d)| exp_nonpositive(scale * d))
        .sum();
    rest.ln_1p() - scale * shifted[gold]
}

fn max_probability(shifted: &[f64], scale: f64) -> f64 {
    1.0 / shifted
        .iter()
        .map(|d| exp_nonpositive(scale * d))
        .sum::<f64>()
}

fn classification_logits(log: &ClassificationLog) -> Result<Vec<(Vec<f64>, usize)>, BaselineError> {
    if log.examples.is_empty() {
        return Err(MetricError::EmptyLog.into());
    }
    log.examples
        .iter()
        .map(|r| {
            r.logits
                .as_ref()
                .map(|l| (shifted(l), r.gold))
                .ok_or_else(|| BaselineError::MissingLogits(log.model_id.clone()))
        })
        .collect()
}

fn span_logits(
    log: &SpanLog,
) -> Result<(Vec<(Vec<f64>, usize)>, Vec<(Vec<f64>, usize)>), BaselineError> {
    if log.examples.is_empty() {
        return Err(MetricError::EmptyLog.into());
    }
    if log
        .examples
        .iter()
        .any(|r| r.start_logits.is_empty() || r.end_logits.is_empty())
    {
        return Err(BaselineError::MissingLogits(log.model_id.clone()));
    }
    let start = log
        .examples
        .iter()
        .map(|r| (shifted(&r.start_logits), r.gold_start))
        .collect();
    let end = log
        .examples
        .iter()
        .map(|r| (shifted(&r.end_logits), r.gold_end))
        .collect();
    Ok((start, end))
}

fn mean_ce(rows: &[(Vec<f64>, usize)], t: f64) -> f64 {
    let scale = t.exp();
    rows.iter()
        .map(|(l, g)| cross_entropy(l, *g, scale))
        .sum::<f64>()
        / rows.len() as f64
}

/// Mean cross-entropy of `softmax(logits · exp(t))` against gold.
pub fn classification_ce(log: &ClassificationLog, t: f64) -> Result<f64, BaselineError> {
    Ok(mean_ce(&classification_logits(log)?, t))
}

/// Mean joint cross-entropy of the start ⊗ end pair distribution against the
/// gold span; equal to the start term plus the end term.
pub fn span_ce(log: &SpanLog, t_start: f64, t_end: f64) -> Result<f64, BaselineError> {
    let (start, end) = span_logits(log)?;
    Ok(mean_ce(&start, t_start) + mean_ce(&end, t_end))
}

/// Minimizes a unimodal function on the temperature box: a 1001-point grid
/// scan, then golden-section search inside the best grid cell pair.
fn minimize_on_box<F: Fn(f64) -> f64>(f: F) -> f64 {
    let step = (TEMPERATURE_MAX - TEMPERATURE_MIN) / (GRID_POINTS - 1) as f64;
    let grid_t = |i: usize| TEMPERATURE_MIN + step * i as f64;
    let mut best_i = 0;
    let mut best_f = f64::INFINITY;
    for i in 0..GRID_POINTS {
        let v = f(grid_t(i));
        if v < best_f {
            best_f = v;
            best_i = i;
        }
    }
    let mut lo = grid_t(best_i.saturating_sub(1));
    let mut hi = grid_t((best_i + 1).min(GRID_POINTS - 1));
    let (lo0, hi0) = (lo, hi);

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > GOLDEN_TOL {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    let mid = 0.5 * (lo + hi);
    // The bracket ends catch minima on the box boundary.
    [
        (mid, f(mid)),
        (grid_t(best_i), best_f),
        (lo0, f(lo0)),
        (hi0, f(hi0)),
    ]
    .into_iter()
    .fold((mid, f64::INFINITY), |acc, cand| {
        if cand.1 < acc.1 {
            cand
        } else {
            acc
        }
    })
    .0
}

pub fn fit_temperature_classification(
    log: &ClassificationLog,
) -> Result<Temperature, BaselineError> {
    let rows = classification_logits(log)?;
    Ok(Temperature::Classification {
        t: minimize_on_box(|t| mean_ce(&rows, t)),
    })
}

pub fn fit_temperature_qa(log: &SpanLog) -> Result<Temperature, BaselineError> {
    let (start, end) = span_logits(log)?;
    Ok(Temperature::Span {
        t_start: minimize_on_box(|t| mean_ce(&start, t)),
        t_end: minimize_on_box(|t| mean_ce(&end, t)),
    })
}

pub fn fit_temperature(log: &Log) -> Result<Temperature, BaselineError> {
    match log {
        Log::Classification(l) => fit_temperature_classification(l),
        Log::Span(l) => fit_temperature_qa(l),
    }
}

/// Per-example confidence: max softmax probability, or for QA the largest
/// pair probability `max_i σ(s)_i · max_j σ(e)_j`.
pub fn confidence(log: &Log, temperature: Option<&Temperature>) -> Result<Vec<f64>, BaselineError> {
    let temperature = temperature
        .copied()
        .unwrap_or_else(|| Temperature::identity(log.task()));
    match (log, temperature) {
        (Log::Classification(l), Temperature::Classification { t }) => {
            let scale = t.exp();
            Ok(classification_logits(l)?
                .iter()
                .map(|(s, _)| max_probability(s, scale))
                .collect())
        }
        (Log::Span(l), Temperature::Span { t_start, t_end }) => {
            let (start, end) = span_logits(l)?;
            let (ss, se) = (t_start.exp(), t_end.exp());
            Ok(start
                .iter()
                .zip(&end)
                .map(|((s, _), (e, _))| max_probability(s, ss) * max_probability(e, se))
                .collect())
        }
        _ => Err(BaselineError::TemperatureTaskMismatch),
    }
}

/// Per-example correctness under accuracy (classification) or exact match (QA).
pub fn correctness(log: &Log) -> Vec<bool> {
    match log {
        Log::Classification(l) => l.examples.iter().map(|r| r.predicted == r.gold).collect(),
        Log::Span(l) => l
            .examples
            .iter()
            .map(|r| r.pred_start == r.gold_start && r.pred_end == r.gold_end)
            .collect(),
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Average confidence on OOD.
pub fn ac_estimate(ood: &Log, temperature: Option<&Temperature>) -> Result<f64, BaselineError> {
    Ok(mean(&confidence(ood, temperature)?))
}

/// ATC threshold: the smallest candidate `τ` whose ID coverage
/// `#{conf ≥ τ}` is closest to the number of correct ID examples.
/// Candidates are `-∞`, every distinct ID confidence, and `+∞`.
pub fn atc_threshold(id_confidence: &[f64], id_correct: &[bool]) -> f64 {
    assert_eq!(id_confidence.len(), id_correct.len());
    let n = id_confidence.len();
    let correct = id_correct.iter().filter(|&&c| c).count();
    let mut sorted = id_confidence.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut best_tau = f64::NEG_INFINITY;
    let mut best_gap = n.abs_diff(correct);
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        let coverage = n - i;
        let gap = coverage.abs_diff(correct);
        if gap < best_gap {
            best_gap = gap;
            best_tau = v;
        }
        while i < n && sorted[i] == v {
            i += 1;
        }
    }
    if correct < best_gap {
        best_tau = f64::INFINITY;
    }
    best_tau
}

pub fn atc_estimate(
    id: &Log,
    ood: &Log,
    temperature: Option<&Temperature>,
) -> Result<f64, BaselineError> {
    let id_conf = confidence(id, temperature)?;
    let tau = atc_threshold(&id_conf, &correctness(id));
    let ood_conf = confidence(ood, temperature)?;
    let above = ood_conf.iter().filter(|&&c| c >= tau).count();
    Ok(above as f64 / ood_conf.len() as f64)
}

/// ID accuracy shifted by the change in mean confidence, clamped to `[0, 1]`.
pub fn doc_feat_estimate(
    id: &Log,
    ood: &Log,
    temperature: Option<&Temperature>,
) -> Result<f64, BaselineError> {
    let id_conf = confidence(id, temperature)?;
    let ood_conf = confidence(ood, temperature)?;
    let correct = correctness(id);
    let id_acc = correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64;
    Ok((id_acc - (mean(&id_conf) - mean(&ood_conf))).clamp(0.0, 1.0))
}

/// Each model's mean OOD agreement with every other model.
pub fn naive_agreement_estimate(agr_ood: &AgreementMatrix) -> Result<Vec<f64>, BaselineError> {
    let n = agr_ood.n();
    if n < 2 {
        return Err(BaselineError::InsufficientModels {
            needed: 2,
            found: n,
        });
    }
    Ok((0..n)
        .map(|i| {
            let total: f64 = (0..n).filter(|&j| j != i).map(|j| agr_ood.get(i, j)).sum();
            total / (n - 1) as f64
        })
        .collect())
}

fn confidence_estimate(
    method: BaselineMethod,
    id: &Log,
    ood: &Log,
    temperature: Option<&Temperature>,
) -> Result<f64, BaselineError> {
    match method {
        BaselineMethod::Ac => ac_estimate(ood, temperature),
        BaselineMethod::Atc => atc_estimate(id, ood, temperature),
        BaselineMethod::DocFeat => doc_feat_estimate(id, ood, temperature),
        BaselineMethod::NaiveAgreement => {
            panic!("naive agreement is not a confidence baseline")
        }
    }
}

/// One model's confidence-baseline estimate with raw and ID-calibrated logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureVariants {
    pub raw: f64,
    pub scaled: f64,
    pub temperature: Temperature,
    /// Set in evaluation mode: the variant closer to the OOD truth, preferring
    /// raw on ties.
    pub selected: Option<(f64, bool)>,
}

/// Computes a confidence baseline with and without temperature scaling. When
/// `ood_truth` is given, also selects the variant with lower absolute error.
pub fn with_and_without_temperature(
    method: BaselineMethod,
    id: &Log,
    ood: &Log,
    ood_truth: Option<f64>,
) -> Result<TemperatureVariants, BaselineError> {
    let temperature = fit_temperature(id)?;
    let raw = confidence_estimate(method, id, ood, None)?;
    let scaled = confidence_estimate(method, id, ood, Some(&temperature))?;
    let selected = ood_truth.map(|truth| {
        if (scaled - truth).abs() < (raw - truth).abs() {
            (scaled, true)
        } else {
            (raw, false)
        }
    });
    Ok(TemperatureVariants {
        raw,
        scaled,
        temperature,
        selected,
    })
}

/// A confidence baseline over an ensemble, both variants kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBaseline {
    pub method: BaselineMethod,
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
    pub temperatures: Vec<Temperature>,
    /// Present in evaluation mode.
    pub selected: Option<BaselineEstimate>,
}

fn selection_error(estimates: &[f64], truths: &[f64]) -> f64 {
    let positive = truths.iter().all(|&t| t > 0.0);
    estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| {
            let err = (e - t).abs();
            if positive {
                err / t
            } else {
                err
            }
        })
        .sum()
}

/// Runs a confidence baseline for every model. In evaluation mode
/// (`ood_truths` given) the variant with lower ensemble-wide error is
/// selected; ties keep the raw variant.
pub fn ensemble_confidence_baseline(
    method: BaselineMethod,
    id_logs: &[Log],
    ood_logs: &[Log],
    ood_truths: Option<&[f64]>,
) -> Result<EnsembleBaseline, BaselineError> {
    let temperatures = id_logs
        .iter()
        .map(fit_temperature)
        .collect::<Result<Vec<_>, _>>()?;
    ensemble_confidence_baseline_with(method, id_logs, ood_logs, &temperatures, ood_truths)
}

/// [`ensemble_confidence_baseline`] with temperatures already fitted on the
/// ID logs, one per model.
pub fn ensemble_confidence_baseline_with(
    method: BaselineMethod,
    id_logs: &[Log],
    ood_logs: &[Log],
    temperatures: &[Temperature],
    ood_truths: Option<&[f64]>,
) -> Result<EnsembleBaseline, BaselineError> {
    let mut raw = Vec::with_capacity(id_logs.len());
    let mut scaled = Vec::with_capacity(id_logs.len());
    for ((id, ood), t) in id_logs.iter().zip(ood_logs).zip(temperatures) {
        raw.push(confidence_estimate(method, id, ood, None)?);
        scaled.push(confidence_estimate(method, id, ood, Some(t))?);
    }
    let selected = match ood_truths {
        None => None,
        Some(truths) => {
            if truths.len() != raw.len() {
                return Err(BaselineError::MissingTruth(format!(
                    "{} truths for {} models",
                    truths.len(),
                    raw.len()
                )));
            }
            let use_scaled = selection_error(&scaled, truths) < selection_error(&raw, truths);
            Some(BaselineEstimate {
                method,
                per_model: if use_scaled {
                    scaled.clone()
                } else {
                    raw.clone()
                },
                used_temperature: use_scaled,
            })
        }
    };
    Ok(EnsembleBaseline {
        method,
        raw,
        scaled,
        temperatures: temperatures.to_vec(),
        selected,
    })
}
