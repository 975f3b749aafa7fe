//! Runs the requested estimators over an ensemble, scores them against OOD
//! ground truth when it is available, and exports scatter data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aline::{agreement_line, aline_d, aline_s, AlineInput, DEFAULT_GATE_THRESHOLD};
use crate::baselines::{
    ensemble_confidence_baseline_with, fit_temperature, naive_agreement_estimate, BaselineMethod,
    Temperature,
};
use crate::datamodel::{Metric, SplitPair};
use crate::metrics::{agreement_matrix, performance, AgreementMatrix, MetricError};
use crate::probit::{fit_xy, normal_cdf, probit_rate, LineFit, DEFAULT_CLAMP_EPS};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReportError {
    #[error("a truth value is zero; MAPE is undefined")]
    ZeroTruth,
    #[error("{estimates} estimates for {truths} truths")]
    LengthMismatch { estimates: usize, truths: usize },
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("ensemble summary is inconsistent: {0}")]
    Summary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "aline-s")]
    AlineS,
    #[serde(rename = "aline-d")]
    AlineD,
    #[serde(rename = "ac")]
    Ac,
    #[serde(rename = "atc")]
    Atc,
    #[serde(rename = "doc-feat")]
    DocFeat,
    #[serde(rename = "naive")]
    Naive,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::AlineS,
        Method::AlineD,
        Method::Ac,
        Method::Atc,
        Method::DocFeat,
        Method::Naive,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::AlineS => "aline-s",
            Method::AlineD => "aline-d",
            Method::Ac => "ac",
            Method::Atc => "atc",
            Method::DocFeat => "doc-feat",
            Method::Naive => "naive",
        }
    }

    fn confidence_baseline(self) -> Option<BaselineMethod> {
        match self {
            Method::Ac => Some(BaselineMethod::Ac),
            Method::Atc => Some(BaselineMethod::Atc),
            Method::DocFeat => Some(BaselineMethod::DocFeat),
            _ => None,
        }
    }

    fn is_aline(self) -> bool {
        matches!(self, Method::AlineS | Method::AlineD)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "aline-s" => Ok(Method::AlineS),
            "aline-d" => Ok(Method::AlineD),
            "ac" => Ok(Method::Ac),
            "atc" => Ok(Method::Atc),
            "doc-feat" | "doc" => Ok(Method::DocFeat),
            "naive" | "naive-agreement" => Ok(Method::Naive),
            other => Err(format!(
                "unknown method `{other}` (expected one of aline-s, aline-d, ac, atc, doc-feat, naive)"
            )),
        }
    }
}

/// Mean absolute percentage error, in percent.
pub fn mape(estimates: &[f64], truths: &[f64]) -> Result<f64, ReportError> {
    if estimates.len() != truths.len() || truths.is_empty() {
        return Err(ReportError::LengthMismatch {
            estimates: estimates.len(),
            truths: truths.len(),
        });
    }
    if truths.iter().any(|&t| t == 0.0) {
        return Err(ReportError::ZeroTruth);
    }
    let total: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t).abs() / t)
        .sum();
    Ok(100.0 * total / truths.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportOptions {
    pub gate_threshold: f64,
    pub clamp_eps: f64,
    /// Score against OOD gold and choose between raw and temperature-scaled
    /// confidence baselines.
    pub evaluation_mode: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            clamp_eps: DEFAULT_CLAMP_EPS,
            evaluation_mode: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub toolkit_version: String,
    pub metric: Metric,
    /// Metric estimated by the confidence baselines. Differs from `metric`
    /// only for span F1, where they estimate exact match.
    pub confidence_metric: Metric,
    pub id_split: String,
    pub ood_split: String,
    pub methods: Vec<Method>,
    pub gate_threshold: f64,
    pub clamp_eps: f64,
    pub evaluation_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model_id: String,
    pub id_perf: f64,
    pub true_ood_perf: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_ood_confidence_perf: Option<f64>,
    pub estimates: BTreeMap<Method, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fits {
    pub accuracy_fit: Option<LineFit>,
    pub agreement_fit: Option<LineFit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agreements {
    pub id: AgreementMatrix,
    pub ood: AgreementMatrix,
}

/// Raw and temperature-scaled estimates of one confidence baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineVariants {
    pub raw: Vec<f64>,
    pub scaled: Vec<f64>,
    pub temperatures: Vec<Temperature>,
    /// Which variant the rows report; `None` outside evaluation mode, where
    /// rows carry the raw variant.
    pub used_temperature: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub metadata: Metadata,
    pub per_model: Vec<ModelRow>,
    pub fits: Fits,
    pub gates: BTreeMap<Method, bool>,
    pub method_errors: BTreeMap<Method, String>,
    pub mape: Option<BTreeMap<Method, f64>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mape_errors: BTreeMap<Method, String>,
    pub baseline_variants: BTreeMap<Method, BaselineVariants>,
    pub agreements: Agreements,
}

impl EstimateReport {
    /// Pretty JSON with a trailing newline. Maps are ordered, so equal
    /// reports serialize to identical bytes.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn estimates(&self, method: Method) -> Option<Vec<f64>> {
        self.per_model
            .iter()
            .map(|row| row.estimates.get(&method).copied())
            .collect()
    }

    pub fn true_ood(&self) -> Option<Vec<f64>> {
        self.per_model.iter().map(|row| row.true_ood_perf).collect()
    }
}

/// Everything the agreement-based estimators need, without the logs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub metric: Metric,
    pub id_perf: Vec<f64>,
    pub agr_id: AgreementMatrix,
    pub agr_ood: AgreementMatrix,
    pub true_ood_perf: Option<Vec<f64>>,
}

impl EnsembleSummary {
    pub fn from_pair(pair: &SplitPair, with_truth: bool) -> Result<Self, ReportError> {
        let id_perf = pair
            .id_logs
            .iter()
            .map(|l| performance(l, pair.metric))
            .collect::<Result<Vec<_>, _>>()?;
        let true_ood_perf = if with_truth {
            Some(
                pair.ood_logs
                    .iter()
                    .map(|l| performance(l, pair.metric))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        Ok(EnsembleSummary {
            metric: pair.metric,
            id_perf,
            agr_id: agreement_matrix(&pair.id_logs, pair.metric)?,
            agr_ood: agreement_matrix(&pair.ood_logs, pair.metric)?,
            true_ood_perf,
        })
    }

    fn check(&self) -> Result<(), ReportError> {
        let n = self.id_perf.len();
        let bad = |m: String| Err(ReportError::Summary(m));
        if self.agr_id.n() != n || self.agr_ood.n() != n {
            return bad(format!(
                "{n} models but agreement matrices of size {} and {}",
                self.agr_id.n(),
                self.agr_ood.n()
            ));
        }
        if self.agr_id.model_ids != self.agr_ood.model_ids {
            return bad("ID and OOD agreement matrices list different models".into());
        }
        if let Some(t) = &self.true_ood_perf {
            if t.len() != n {
                return bad(format!("{} truths for {n} models", t.len()));
            }
        }
        Ok(())
    }
}

fn dedup_methods(methods: &[Method]) -> Vec<Method> {
    methods
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Builds a report from summary statistics alone. Confidence baselines need
/// per-example logits and are recorded as errors.
pub fn build_report_from_summary(
    summary: &EnsembleSummary,
    methods: &[Method],
    options: &ReportOptions,
) -> Result<EstimateReport, ReportError> {
    assemble(summary, None, methods, options)
}

pub fn build_report(
    pair: &SplitPair,
    methods: &[Method],
    options: &ReportOptions,
) -> Result<EstimateReport, ReportError> {
    let summary = EnsembleSummary::from_pair(pair, options.evaluation_mode)?;
    assemble(&summary, Some(pair), methods, options)
}

fn assemble(
    summary: &EnsembleSummary,
    pair: Option<&SplitPair>,
    methods: &[Method],
    options: &ReportOptions,
) -> Result<EstimateReport, ReportError> {
    summary.check()?;
    let methods = dedup_methods(methods);
    let model_ids = summary.agr_id.model_ids.clone();
    let n = model_ids.len();
    let confidence_metric = match summary.metric {
        Metric::F1 => Metric::ExactMatch,
        m => m,
    };

    let confidence_truth: Option<Vec<f64>> = match (pair, &summary.true_ood_perf) {
        (Some(pair), Some(_)) if confidence_metric != summary.metric => Some(
            pair.ood_logs
                .iter()
                .map(|l| performance(l, confidence_metric))
                .collect::<Result<Vec<_>, _>>()?,
        ),
        (_, truth) => truth.clone(),
    };

    let input = AlineInput {
        id_perf: summary.id_perf.clone(),
        agr_id: summary.agr_id.clone(),
        agr_ood: summary.agr_ood.clone(),
        gate_threshold: options.gate_threshold,
        clamp_eps: options.clamp_eps,
    };
    let agreement_fit = agreement_line(&input).ok();
    let accuracy_fit = summary.true_ood_perf.as_ref().and_then(|truth| {
        let xs: Option<Vec<f64>> = summary
            .id_perf
            .iter()
            .map(|&p| probit_rate(p, options.clamp_eps).ok())
            .collect();
        let ys: Option<Vec<f64>> = truth
            .iter()
            .map(|&p| probit_rate(p, options.clamp_eps).ok())
            .collect();
        fit_xy(&xs?, &ys?).ok()
    });

    let temperatures = match pair {
        Some(pair) if methods.iter().any(|m| m.confidence_baseline().is_some()) => Some(
            pair.id_logs
                .iter()
                .map(fit_temperature)
                .collect::<Result<Vec<_>, _>>(),
        ),
        _ => None,
    };

    let mut estimates: BTreeMap<Method, Vec<f64>> = BTreeMap::new();
    let mut gates = BTreeMap::new();
    let mut method_errors = BTreeMap::new();
    let mut baseline_variants = BTreeMap::new();

    for &method in &methods {
        match method {
            Method::AlineS | Method::AlineD => {
                let out = if method == Method::AlineS {
                    aline_s(&input)
                } else {
                    aline_d(&input)
                };
                match out {
                    Ok(out) => {
                        estimates.insert(method, out.estimates);
                        gates.insert(method, out.gated);
                    }
                    Err(e) => {
                        method_errors.insert(method, e.to_string());
                    }
                }
            }
            Method::Naive => match naive_agreement_estimate(&summary.agr_ood) {
                Ok(v) => {
                    estimates.insert(method, v);
                }
                Err(e) => {
                    method_errors.insert(method, e.to_string());
                }
            },
            Method::Ac | Method::Atc | Method::DocFeat => {
                let baseline = method.confidence_baseline().expect("confidence method");
                let Some(pair) = pair else {
                    method_errors.insert(
                        method,
                        "confidence baselines need per-example prediction logs".to_string(),
                    );
                    continue;
                };
                let truths = if options.evaluation_mode {
                    confidence_truth.as_deref()
                } else {
                    None
                };
                let fitted = match temperatures
                    .as_ref()
                    .expect("fitted for confidence methods")
                {
                    Ok(t) => t,
                    Err(e) => {
                        method_errors.insert(method, e.to_string());
                        continue;
                    }
                };
                match ensemble_confidence_baseline_with(
                    baseline,
                    &pair.id_logs,
                    &pair.ood_logs,
                    fitted,
                    truths,
                ) {
                    Ok(eb) => {
                        let (rows, used) = match &eb.selected {
                            Some(sel) => (sel.per_model.clone(), Some(sel.used_temperature)),
                            None => (eb.raw.clone(), None),
                        };
                        estimates.insert(method, rows);
                        baseline_variants.insert(
                            method,
                            BaselineVariants {
                                raw: eb.raw,
                                scaled: eb.scaled,
                                temperatures: eb.temperatures,
                                used_temperature: used,
                            },
                        );
                    }
                    Err(e) => {
                        method_errors.insert(method, e.to_string());
                    }
                }
            }
        }
    }

    let (mape_map, mape_errors) = match &summary.true_ood_perf {
        None => (None, BTreeMap::new()),
        Some(truth) => {
            let mut scores = BTreeMap::new();
            let mut errors = BTreeMap::new();
            for (&method, est) in &estimates {
                let target = if method.confidence_baseline().is_some() {
                    confidence_truth.as_deref().unwrap_or(truth)
                } else {
                    truth
                };
                match mape(est, target) {
                    Ok(v) => {
                        scores.insert(method, v);
                    }
                    Err(e) => {
                        errors.insert(method, e.to_string());
                    }
                }
            }
            (Some(scores), errors)
        }
    };

    let per_model = (0..n)
        .map(|i| ModelRow {
            model_id: model_ids[i].clone(),
            id_perf: summary.id_perf[i],
            true_ood_perf: summary.true_ood_perf.as_ref().map(|t| t[i]),
            true_ood_confidence_perf: if confidence_metric != summary.metric {
                confidence_truth.as_ref().map(|t| t[i])
            } else {
                None
            },
            estimates: estimates.iter().map(|(&m, v)| (m, v[i])).collect(),
        })
        .collect();

    debug_assert!(gates.keys().all(|m| m.is_aline()));
    Ok(EstimateReport {
        metadata: Metadata {
            toolkit_version: TOOLKIT_VERSION.to_string(),
            metric: summary.metric,
            confidence_metric,
            id_split: summary.agr_id.split_id.clone(),
            ood_split: summary.agr_ood.split_id.clone(),
            methods,
            gate_threshold: options.gate_threshold,
            clamp_eps: options.clamp_eps,
            evaluation_mode: options.evaluation_mode,
        },
        per_model,
        fits: Fits {
            accuracy_fit,
            agreement_fit,
        },
        gates,
        method_errors,
        mape: mape_map,
        mape_errors,
        baseline_variants,
        agreements: Agreements {
            id: summary.agr_id.clone(),
            ood: summary.agr_ood.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub kind: &'static str,
    pub tag: String,
    pub x_raw: f64,
    pub y_raw: Option<f64>,
    pub x_probit: f64,
    pub y_probit: Option<f64>,
}

pub const SCATTER_HEADER: [&str; 6] = ["kind", "tag", "x_raw", "y_raw", "x_probit", "y_probit"];

/// Scatter rows for an accuracy/agreement panel: one row per model, one per
/// model pair, two endpoints per fitted line, and probit tick positions for
/// raw values 0.1 through 0.9.
pub fn export_scatter(report: &EstimateReport) -> Vec<ScatterRow> {
    let eps = report.metadata.clamp_eps;
    let to_probit = |p: f64| probit_rate(p, eps).unwrap_or(f64::NAN);
    let mut rows = Vec::new();

    for row in &report.per_model {
        rows.push(ScatterRow {
            kind: "accuracy",
            tag: row.model_id.clone(),
            x_raw: row.id_perf,
            y_raw: row.true_ood_perf,
            x_probit: to_probit(row.id_perf),
            y_probit: row.true_ood_perf.map(to_probit),
        });
    }
    let (id, ood) = (&report.agreements.id, &report.agreements.ood);
    for (i, j, x) in id.upper_pairs() {
        let y = ood.get(i, j);
        rows.push(ScatterRow {
            kind: "agreement",
            tag: format!("{}|{}", id.model_ids[i], id.model_ids[j]),
            x_raw: x,
            y_raw: Some(y),
            x_probit: to_probit(x),
            y_probit: Some(to_probit(y)),
        });
    }

    let mut line = |kind: &'static str, fit: &LineFit, xs: Vec<f64>| {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for x_raw in [lo, hi] {
            let x_probit = to_probit(x_raw);
            let y_probit = fit.predict(x_probit);
            rows.push(ScatterRow {
                kind,
                tag: format!("slope={};bias={}", fit.slope, fit.bias),
                x_raw,
                y_raw: Some(normal_cdf(y_probit)),
                x_probit,
                y_probit: Some(y_probit),
            });
        }
    };
    if let Some(fit) = &report.fits.accuracy_fit {
        line(
            "accuracy_fit",
            fit,
            report.per_model.iter().map(|r| r.id_perf).collect(),
        );
    }
    if let Some(fit) = &report.fits.agreement_fit {
        line(
            "agreement_fit",
            fit,
            id.upper_pairs().map(|p| p.2).collect(),
        );
    }

    for tick in 1..=9 {
        let raw = tick as f64 / 10.0;
        rows.push(ScatterRow {
            kind: "tick",
            tag: format!("{raw:.1}"),
            x_raw: raw,
            y_raw: Some(raw),
            x_probit: to_probit(raw),
            y_probit: Some(to_probit(raw)),
        });
    }
    rows
}

pub fn write_scatter_csv<W: Write>(rows: &[ScatterRow], out: W) -> csv::Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(SCATTER_HEADER)?;
    let num = |v: f64| v.to_string();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in rows {
        writer.write_record([
            row.kind.to_string(),
            row.tag.clone(),
            num(row.x_raw),
            opt(row.y_raw),
            num(row.x_probit),
            opt(row.y_probit),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
