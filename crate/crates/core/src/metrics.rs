//! Per-model performance and pairwise agreement.
//!
//! Agreement applies the same metric as performance, with the second model's
//! prediction in place of the gold label. Every metric here is symmetric in
//! its two arguments, so `agreement(a, b) == agreement(b, a)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{ClassificationLog, Log, Metric, SpanLog, Task};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("log has no examples")]
    EmptyLog,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("metric `{metric}` is not defined for task `{task}`")]
    MetricTaskMismatch { metric: Metric, task: Task },
    #[error("need at least {needed} models, found {found}")]
    InsufficientModels { needed: usize, found: usize },
}

pub fn accuracy(log: &ClassificationLog) -> Result<f64, MetricError> {
    if log.examples.is_empty() {
        return Err(MetricError::EmptyLog);
    }
    let hits = log
        .examples
        .iter()
        .filter(|r| r.predicted == r.gold)
        .count();
    Ok(hits as f64 / log.examples.len() as f64)
}

pub fn exact_match(log: &SpanLog) -> Result<f64, MetricError> {
    if log.examples.is_empty() {
        return Err(MetricError::EmptyLog);
    }
    let hits = log
        .examples
        .iter()
        .filter(|r| r.pred_start == r.gold_start && r.pred_end == r.gold_end)
        .count();
    Ok(hits as f64 / log.examples.len() as f64)
}

/// Token-interval F1 between two inclusive spans. An inverted span
/// (`start > end`) is empty.
pub fn interval_f1(a: (usize, usize), b: (usize, usize)) -> f64 {
    let len = |(s, e): (usize, usize)| if s > e { 0 } else { e - s + 1 };
    let (la, lb) = (len(a), len(b));
    if la == 0 || lb == 0 {
        return 0.0;
    }
    let lo = a.0.max(b.0);
    let hi = a.1.min(b.1);
    if lo > hi {
        return 0.0;
    }
    let overlap = hi - lo + 1;
    2.0 * overlap as f64 / (la + lb) as f64
}

/// Macro-averaged span F1 of predicted against gold spans.
pub fn span_f1(log: &SpanLog) -> Result<f64, MetricError> {
    if log.examples.is_empty() {
        return Err(MetricError::EmptyLog);
    }
    let total: f64 = log
        .examples
        .iter()
        .map(|r| interval_f1((r.pred_start, r.pred_end), (r.gold_start, r.gold_end)))
        .sum();
    Ok(total / log.examples.len() as f64)
}

fn mismatch(metric: Metric, log: &Log) -> MetricError {
    MetricError::MetricTaskMismatch {
        metric,
        task: log.task(),
    }
}

/// Performance of one log under `metric`.
pub fn performance(log: &Log, metric: Metric) -> Result<f64, MetricError> {
    match (log, metric) {
        (Log::Classification(l), Metric::Accuracy) => accuracy(l),
        (Log::Span(l), Metric::ExactMatch) => exact_match(l),
        (Log::Span(l), Metric::F1) => span_f1(l),
        _ => Err(mismatch(metric, log)),
    }
}

pub fn agreement(a: &Log, b: &Log, metric: Metric) -> Result<f64, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::ShapeMismatch(format!(
            "`{}` has {} examples, `{}` has {}",
            a.model_id(),
            a.len(),
            b.model_id(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(MetricError::EmptyLog);
    }
    let n = a.len() as f64;
    match (a, b, metric) {
        (Log::Classification(x), Log::Classification(y), Metric::Accuracy) => {
            let same = x
                .examples
                .iter()
                .zip(&y.examples)
                .filter(|(p, q)| p.predicted == q.predicted)
                .count();
            Ok(same as f64 / n)
        }
        (Log::Span(x), Log::Span(y), Metric::ExactMatch) => {
            let same = x
                .examples
                .iter()
                .zip(&y.examples)
                .filter(|(p, q)| p.pred_start == q.pred_start && p.pred_end == q.pred_end)
                .count();
            Ok(same as f64 / n)
        }
        (Log::Span(x), Log::Span(y), Metric::F1) => {
            let total: f64 = x
                .examples
                .iter()
                .zip(&y.examples)
                .map(|(p, q)| interval_f1((p.pred_start, p.pred_end), (q.pred_start, q.pred_end)))
                .sum();
            Ok(total / n)
        }
        (Log::Classification(_), Log::Classification(_), _) | (Log::Span(_), Log::Span(_), _) => {
            Err(mismatch(metric, a))
        }
        _ => Err(MetricError::ShapeMismatch(format!(
            "`{}` and `{}` are logs of different tasks",
            a.model_id(),
            b.model_id()
        ))),
    }
}

/// Symmetric matrix of pairwise agreements for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementMatrix {
    pub model_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub metric: Metric,
    pub split_id: String,
}

impl AgreementMatrix {
    /// Builds a matrix from upper-triangle values listed in `(0,1), (0,2), …,
    /// (1,2), …` order. The diagonal is 1.
    pub fn from_upper(
        model_ids: Vec<String>,
        upper: &[f64],
        metric: Metric,
        split_id: impl Into<String>,
    ) -> Self {
        let n = model_ids.len();
        assert_eq!(
            upper.len(),
            n * n.saturating_sub(1) / 2,
            "upper triangle size"
        );
        let mut values = vec![vec![1.0; n]; n];
        let mut it = upper.iter();
        for i in 0..n {
            for j in i + 1..n {
                let v = *it.next().expect("length checked");
                values[i][j] = v;
                values[j][i] = v;
            }
        }
        AgreementMatrix {
            model_ids,
            values,
            metric,
            split_id: split_id.into(),
        }
    }

    pub fn n(&self) -> usize {
        self.model_ids.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i][j]
    }

    /// `(i, j, value)` for every `i < j`, row-major.
    pub fn upper_pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let n = self.n();
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j, self.values[i][j])))
    }

    /// Reorders models by `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        AgreementMatrix {
            model_ids: order.iter().map(|&o| self.model_ids[o].clone()).collect(),
            values: order
                .iter()
                .map(|&a| order.iter().map(|&b| self.values[a][b]).collect())
                .collect(),
            metric: self.metric,
            split_id: self.split_id.clone(),
        }
    }
}

pub fn agreement_matrix(logs: &[Log], metric: Metric) -> Result<AgreementMatrix, MetricError> {
    let n = logs.len();
    if n < 2 {
        return Err(MetricError::InsufficientModels {
            needed: 2,
            found: n,
        });
    }
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            upper.push(agreement(&logs[i], &logs[j], metric)?);
        }
    }
    Ok(AgreementMatrix::from_upper(
        logs.iter().map(|l| l.model_id().to_string()).collect(),
        &upper,
        metric,
        logs[0].split_id(),
    ))
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::datamodel::{ClassificationRecord, SpanRecord};
    use proptest::prelude::*;

    const TOKENS: usize = 8;

    fn class_log(model: &str, golds: &[usize], preds: &[usize]) -> Log {
        Log::Classification(ClassificationLog {
            model_id: model.into(),
            split_id: "s".into(),
            n_classes: 4,
            examples: golds
                .iter()
                .zip(preds)
                .map(|(&gold, &predicted)| ClassificationRecord {
                    gold,
                    predicted,
                    logits: None,
                })
                .collect(),
        })
    }

    fn span_log(model: &str, golds: &[(usize, usize)], preds: &[(usize, usize)]) -> Log {
        Log::Span(SpanLog {
            model_id: model.into(),
            split_id: "s".into(),
            examples: golds
                .iter()
                .zip(preds)
                .map(|(&(gs, ge), &(ps, pe))| SpanRecord {
                    n_tokens: TOKENS,
                    start_logits: vec![0.0; TOKENS],
                    end_logits: vec![0.0; TOKENS],
                    gold_start: gs,
                    gold_end: ge,
                    pred_start: ps,
                    pred_end: pe,
                })
                .collect(),
        })
    }

    fn gold_span() -> impl Strategy<Value = (usize, usize)> {
        (0..TOKENS, 0..TOKENS).prop_map(|(a, b)| (a.min(b), a.max(b)))
    }

    fn classification_triple() -> impl Strategy<Value = (Vec<usize>, Vec<usize>, Vec<usize>)> {
        (1usize..40).prop_flat_map(|n| {
            let labels = || prop::collection::vec(0usize..4, n);
            (labels(), labels(), labels())
        })
    }

    type Spans = Vec<(usize, usize)>;

    fn span_triple() -> impl Strategy<Value = (Spans, Spans, Spans)> {
        (1usize..40).prop_flat_map(|n| {
            let preds = || prop::collection::vec((0..TOKENS, 0..TOKENS), n);
            (prop::collection::vec(gold_span(), n), preds(), preds())
        })
    }

    fn in_unit(v: f64) -> bool {
        (0.0..=1.0).contains(&v)
    }

    proptest! {
        #[test]
        fn classification_agreement_laws((golds, pa, pb) in classification_triple()) {
            let a = class_log("a", &golds, &pa);
            let b = class_log("b", &golds, &pb);
            let oracle = class_log("gold", &golds, &golds);
            let ab = agreement(&a, &b, Metric::Accuracy).unwrap();
            prop_assert_eq!(ab, agreement(&b, &a, Metric::Accuracy).unwrap());
            prop_assert_eq!(agreement(&a, &a, Metric::Accuracy).unwrap(), 1.0);
            prop_assert_eq!(
                agreement(&a, &oracle, Metric::Accuracy).unwrap(),
                performance(&a, Metric::Accuracy).unwrap()
            );
            prop_assert!(in_unit(ab));
            prop_assert!(in_unit(performance(&a, Metric::Accuracy).unwrap()));
        }

        #[test]
        fn span_agreement_laws((golds, pa, pb) in span_triple()) {
            let a = span_log("a", &golds, &pa);
            let b = span_log("b", &golds, &pb);
            let oracle = span_log("gold", &golds, &golds);
            for metric in [Metric::ExactMatch, Metric::F1] {
                let ab = agreement(&a, &b, metric).unwrap();
                prop_assert_eq!(ab, agreement(&b, &a, metric).unwrap());
                prop_assert_eq!(
                    agreement(&a, &oracle, metric).unwrap(),
                    performance(&a, metric).unwrap()
                );
                prop_assert!(in_unit(ab));
                prop_assert!(in_unit(performance(&a, metric).unwrap()));
            }
            // Self-agreement is one whenever every predicted span is nonempty.
            let proper: Vec<_> = pa.iter().map(|&(s, e)| (s.min(e), s.max(e))).collect();
            let p = span_log("p", &golds, &proper);
            prop_assert_eq!(agreement(&p, &p, Metric::ExactMatch).unwrap(), 1.0);
            prop_assert_eq!(agreement(&p, &p, Metric::F1).unwrap(), 1.0);
        }

        #[test]
        fn interval_f1_is_symmetric_and_bounded(a in (0usize..20, 0usize..20), b in (0usize..20, 0usize..20)) {
            let f = interval_f1(a, b);
            prop_assert_eq!(f, interval_f1(b, a));
            prop_assert!(in_unit(f));
        }

        #[test]
        fn matrix_is_symmetric_with_unit_diagonal((golds, pa, pb) in classification_triple()) {
            let logs = vec![
                class_log("a", &golds, &pa),
                class_log("b", &golds, &pb),
                class_log("c", &golds, &golds),
            ];
            let m = agreement_matrix(&logs, Metric::Accuracy).unwrap();
            for i in 0..3 {
                prop_assert_eq!(m.get(i, i), 1.0);
                for j in 0..3 {
                    prop_assert_eq!(m.get(i, j), m.get(j, i));
                }
            }
        }
    }
}
