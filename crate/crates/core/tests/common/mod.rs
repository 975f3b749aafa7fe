//! Independent reference implementations and random fixtures shared by the
//! integration tests. Everything here is written as plain loops so it does
//! not share code paths with the library.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aline_core::datamodel::{
    argmax, ClassificationLog, ClassificationRecord, Log, SpanLog, SpanRecord,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_classification(
    rng: &mut ChaCha8Rng,
    model_id: &str,
    golds: &[usize],
    k: usize,
    with_logits: bool,
) -> ClassificationLog {
    let examples = golds
        .iter()
        .map(|&gold| {
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let predicted = if with_logits {
                argmax(&logits).unwrap()
            } else {
                rng.random_range(0..k)
            };
            ClassificationRecord {
                gold,
                predicted,
                logits: with_logits.then_some(logits),
            }
        })
        .collect();
    ClassificationLog {
        model_id: model_id.into(),
        split_id: "s".into(),
        n_classes: k,
        examples,
    }
}

/// Random span logs over a shared gold sequence; predicted spans follow the
/// logits and so may be inverted.
pub fn random_span(
    rng: &mut ChaCha8Rng,
    model_id: &str,
    golds: &[(usize, usize)],
    n_tokens: usize,
) -> SpanLog {
    let examples = golds
        .iter()
        .map(|&(gs, ge)| {
            let start: Vec<f64> = (0..n_tokens).map(|_| rng.random_range(-3.0..3.0)).collect();
            let end: Vec<f64> = (0..n_tokens).map(|_| rng.random_range(-3.0..3.0)).collect();
            SpanRecord {
                n_tokens,
                pred_start: argmax(&start).unwrap(),
                pred_end: argmax(&end).unwrap(),
                start_logits: start,
                end_logits: end,
                gold_start: gs,
                gold_end: ge,
            }
        })
        .collect();
    SpanLog {
        model_id: model_id.into(),
        split_id: "s".into(),
        examples,
    }
}

pub fn random_golds(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

pub fn random_gold_spans(rng: &mut ChaCha8Rng, n: usize, n_tokens: usize) -> Vec<(usize, usize)> {
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..n_tokens);
            let b = rng.random_range(0..n_tokens);
            (a.min(b), a.max(b))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Oracles
// ---------------------------------------------------------------------------

/// Matching positions, counted one by one.
pub fn oracle_count_equal<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut count = 0;
    for i in 0..a.len() {
        if a[i] == b[i] {
            count += 1;
        }
    }
    count
}

/// F1 of two inclusive token spans via explicit token sets.
pub fn oracle_span_f1(a: (usize, usize), b: (usize, usize)) -> f64 {
    let tokens = |(s, e): (usize, usize)| -> Vec<usize> {
        if s > e {
            Vec::new()
        } else {
            (s..=e).collect()
        }
    };
    let ta = tokens(a);
    let tb = tokens(b);
    if ta.is_empty() || tb.is_empty() {
        return 0.0;
    }
    let mut common = 0usize;
    for t in &ta {
        if tb.contains(t) {
            common += 1;
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / ta.len() as f64;
    let recall = common as f64 / tb.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn oracle_mean(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    total / values.len() as f64
}

pub fn oracle_mape(est: &[f64], truth: &[f64]) -> f64 {
    let mut total = 0.0;
    for i in 0..est.len() {
        total += ((est[i] - truth[i]) / truth[i]).abs();
    }
    100.0 * total / est.len() as f64
}

/// Unshifted softmax; fine for the small logits the fixtures draw.
pub fn oracle_softmax(logits: &[f64]) -> Vec<f64> {
    let exps: Vec<f64> = logits.iter().map(|l| l.exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

/// Highest joint probability over every `(i, j)` start/end pair.
pub fn oracle_span_confidence(start: &[f64], end: &[f64]) -> f64 {
    let ps = oracle_softmax(start);
    let pe = oracle_softmax(end);
    let mut best = 0.0f64;
    for a in &ps {
        for b in &pe {
            best = best.max(a * b);
        }
    }
    best
}

pub fn oracle_confidences(log: &Log) -> Vec<f64> {
    match log {
        Log::Classification(l) => l
            .examples
            .iter()
            .map(|r| {
                oracle_softmax(r.logits.as_ref().unwrap())
                    .into_iter()
                    .fold(0.0, f64::max)
            })
            .collect(),
        Log::Span(l) => l
            .examples
            .iter()
            .map(|r| oracle_span_confidence(&r.start_logits, &r.end_logits))
            .collect(),
    }
}

pub fn oracle_correct(log: &Log) -> Vec<bool> {
    match log {
        Log::Classification(l) => l.examples.iter().map(|r| r.predicted == r.gold).collect(),
        Log::Span(l) => l
            .examples
            .iter()
            .map(|r| r.pred_start == r.gold_start && r.pred_end == r.gold_end)
            .collect(),
    }
}

/// ATC by trying every candidate threshold in ascending order.
pub fn oracle_atc(id_conf: &[f64], id_correct: &[bool], ood_conf: &[f64]) -> f64 {
    let n_correct = id_correct.iter().filter(|&&c| c).count() as i64;
    let mut candidates = vec![f64::NEG_INFINITY];
    candidates.extend_from_slice(id_conf);
    candidates.push(f64::INFINITY);
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best_tau = candidates[0];
    let mut best_gap = i64::MAX;
    for &tau in &candidates {
        let mut covered = 0i64;
        for &c in id_conf {
            if c >= tau {
                covered += 1;
            }
        }
        let gap = (covered - n_correct).abs();
        if gap < best_gap {
            best_gap = gap;
            best_tau = tau;
        }
    }
    let mut above = 0usize;
    for &c in ood_conf {
        if c >= best_tau {
            above += 1;
        }
    }
    above as f64 / ood_conf.len() as f64
}

/// Slope and bias by the textbook two-pass formulas.
pub fn oracle_ols(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..xs.len() {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Solves a square system by Gaussian elimination with partial pivoting.
pub fn gaussian_elimination(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}

/// Φ from its Taylor series near zero and a Lentz continued fraction for
/// the tails.
pub fn oracle_normal_cdf(z: f64) -> f64 {
    let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    if z.abs() < 3.0 {
        // Φ(z) = 1/2 + φ(z) Σ z^(2k+1) / (1·3·…·(2k+1))
        let mut term = z;
        let mut sum = z;
        let mut k = 1.0;
        while term.abs() > 1e-18 * sum.abs().max(1e-300) {
            term *= z * z / (2.0 * k + 1.0);
            sum += term;
            k += 1.0;
        }
        0.5 + pdf * sum
    } else {
        // Upper tail Q(x) = φ(x) / (x + 1/(x + 2/(x + 3/(x + …)))).
        let x = z.abs();
        let mut f = x;
        let tiny = 1e-300;
        let mut c = f;
        let mut d = 0.0;
        for j in 1..500 {
            let a = j as f64;
            d = x + a * d;
            d = if d.abs() < tiny { tiny } else { d };
            c = x + a / c;
            c = if c.abs() < tiny { tiny } else { c };
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        let tail = pdf / f;
        if z > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }
}

/// Φ⁻¹ by bisection on [`oracle_normal_cdf`].
pub fn oracle_probit(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oracle_normal_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
