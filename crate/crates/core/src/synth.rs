//! Synthetic classification ensembles with a known probit-linear ID → OOD
//! accuracy line and a single diversity knob.
//!
//! Model `i` has probit skill `s_i`, evenly spaced over
//! `[skill_min, skill_max]`. On the ID split it is correct on example `x` iff
//! its latent `z_{i,x} = √(1−ρ)·w_x + √ρ·v_{i,x}` is at most `s_i`; on the OOD
//! split the threshold is `a·s_i + b`. `w_x` is shared by all models and
//! `v_{i,x}` is private, so `ρ` moves the ensemble from identical errors
//! (`ρ = 0`) to independent errors (`ρ = 1`) while every marginal accuracy
//! stays `Φ(threshold)`.
//!
//! Every example draws from its own ChaCha stream, so output is a pure
//! function of the config and the seed.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{
    argmax, save_log, ClassificationLog, ClassificationRecord, DataError, Log, Manifest,
    ManifestEntry, Metric, SpanLog, SpanRecord, Task, MANIFEST_VERSION,
};
use crate::probit::normal_cdf;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_models: usize,
    pub n_examples_id: usize,
    pub n_examples_ood: usize,
    pub n_classes: usize,
    pub skill_min: f64,
    pub skill_max: f64,
    /// Probit-space slope of the OOD accuracy line.
    pub slope: f64,
    /// Probit-space bias of the OOD accuracy line.
    pub bias: f64,
    /// ρ: 0 shares every example effect, 1 makes errors independent.
    pub diversity: f64,
    /// η: probability that a wrong model picks the example's shared distractor.
    pub distractor_coherence: f64,
    pub emit_logits: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_models: 10,
            n_examples_id: 2000,
            n_examples_ood: 2000,
            n_classes: 10,
            skill_min: 1.0,
            skill_max: 2.5,
            slope: 0.6,
            bias: -0.4,
            diversity: 0.9,
            distractor_coherence: 0.5,
            emit_logits: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |msg: String| Err(SynthError::InvalidConfig(msg));
        if self.n_models < 2 {
            return bad(format!(
                "n_models must be at least 2, got {}",
                self.n_models
            ));
        }
        if self.n_examples_id == 0 || self.n_examples_ood == 0 {
            return bad("n_examples_id and n_examples_ood must be positive".into());
        }
        if self.n_classes < 2 {
            return bad(format!(
                "n_classes must be at least 2, got {}",
                self.n_classes
            ));
        }
        for (name, v) in [
            ("skill_min", self.skill_min),
            ("skill_max", self.skill_max),
            ("slope", self.slope),
            ("bias", self.bias),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if self.skill_min > self.skill_max {
            return bad("skill_min exceeds skill_max".into());
        }
        for (name, v) in [
            ("diversity", self.diversity),
            ("distractor_coherence", self.distractor_coherence),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        Ok(())
    }

    pub fn skills(&self) -> Vec<f64> {
        let n = self.n_models;
        (0..n)
            .map(|i| {
                if n == 1 {
                    self.skill_min
                } else {
                    self.skill_min + (self.skill_max - self.skill_min) * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    }

    pub fn thresholds(&self, split: Split) -> Vec<f64> {
        let skills = self.skills();
        match split {
            Split::Id => skills,
            Split::Ood => skills
                .into_iter()
                .map(|s| self.slope * s + self.bias)
                .collect(),
        }
    }

    pub fn model_ids(&self) -> Vec<String> {
        (0..self.n_models).map(|i| format!("m{i:02}")).collect()
    }

    /// Parses a TOML `key = value` table. The seed is not accepted from the
    /// file; it comes from the caller.
    pub fn from_toml(text: &str, seed: u64) -> Result<Self, SynthError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| SynthError::InvalidConfig(e.to_string()))?;
        Self::from_table(table, seed)
    }

    pub fn from_table(mut table: toml::Table, seed: u64) -> Result<Self, SynthError> {
        if table.contains_key("seed") {
            return Err(SynthError::InvalidConfig(
                "seed is set with --seed, not in the config file".into(),
            ));
        }
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
        let config: SynthConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| SynthError::InvalidConfig(e.to_string()))?;
        // Seeds above i64::MAX wrap through the TOML integer type.
        let config = SynthConfig { seed, ..config };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Id,
    Ood,
}

impl Split {
    pub fn id(self) -> &'static str {
        match self {
            Split::Id => "id",
            Split::Ood => "ood",
        }
    }

    fn stream_base(self) -> u64 {
        match self {
            Split::Id => 0,
            Split::Ood => 1 << 48,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub model_ids: Vec<String>,
    pub true_id_acc: Vec<f64>,
    pub true_ood_acc: Vec<f64>,
    pub config: SynthConfig,
}

impl SynthTruth {
    pub fn from_config(config: &SynthConfig) -> Self {
        SynthTruth {
            model_ids: config.model_ids(),
            true_id_acc: config
                .thresholds(Split::Id)
                .into_iter()
                .map(normal_cdf)
                .collect(),
            true_ood_acc: config
                .thresholds(Split::Ood)
                .into_iter()
                .map(normal_cdf)
                .collect(),
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthEnsemble {
    pub id_logs: Vec<ClassificationLog>,
    pub ood_logs: Vec<ClassificationLog>,
    pub truth: SynthTruth,
}

impl SynthEnsemble {
    pub fn id_as_logs(&self) -> Vec<Log> {
        self.id_logs
            .iter()
            .cloned()
            .map(Log::Classification)
            .collect()
    }

    pub fn ood_as_logs(&self) -> Vec<Log> {
        self.ood_logs
            .iter()
            .cloned()
            .map(Log::Classification)
            .collect()
    }

    /// Writes `manifest.json`, `truth.json`, and one JSON Lines log per model
    /// and split under `logs/`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), SynthError> {
        let logs_dir = dir.join("logs");
        fs::create_dir_all(&logs_dir).map_err(|source| DataError::Io {
            path: logs_dir.clone(),
            source,
        })?;
        let mut entries = Vec::new();
        for log in self.id_logs.iter().chain(&self.ood_logs) {
            let rel = format!("logs/{}_{}.jsonl", log.model_id, log.split_id);
            save_log(&Log::Classification(log.clone()), &dir.join(&rel))?;
            entries.push(ManifestEntry {
                model_id: log.model_id.clone(),
                split_id: log.split_id.clone(),
                path: rel,
            });
        }
        Manifest {
            version: MANIFEST_VERSION.into(),
            task: Task::Classification,
            metric: Metric::Accuracy,
            entries,
        }
        .write(&dir.join("manifest.json"))?;
        let truth_path = dir.join("truth.json");
        let mut text = serde_json::to_string_pretty(&self.truth).expect("truth serializes");
        text.push('\n');
        fs::write(&truth_path, text).map_err(|source| DataError::Io {
            path: truth_path,
            source,
        })?;
        Ok(())
    }
}

/// Confidence mapped onto the predicted class is clamped into this range so
/// that the predicted logit stays strictly largest.
const MIN_CONFIDENCE: f64 = 1e-6;
const MAX_CONFIDENCE: f64 = 1.0 - 1e-9;

fn example_rng(seed: u64, split: Split, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(split.stream_base() | index as u64);
    rng
}

/// A wrong label, uniform over the `k − 1` labels other than `gold`.
fn wrong_label<R: Rng>(rng: &mut R, gold: usize, k: usize) -> usize {
    (gold + 1 + rng.random_range(0..k - 1)) % k
}

fn synth_logits(predicted: usize, confidence: f64, k: usize) -> Vec<f64> {
    let c = confidence.clamp(MIN_CONFIDENCE, MAX_CONFIDENCE);
    let top = 1.0 / k as f64 + (1.0 - 1.0 / k as f64) * c;
    let rest = ((1.0 - top) / (k - 1) as f64).ln();
    let mut logits = vec![rest; k];
    logits[predicted] = top.ln();
    logits
}

fn generate_split(config: &SynthConfig, split: Split) -> Vec<ClassificationLog> {
    let k = config.n_classes;
    let n = match split {
        Split::Id => config.n_examples_id,
        Split::Ood => config.n_examples_ood,
    };
    let thresholds = config.thresholds(split);
    let shared_w = (1.0 - config.diversity).sqrt();
    let private_w = config.diversity.sqrt();
    let mut logs: Vec<ClassificationLog> = config
        .model_ids()
        .into_iter()
        .map(|model_id| ClassificationLog {
            model_id,
            split_id: split.id().into(),
            n_classes: k,
            examples: Vec::with_capacity(n),
        })
        .collect();

    for x in 0..n {
        let mut rng = example_rng(config.seed, split, x);
        let w: f64 = rng.sample(StandardNormal);
        let gold = rng.random_range(0..k);
        let distractor = wrong_label(&mut rng, gold, k);
        for (log, &theta) in logs.iter_mut().zip(&thresholds) {
            // Fixed draw count per model keeps streams aligned across branches.
            let v: f64 = rng.sample(StandardNormal);
            let u: f64 = rng.random();
            let uniform_wrong = wrong_label(&mut rng, gold, k);
            let z = shared_w * w + private_w * v;
            let predicted = if z <= theta {
                gold
            } else if u < config.distractor_coherence {
                distractor
            } else {
                uniform_wrong
            };
            let logits = config
                .emit_logits
                .then(|| synth_logits(predicted, normal_cdf(theta - z), k));
            debug_assert!(logits.as_ref().is_none_or(|l| argmax(l) == Some(predicted)));
            log.examples.push(ClassificationRecord {
                gold,
                predicted,
                logits,
            });
        }
    }
    logs
}

pub fn generate(config: &SynthConfig) -> Result<SynthEnsemble, SynthError> {
    config.validate()?;
    Ok(SynthEnsemble {
        id_logs: generate_split(config, Split::Id),
        ood_logs: generate_split(config, Split::Ood),
        truth: SynthTruth::from_config(config),
    })
}

/// Probability that two wrong models name the same wrong label.
pub fn wrong_match_probability(n_classes: usize, coherence: f64) -> f64 {
    let k = n_classes as f64;
    let other = (1.0 - coherence) / (k - 1.0);
    let distractor = coherence + other;
    distractor * distractor + (k - 2.0) * other * other
}

/// `P(X ≤ h, Y ≤ k)` for standard bivariate normals with correlation `r`.
///
/// Integrates Sheppard's formula
/// `Φ(h)Φ(k) + (1/2π)∫₀^{asin r} exp(−(h² − 2hk·sinθ + k²) / (2cos²θ)) dθ`
/// with composite Simpson's rule; the `sin` substitution removes the
/// endpoint singularity at `|r| = 1`.
pub fn bivariate_normal_cdf(h: f64, k: f64, r: f64) -> f64 {
    const INTERVALS: usize = 4096;
    let r = r.clamp(-1.0, 1.0);
    let upper = r.asin();
    if upper == 0.0 {
        return normal_cdf(h) * normal_cdf(k);
    }
    let integrand = |theta: f64| {
        let (s, c) = theta.sin_cos();
        let c2 = c * c;
        let diff = (h - k) * (h - k);
        let spread = if diff == 0.0 {
            0.0
        } else if c2 == 0.0 {
            return 0.0;
        } else {
            diff / (2.0 * c2)
        };
        (-(spread + h * k / (1.0 + s))).exp()
    };
    let step = upper / INTERVALS as f64;
    let mut sum = integrand(0.0) + integrand(upper);
    for i in 1..INTERVALS {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * integrand(step * i as f64);
    }
    let integral = sum * step / 3.0;
    (normal_cdf(h) * normal_cdf(k) + integral / (2.0 * std::f64::consts::PI)).clamp(0.0, 1.0)
}

/// Expected agreement rate between models `i` and `j` on `split`.
pub fn closed_form_agreement(config: &SynthConfig, i: usize, j: usize, split: Split) -> f64 {
    if i == j {
        return 1.0;
    }
    let thresholds = config.thresholds(split);
    let (ti, tj) = (thresholds[i], thresholds[j]);
    let both_correct = bivariate_normal_cdf(ti, tj, 1.0 - config.diversity);
    let both_wrong = (1.0 - normal_cdf(ti) - normal_cdf(tj) + both_correct).max(0.0);
    both_correct
        + wrong_match_probability(config.n_classes, config.distractor_coherence) * both_wrong
}

/// Gaussian logits with standard deviation `scale`.
pub fn gaussian_logits<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// `copies` labels drawn from `softmax(logits)` by systematic sampling: one
/// uniform offset, then evenly spaced points through the cumulative
/// distribution. Each label's count is within one of `copies · p`.
pub fn stratified_labels<R: Rng>(rng: &mut R, logits: &[f64], copies: usize) -> Vec<usize> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    let offset: f64 = rng.random();
    let mut labels = Vec::with_capacity(copies);
    let mut label = 0;
    let mut upper = weights[0] / total;
    for r in 0..copies {
        let u = (r as f64 + offset) / copies as f64;
        while u >= upper && label + 1 < weights.len() {
            label += 1;
            upper += weights[label] / total;
        }
        labels.push(label);
    }
    labels
}

/// A calibrated classifier whose logits are then multiplied by
/// `exp(-distortion)`, so the cross-entropy-optimal temperature for the
/// emitted logits is `distortion`.
///
/// Each of `n_groups` Gaussian logit vectors is repeated `copies` times with
/// stratified gold labels, which keeps the empirical label frequencies close
/// to the model's probabilities.
pub fn calibrated_classification(
    model_id: &str,
    n_groups: usize,
    copies: usize,
    n_classes: usize,
    logit_scale: f64,
    distortion: f64,
    seed: u64,
) -> ClassificationLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shrink = (-distortion).exp();
    let mut examples = Vec::with_capacity(n_groups * copies);
    for _ in 0..n_groups {
        let base = gaussian_logits(&mut rng, n_classes, logit_scale);
        let logits: Vec<f64> = base.iter().map(|l| l * shrink).collect();
        let predicted = argmax(&logits).expect("n_classes > 0");
        for gold in stratified_labels(&mut rng, &base, copies) {
            examples.push(ClassificationRecord {
                gold,
                predicted,
                logits: Some(logits.clone()),
            });
        }
    }
    ClassificationLog {
        model_id: model_id.into(),
        split_id: "calibration".into(),
        n_classes,
        examples,
    }
}

/// Calibrated span logs over `2·half` tokens, built like
/// [`calibrated_classification`]. Start positions live in the first half and
/// end positions in the second, so every gold span is ordered; the other
/// half of each logit vector sits far below the rest and carries no
/// probability mass. Start and end logits are distorted by
/// `exp(-distortion.0)` and `exp(-distortion.1)`.
pub fn calibrated_span(
    model_id: &str,
    n_groups: usize,
    copies: usize,
    half: usize,
    logit_scale: f64,
    distortion: (f64, f64),
    seed: u64,
) -> SpanLog {
    const MASKED: f64 = -60.0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_tokens = 2 * half;
    let masked = || std::iter::repeat_n(MASKED, half);
    let mut examples = Vec::with_capacity(n_groups * copies);
    for _ in 0..n_groups {
        let start_base = gaussian_logits(&mut rng, half, logit_scale);
        let end_base = gaussian_logits(&mut rng, half, logit_scale);
        let starts = stratified_labels(&mut rng, &start_base, copies);
        let mut ends = stratified_labels(&mut rng, &end_base, copies);
        // Independent start and end labels within the block.
        for i in (1..ends.len()).rev() {
            ends.swap(i, rng.random_range(0..=i));
        }
        let start_logits: Vec<f64> = start_base
            .iter()
            .copied()
            .chain(masked())
            .map(|l| l * (-distortion.0).exp())
            .collect();
        let end_logits: Vec<f64> = masked()
            .chain(end_base.iter().copied())
            .map(|l| l * (-distortion.1).exp())
            .collect();
        let pred_start = argmax(&start_logits).expect("nonempty");
        let pred_end = argmax(&end_logits).expect("nonempty");
        for (s, e) in starts.into_iter().zip(ends) {
            examples.push(SpanRecord {
                n_tokens,
                start_logits: start_logits.clone(),
                end_logits: end_logits.clone(),
                gold_start: s,
                gold_end: half + e,
                pred_start,
                pred_end,
            });
        }
    }
    SpanLog {
        model_id: model_id.into(),
        split_id: "calibration".into(),
        examples,
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::aline::{agreement_line, AlineInput};
    use crate::datamodel::Metric;
    use crate::metrics::{accuracy, agreement_matrix};
    use crate::probit::{fit_xy, probit};
    use proptest::prelude::*;
    use proptest::test_runner::RngSeed;

    fn config() -> impl Strategy<Value = SynthConfig> {
        (
            2usize..6,
            2usize..6,
            -1.0f64..0.5,
            0.6f64..2.0,
            0.3f64..1.2,
            -0.8f64..0.8,
            0.0f64..=1.0,
            0.0f64..=1.0,
            any::<u64>(),
        )
            .prop_map(
                |(n, k, lo, width, slope, bias, rho, eta, seed)| SynthConfig {
                    n_models: n,
                    n_examples_id: 1500,
                    n_examples_ood: 1500,
                    n_classes: k,
                    skill_min: lo,
                    skill_max: lo + width,
                    slope,
                    bias,
                    diversity: rho,
                    distractor_coherence: eta,
                    emit_logits: false,
                    seed,
                },
            )
    }

    fn probits(values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .map(|&p| probit(p.clamp(1e-4, 1.0 - 1e-4)).unwrap())
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig {
            cases: 24,
            rng_seed: RngSeed::Fixed(7),
            ..ProptestConfig::default()
        })]

        #[test]
        fn same_seed_gives_same_ensemble(config in config()) {
            prop_assert_eq!(generate(&config).unwrap(), generate(&config).unwrap());
        }

        #[test]
        fn accuracies_follow_the_marginal_law(config in config()) {
            let ens = generate(&config).unwrap();
            for (logs, truth) in [
                (&ens.id_logs, &ens.truth.true_id_acc),
                (&ens.ood_logs, &ens.truth.true_ood_acc),
            ] {
                for (log, &p) in logs.iter().zip(truth) {
                    let n = log.examples.len() as f64;
                    let sd = (p * (1.0 - p) / n).sqrt().max(0.5 / n);
                    let acc = accuracy(log).unwrap();
                    prop_assert!((acc - p).abs() <= 3.0 * sd, "{} vs {}", acc, p);
                }
            }
        }

        #[test]
        fn truth_lies_on_the_accuracy_line(config in config()) {
            let truth = SynthTruth::from_config(&config);
            for (&id, &ood) in truth.true_id_acc.iter().zip(&truth.true_ood_acc) {
                let expected = config.slope * probit(id).unwrap() + config.bias;
                prop_assert!((probit(ood).unwrap() - expected).abs() < 1e-9);
            }
        }

        #[test]
        fn agreement_does_not_rise_with_diversity(
            config in config(),
            pick in any::<(prop::sample::Index, prop::sample::Index)>(),
        ) {
            let i = pick.0.index(config.n_models);
            let j = pick.1.index(config.n_models);
            let mut previous = f64::INFINITY;
            for rho in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let c = SynthConfig { diversity: rho, ..config.clone() };
                let a = closed_form_agreement(&c, i, j, Split::Ood);
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!(a <= previous + 1e-12, "rho {}: {} after {}", rho, a, previous);
                previous = a;
            }
        }
    }

    #[test]
    fn agreement_line_tracks_accuracy_line_when_diverse() {
        let config = SynthConfig {
            n_models: 10,
            n_examples_id: 20_000,
            n_examples_ood: 20_000,
            diversity: 0.8,
            emit_logits: false,
            seed: 11,
            ..SynthConfig::default()
        };
        let ens = generate(&config).unwrap();
        let id_acc: Vec<f64> = ens.id_logs.iter().map(|l| accuracy(l).unwrap()).collect();
        let ood_acc: Vec<f64> = ens.ood_logs.iter().map(|l| accuracy(l).unwrap()).collect();
        let acc_fit = fit_xy(&probits(&id_acc), &probits(&ood_acc)).unwrap();
        let input = AlineInput::new(
            id_acc,
            agreement_matrix(&ens.id_as_logs(), Metric::Accuracy).unwrap(),
            agreement_matrix(&ens.ood_as_logs(), Metric::Accuracy).unwrap(),
        );
        let agr_fit = agreement_line(&input).unwrap();
        assert!(
            (agr_fit.slope - acc_fit.slope).abs() < 0.1,
            "agreement slope {} vs accuracy slope {}",
            agr_fit.slope,
            acc_fit.slope
        );
    }
}
