//! ALine-S and ALine-D: OOD performance from ID performance and ID/OOD
//! agreement.
//!
//! Both methods fit a line to the probit-transformed agreement pairs
//! `(Φ⁻¹(Agr_ID(i,j)), Φ⁻¹(Agr_OOD(i,j)))` for `i < j`. ALine-S applies that
//! line to each model's probit ID performance. ALine-D instead uses the fitted
//! slope to turn every pair into one linear equation in the unknown probit OOD
//! performances and solves the resulting tall system by least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::AgreementMatrix;
use crate::probit::{fit_xy, normal_cdf, probit_rate, FitError, LineFit, DEFAULT_CLAMP_EPS};

pub const DEFAULT_GATE_THRESHOLD: f64 = 0.95;

/// Relative singular-value cutoff below which the ALine-D system is reported
/// as rank deficient.
const RANK_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AlineError {
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error("need at least {needed} models, found {found}")]
    InsufficientModels { needed: usize, found: usize },
    #[error("least-squares system is numerically rank deficient")]
    RankDeficient,
    #[error("inputs are not aligned: {0}")]
    Misaligned(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlineMethod {
    AlineS,
    AlineD,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlineInput {
    pub id_perf: Vec<f64>,
    pub agr_id: AgreementMatrix,
    pub agr_ood: AgreementMatrix,
    pub gate_threshold: f64,
    pub clamp_eps: f64,
}

impl AlineInput {
    pub fn new(id_perf: Vec<f64>, agr_id: AgreementMatrix, agr_ood: AgreementMatrix) -> Self {
        AlineInput {
            id_perf,
            agr_id,
            agr_ood,
            gate_threshold: DEFAULT_GATE_THRESHOLD,
            clamp_eps: DEFAULT_CLAMP_EPS,
        }
    }

    pub fn n(&self) -> usize {
        self.id_perf.len()
    }

    fn check(&self, needed: usize) -> Result<(), AlineError> {
        let n = self.n();
        if self.agr_id.n() != n || self.agr_ood.n() != n {
            return Err(AlineError::Misaligned(format!(
                "{n} ID performances, {}×{} ID and {}×{} OOD agreement matrices",
                self.agr_id.n(),
                self.agr_id.n(),
                self.agr_ood.n(),
                self.agr_ood.n()
            )));
        }
        if self.agr_id.model_ids != self.agr_ood.model_ids {
            return Err(AlineError::Misaligned(
                "ID and OOD agreement matrices list models in different orders".into(),
            ));
        }
        if n < needed {
            return Err(AlineError::InsufficientModels { needed, found: n });
        }
        Ok(())
    }

    fn probit_id_perf(&self) -> Result<Vec<f64>, AlineError> {
        self.id_perf
            .iter()
            .map(|&p| probit_rate(p, self.clamp_eps).map_err(AlineError::from))
            .collect()
    }

    /// Probit agreement coordinates `(x_id, y_ood)` for every `i < j`.
    fn probit_pairs(&self) -> Result<Vec<(usize, usize, f64, f64)>, AlineError> {
        self.agr_id
            .upper_pairs()
            .map(|(i, j, id)| {
                let x = probit_rate(id, self.clamp_eps)?;
                let y = probit_rate(self.agr_ood.get(i, j), self.clamp_eps)?;
                Ok((i, j, x, y))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlineOutput {
    pub method: AlineMethod,
    pub estimates: Vec<f64>,
    pub agreement_fit: LineFit,
    /// True when the agreement fit clears the gate threshold.
    pub gated: bool,
}

/// True iff `fit.r_squared` is strictly above `threshold`.
pub fn gate(fit: &LineFit, threshold: f64) -> bool {
    fit.r_squared_defined && fit.r_squared > threshold
}

/// Least-squares line through the probit agreement pairs.
pub fn agreement_line(input: &AlineInput) -> Result<LineFit, AlineError> {
    input.check(2)?;
    let pairs = input.probit_pairs()?;
    let xs: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.3).collect();
    Ok(fit_xy(&xs, &ys)?)
}

pub fn aline_s(input: &AlineInput) -> Result<AlineOutput, AlineError> {
    let fit = agreement_line(input)?;
    let estimates = input
        .probit_id_perf()?
        .into_iter()
        .map(|x| normal_cdf(fit.predict(x)).clamp(0.0, 1.0))
        .collect();
    Ok(AlineOutput {
        method: AlineMethod::AlineS,
        estimates,
        agreement_fit: fit,
        gated: gate(&fit, input.gate_threshold),
    })
}

/// The ALine-D system: one row per pair `(i, j)` with coefficient ½ on
/// columns `i` and `j`, and its right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct AlineDSystem {
    pub n_models: usize,
    pub pairs: Vec<(usize, usize)>,
    pub rhs: Vec<f64>,
}

impl AlineDSystem {
    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.pairs.len(), self.n_models);
        for (row, &(i, j)) in self.pairs.iter().enumerate() {
            m[(row, i)] = 0.5;
            m[(row, j)] = 0.5;
        }
        m
    }

    /// Sum of squared residuals of a candidate probit solution.
    pub fn residual_ss(&self, solution: &[f64]) -> f64 {
        self.pairs
            .iter()
            .zip(&self.rhs)
            .map(|(&(i, j), &b)| {
                let r = 0.5 * (solution[i] + solution[j]) - b;
                r * r
            })
            .sum()
    }
}

pub fn aline_d_system(input: &AlineInput, slope: f64) -> Result<AlineDSystem, AlineError> {
    input.check(3)?;
    let id = input.probit_id_perf()?;
    let mut pairs = Vec::new();
    let mut rhs = Vec::new();
    for (i, j, x_id, y_ood) in input.probit_pairs()? {
        pairs.push((i, j));
        rhs.push(y_ood + slope * (0.5 * (id[i] + id[j]) - x_id));
    }
    Ok(AlineDSystem {
        n_models: input.n(),
        pairs,
        rhs,
    })
}

/// Least-squares probit OOD performances and the agreement fit they used.
pub fn aline_d_probits(input: &AlineInput) -> Result<(Vec<f64>, LineFit), AlineError> {
    input.check(3)?;
    let fit = agreement_line(input)?;
    let system = aline_d_system(input, fit.slope)?;
    let solution = solve_least_squares(&system.matrix(), &DVector::from_vec(system.rhs))?;
    Ok((solution.iter().copied().collect(), fit))
}

pub fn aline_d(input: &AlineInput) -> Result<AlineOutput, AlineError> {
    let (probits, fit) = aline_d_probits(input)?;
    let estimates = probits
        .into_iter()
        .map(|z| normal_cdf(z).clamp(0.0, 1.0))
        .collect();
    Ok(AlineOutput {
        method: AlineMethod::AlineD,
        estimates,
        agreement_fit: fit,
        gated: gate(&fit, input.gate_threshold),
    })
}

/// Normal equations with a Cholesky factorization; falls back to SVD when
/// the Gram matrix is not numerically positive definite.
pub fn solve_least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>, AlineError> {
    let gram = a.transpose() * a;
    let atb = a.transpose() * b;
    if let Some(chol) = gram.clone().cholesky() {
        // Pivot ratio of L approximates the singular-value ratio of `a`.
        let diag = chol.l_dirty().diagonal();
        if diag.min() > RANK_TOLERANCE.sqrt() * diag.max() {
            let x = chol.solve(&atb);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    let svd = a.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    if max_sv == 0.0 || svd.singular_values.min() <= RANK_TOLERANCE * max_sv {
        return Err(AlineError::RankDeficient);
    }
    svd.solve(b, RANK_TOLERANCE * max_sv)
        .map_err(|_| AlineError::RankDeficient)
}


#[cfg(test)]
mod properties {
    use super::*;
    use crate::datamodel::Metric;
    use proptest::prelude::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("m{i}")).collect()
    }

    fn matrix(n: usize, upper: &[f64], split: &str) -> AgreementMatrix {
        AgreementMatrix::from_upper(ids(n), upper, Metric::Accuracy, split)
    }

    /// Inputs that sit exactly on a shared probit line with the given slope
    /// and bias.
    fn exact_input(z: &[f64], x: &[f64], slope: f64, bias: f64) -> AlineInput {
        let n = z.len();
        let id_perf: Vec<f64> = z.iter().map(|&v| normal_cdf(v)).collect();
        let id_upper: Vec<f64> = x.iter().map(|&v| normal_cdf(v)).collect();
        let ood_upper: Vec<f64> = x.iter().map(|&v| normal_cdf(slope * v + bias)).collect();
        AlineInput::new(
            id_perf,
            matrix(n, &id_upper, "id"),
            matrix(n, &ood_upper, "ood"),
        )
    }

    fn exact_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64)> {
        (3usize..8)
            .prop_flat_map(|n| {
                (
                    prop::collection::vec(-2.0f64..2.0, n),
                    prop::collection::vec(-2.0f64..2.0, n * (n - 1) / 2),
                    0.3f64..1.2,
                    -0.8f64..0.8,
                )
            })
            .prop_filter("x spread", |(_, x, _, _)| {
                let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                hi - lo > 0.2
            })
    }

    fn random_input() -> impl Strategy<Value = AlineInput> {
        (3usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(0.05f64..0.95, n),
                prop::collection::vec(0.05f64..0.95, n * (n - 1) / 2),
                prop::collection::vec(0.05f64..0.95, n * (n - 1) / 2),
            )
                .prop_map(move |(perf, id, ood)| {
                    AlineInput::new(perf, matrix(n, &id, "id"), matrix(n, &ood, "ood"))
                })
        })
    }

    fn permute(input: &AlineInput, order: &[usize]) -> AlineInput {
        AlineInput::new(
            order.iter().map(|&o| input.id_perf[o]).collect(),
            input.agr_id.permuted(order),
            input.agr_ood.permuted(order),
        )
    }

    proptest! {
        #[test]
        fn exact_line_is_recovered((z, x, slope, bias) in exact_case()) {
            let input = exact_input(&z, &x, slope, bias);
            let s = aline_s(&input).unwrap();
            let d = aline_d(&input).unwrap();
            for (i, &zi) in z.iter().enumerate() {
                let truth = normal_cdf(slope * zi + bias);
                prop_assert!((s.estimates[i] - truth).abs() < 1e-9);
                prop_assert!((d.estimates[i] - truth).abs() < 1e-9);
            }
            prop_assert!((s.agreement_fit.slope - slope).abs() < 1e-9);
            prop_assert!(s.gated);
        }

        #[test]
        fn aline_s_preserves_order_under_positive_slope(input in random_input()) {
            let out = aline_s(&input).unwrap();
            let n = input.n();
            for i in 0..n {
                for j in 0..n {
                    if input.id_perf[i] <= input.id_perf[j] {
                        let ok = if out.agreement_fit.slope >= 0.0 {
                            out.estimates[i] <= out.estimates[j]
                        } else {
                            out.estimates[i] >= out.estimates[j]
                        };
                        prop_assert!(ok);
                    }
                }
            }
        }

        #[test]
        fn estimates_follow_model_permutation(
            input in random_input(),
            seed in any::<u64>(),
        ) {
            let n = input.n();
            let mut order: Vec<usize> = (0..n).collect();
            let mut state = seed;
            for i in (1..n).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                order.swap(i, (state >> 33) as usize % (i + 1));
            }
            let moved = permute(&input, &order);
            for f in [aline_s, aline_d] {
                let base = f(&input).unwrap();
                let perm = f(&moved).unwrap();
                for (new, &old) in order.iter().enumerate() {
                    prop_assert!((perm.estimates[new] - base.estimates[old]).abs() < 1e-10);
                }
            }
        }

        #[test]
        fn aline_d_minimises_residuals(
            input in random_input(),
            deltas in prop::collection::vec(-1e-3f64..1e-3, 8),
        ) {
            let (probits, fit) = aline_d_probits(&input).unwrap();
            let system = aline_d_system(&input, fit.slope).unwrap();
            let best = system.residual_ss(&probits);
            let nudged: Vec<f64> = probits.iter().zip(&deltas).map(|(p, d)| p + d).collect();
            prop_assert!(system.residual_ss(&nudged) >= best - 1e-12);
        }

        #[test]
        fn aline_estimates_are_rates(input in random_input()) {
            for f in [aline_s, aline_d] {
                let out = f(&input).unwrap();
                prop_assert!(out.estimates.iter().all(|e| (0.0..=1.0).contains(e)));
            }
        }
    }
}
