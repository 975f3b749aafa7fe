//! Probit transform and probit-space least-squares line fitting.
//!
//! Rates in `[0, 1]` are clamped to `[eps, 1 - eps]` before the transform so
//! that a saturated model (accuracy or agreement exactly 0 or 1) maps to a
//! finite point. The inverse CDF is AS241 followed by a single Newton step
//! against [`normal_cdf`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default clamp applied to rates before the probit transform.
pub const DEFAULT_CLAMP_EPS: f64 = 1e-4;

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_677_939_946_059_934_381_868_5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("value {0} is outside the probit domain")]
    Domain(f64),
    #[error("degenerate line fit: {0}")]
    DegenerateFit(&'static str),
}

/// Standard normal density.
#[inline]
pub fn normal_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal CDF, `Φ(z)`.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * std::f64::consts::FRAC_1_SQRT_2)
}

/// Inverse standard normal CDF, `Φ⁻¹(p)`, for `p` strictly inside `(0, 1)`.
pub fn probit(p: f64) -> Result<f64, FitError> {
    if p.is_nan() || p <= 0.0 || p >= 1.0 {
        return Err(FitError::Domain(p));
    }
    if p > 0.5 {
        // 1 - p is exact here, so antisymmetry holds bit-for-bit.
        return Ok(-lower_probit(1.0 - p));
    }
    Ok(lower_probit(p))
}

/// `p <= 0.5` only; refines AS241 with one Newton step on the lower tail,
/// where `Φ` is computed without cancellation.
fn lower_probit(p: f64) -> f64 {
    let x = as241(p);
    if x == 0.0 {
        return 0.0;
    }
    let density = normal_pdf(x);
    if density > 0.0 {
        x - (normal_cdf(x) - p) / density
    } else {
        x
    }
}

#[allow(clippy::excessive_precision)]
fn as241(p: f64) -> f64 {
    const SPLIT1: f64 = 0.425;
    const SPLIT2: f64 = 5.0;
    const CONST1: f64 = 0.180625;
    const CONST2: f64 = 1.6;

    const A: [f64; 8] = [
        3.3871328727963666080E0,
        1.3314166789178437745E+2,
        1.9715909503065514427E+3,
        1.3731693765509461125E+4,
        4.5921953931549871457E+4,
        6.7265770927008700853E+4,
        3.3430575583588128105E+4,
        2.5090809287301226727E+3,
    ];
    const B: [f64; 8] = [
        1.0,
        4.2313330701600911252E+1,
        6.8718700749205790830E+2,
        5.3941960214247511077E+3,
        2.1213794301586595867E+4,
        3.9307895800092710610E+4,
        2.8729085735721942674E+4,
        5.2264952788528545610E+3,
    ];
    const C: [f64; 8] = [
        1.42343711074968357734E0,
        4.63033784615654529590E0,
        5.76949722146069140550E0,
        3.64784832476320460504E0,
        1.27045825245236838258E0,
        2.41780725177450611770E-1,
        2.27238449892691845833E-2,
        7.74545014278341407640E-4,
    ];
    const D: [f64; 8] = [
        1.0,
        2.05319162663775882187E0,
        1.67638483018380384940E0,
        6.89767334985100004550E-1,
        1.48103976427480074590E-1,
        1.51986665636164571966E-2,
        5.47593808499534494600E-4,
        1.05075007164441684324E-9,
    ];
    const E: [f64; 8] = [
        6.65790464350110377720E0,
        5.46378491116411436990E0,
        1.78482653991729133580E0,
        2.96560571828504891230E-1,
        2.65321895265761230930E-2,
        1.24266094738807843860E-3,
        2.71155556874348757815E-5,
        2.01033439929228813265E-7,
    ];
    const F: [f64; 8] = [
        1.0,
        5.99832206555887937690E-1,
        1.36929880922735805310E-1,
        1.48753612908506148525E-2,
        7.86869131145613259100E-4,
        1.84631831751005468180E-5,
        1.42151175831644588870E-7,
        2.04426310338993978564E-15,
    ];

    fn poly(c: &[f64; 8], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
    }

    let q = p - 0.5;
    if q.abs() <= SPLIT1 {
        let r = CONST1 - q * q;
        return q * poly(&A, r) / poly(&B, r);
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let r = (-tail.ln()).sqrt();
    let value = if r <= SPLIT2 {
        let r = r - CONST2;
        poly(&C, r) / poly(&D, r)
    } else {
        let r = r - SPLIT2;
        poly(&E, r) / poly(&F, r)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Clamp a rate into `[DEFAULT_CLAMP_EPS, 1 - DEFAULT_CLAMP_EPS]`.
pub fn clamp_rate(p: f64) -> Result<f64, FitError> {
    clamp_rate_with(p, DEFAULT_CLAMP_EPS)
}

pub fn clamp_rate_with(p: f64, eps: f64) -> Result<f64, FitError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(FitError::Domain(p));
    }
    Ok(p.min(1.0 - eps).max(eps))
}

/// `Φ⁻¹(clamp(p))`, the transform applied to every accuracy and agreement.
pub fn probit_rate(p: f64, eps: f64) -> Result<f64, FitError> {
    probit(clamp_rate_with(p, eps)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointTag {
    Accuracy { model_id: String },
    Agreement { model_i: String, model_j: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbitPoint {
    pub x: f64,
    pub y: f64,
    pub tag: PointTag,
}

/// Ordinary least-squares fit `y ≈ slope·x + bias`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub bias: f64,
    /// Squared Pearson correlation; 0 when undefined.
    pub r_squared: f64,
    /// False when every `y` is equal and the correlation has no value.
    pub r_squared_defined: bool,
    pub n_points: usize,
    pub residual_ss: f64,
}

impl LineFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.bias
    }
}

pub fn fit_line(points: &[ProbitPoint]) -> Result<LineFit, FitError> {
    let xs: Vec<f64> = points.iter().map(|p| p.x).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.y).collect();
    fit_xy(&xs, &ys)
}

/// Same as [`fit_line`] on bare coordinate slices.
pub fn fit_xy(xs: &[f64], ys: &[f64]) -> Result<LineFit, FitError> {
    assert_eq!(xs.len(), ys.len(), "coordinate slices differ in length");
    let n = xs.len();
    if n < 2 {
        return Err(FitError::DegenerateFit("fewer than two points"));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(FitError::DegenerateFit("non-finite coordinate"));
    }
    let nf = n as f64;
    let mean_x = xs.iter().sum::<f64>() / nf;
    let mean_y = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = x - mean_x;
        let dy = y - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 {
        return Err(FitError::DegenerateFit("all x values are equal"));
    }
    let slope = sxy / sxx;
    let bias = mean_y - slope * mean_x;
    let residual_ss = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - slope * x - bias;
            r * r
        })
        .sum::<f64>();
    let (r_squared, r_squared_defined) = if syy > 0.0 {
        ((sxy * sxy / (sxx * syy)).clamp(0.0, 1.0), true)
    } else {
        (0.0, false)
    };
    Ok(LineFit {
        slope,
        bias,
        r_squared,
        r_squared_defined,
        n_points: n,
        residual_ss,
    })
}
