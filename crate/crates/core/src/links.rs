//! Working CDFs used to model distribution functions of untreated potential
//! outcomes at each outcome level, together with their inverses and densities.
//!
//! The five links are the standard normal, logistic, and Cauchy CDFs (strictly
//! increasing from R onto (0,1)), the standard uniform CDF (a clamp to [0,1]),
//! and the identity map. The identity link reproduces the distributional
//! difference-in-differences special case.
//!
//! `cdf` accepts the extended reals for the unbounded links and returns the
//! limits 0 and 1 at -inf/+inf; `quantile` returns -inf/+inf at p = 0/1 for
//! those links. Callers decide how to combine infinities.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_1_PI, PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Normal,
    Logistic,
    Cauchy,
    Uniform,
    Identity,
}

impl Link {
    pub const ALL: [Link; 5] = [
        Link::Normal,
        Link::Logistic,
        Link::Cauchy,
        Link::Uniform,
        Link::Identity,
    ];

    /// Links whose CDF maps all of R strictly increasingly onto (0,1).
    pub fn is_unbounded(self) -> bool {
        matches!(self, Link::Normal | Link::Logistic | Link::Cauchy)
    }

    pub fn name(self) -> &'static str {
        match self {
            Link::Normal => "normal",
            Link::Logistic => "logistic",
            Link::Cauchy => "cauchy",
            Link::Uniform => "uniform",
            Link::Identity => "identity",
        }
    }

    /// CDF value at `x`. `x` may be +/-inf for the unbounded links.
    pub fn cdf(self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::Domain("cdf argument is NaN".into()));
        }
        if x.is_infinite() {
            return match self {
                Link::Normal | Link::Logistic | Link::Cauchy => {
                    Ok(if x > 0.0 { 1.0 } else { 0.0 })
                }
                Link::Uniform | Link::Identity => Err(Error::Domain(format!(
                    "{} link is not defined at infinite arguments",
                    self.name()
                ))),
            };
        }
        Ok(match self {
            Link::Normal => norm_cdf(x),
            Link::Logistic => logistic_cdf(x),
            Link::Cauchy => 0.5 + FRAC_1_PI * x.atan(),
            Link::Uniform => x.clamp(0.0, 1.0),
            Link::Identity => x,
        })
    }

    /// Left inverse of `cdf` on [0, 1]. For the unbounded links the
    /// boundary probabilities map to -inf/+inf.
    pub fn quantile(self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Domain(format!(
                "quantile argument {p} outside [0, 1]"
            )));
        }
        if self.is_unbounded() {
            if p == 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            if p == 1.0 {
                return Ok(f64::INFINITY);
            }
        }
        Ok(match self {
            Link::Normal => norm_quantile(p),
            Link::Logistic => p.ln() - (-p).ln_1p(),
            Link::Cauchy => cauchy_quantile(p),
            Link::Uniform | Link::Identity => p,
        })
    }

    /// Derivative of `cdf` at finite `x`. At the kinks of the uniform link the
    /// inside-support one-sided value 1 is returned.
    pub fn density(self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain("density argument must be finite".into()));
        }
        Ok(match self {
            Link::Normal => (-0.5 * x * x).exp() / (2.0 * PI).sqrt(),
            Link::Logistic => {
                let s = logistic_cdf(x);
                let t = logistic_cdf(-x);
                s * t
            }
            Link::Cauchy => FRAC_1_PI / (1.0 + x * x),
            Link::Uniform => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            Link::Identity => 1.0,
        })
    }
}

impl fmt::Display for Link {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Link {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Link::Normal),
            "logistic" => Ok(Link::Logistic),
            "cauchy" => Ok(Link::Cauchy),
            "uniform" => Ok(Link::Uniform),
            "identity" => Ok(Link::Identity),
            other => Err(Error::UnknownLink(other.to_string())),
        }
    }
}

fn logistic_cdf(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn cauchy_quantile(p: f64) -> f64 {
    // tan(pi (p - 1/2)) evaluated through the tail with the smaller argument:
    // near p = 1 compute via the cotangent of pi (1 - p), where 1 - p is exact.
    if p == 0.5 {
        0.0
    } else if p > 0.5 {
        1.0 / (PI * (1.0 - p)).tan()
    } else {
        -1.0 / (PI * p).tan()
    }
}

// ---------------------------------------------------------------------------
// Standard normal CDF via Cody's rational Chebyshev approximation of erf/erfc
// (abs. error well below 1e-12 over the whole range) and quantile via
// Acklam's rational approximation refined by one Halley step on the CDF.
// ---------------------------------------------------------------------------

const ERF_A: [f64; 5] = [
    3.16112374387056560e0,
    1.13864154151050156e2,
    3.77485237685302021e2,
    3.20937758913846947e3,
    1.85777706184603153e-1,
];
const ERF_B: [f64; 4] = [
    2.36012909523441209e1,
    2.44024637934444173e2,
    1.28261652607737228e3,
    2.84423683343917062e3,
];
const ERF_C: [f64; 9] = [
    5.64188496988670089e-1,
    8.88314979438837594e0,
    6.61191906371416295e1,
    2.98635138197400131e2,
    8.81952221241769090e2,
    1.71204761263407058e3,
    2.05107837782607147e3,
    1.23033935479799725e3,
    2.15311535474403846e-8,
];
const ERF_D: [f64; 8] = [
    1.57449261107098347e1,
    1.17693950891312499e2,
    5.37181101862009858e2,
    1.62138957456669019e3,
    3.29079923573345963e3,
    4.36261909014324716e3,
    3.43936767414372164e3,
    1.23033935480374942e3,
];
const ERF_P: [f64; 6] = [
    3.05326634961232344e-1,
    3.60344899949804439e-1,
    1.25781726111229246e-1,
    1.60837851487422766e-2,
    6.58749161529837803e-4,
    1.63153871373020978e-2,
];
const ERF_Q: [f64; 5] = [
    2.56852019228982242e0,
    1.87295284992346047e0,
    5.27905102951428412e-1,
    6.05183413124413191e-2,
    2.33520497626869185e-3,
];
const FRAC_1_SQRT_PI: f64 = 5.6418958354775628695e-1;

fn erf_small(x: f64) -> f64 {
    // |x| <= 0.46875
    let z = x * x;
    let mut num = ERF_A[4] * z;
    let mut den = z;
    for i in 0..3 {
        num = (num + ERF_A[i]) * z;
        den = (den + ERF_B[i]) * z;
    }
    x * (num + ERF_A[3]) / (den + ERF_B[3])
}

fn exp_split(y: f64) -> f64 {
    // exp(-y^2) evaluated as exp(-hi^2) * exp(-(y-hi)(y+hi)) to limit the
    // argument rounding error in the tails.
    let hi = (y * 16.0).trunc() / 16.0;
    let del = (y - hi) * (y + hi);
    (-hi * hi).exp() * (-del).exp()
}

fn erfc_mid(y: f64) -> f64 {
    // 0.46875 < y <= 4
    let mut num = ERF_C[8] * y;
    let mut den = y;
    for i in 0..7 {
        num = (num + ERF_C[i]) * y;
        den = (den + ERF_D[i]) * y;
    }
    exp_split(y) * (num + ERF_C[7]) / (den + ERF_D[7])
}

fn erfc_large(y: f64) -> f64 {
    // y > 4
    if y >= 26.6 {
        return 0.0;
    }
    let z = 1.0 / (y * y);
    let mut num = ERF_P[5] * z;
    let mut den = z;
    for i in 0..4 {
        num = (num + ERF_P[i]) * z;
        den = (den + ERF_Q[i]) * z;
    }
    let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
    exp_split(y) * (FRAC_1_SQRT_PI - r) / y
}

pub(crate) fn erfc(x: f64) -> f64 {
    let y = x.abs();
    let v = if y <= 0.46875 {
        return 1.0 - erf_small(x);
    } else if y <= 4.0 {
        erfc_mid(y)
    } else {
        erfc_large(y)
    };
    if x < 0.0 {
        2.0 - v
    } else {
        v
    }
}

pub(crate) fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

const NQ_A: [f64; 6] = [
    -3.969683028665376e+01,
    2.209460984245205e+02,
    -2.759285104469687e+02,
    1.383577518672690e+02,
    -3.066479806614716e+01,
    2.506628277459239e+00,
];
const NQ_B: [f64; 5] = [
    -5.447609879822406e+01,
    1.615858368580409e+02,
    -1.556989798598866e+02,
    6.680131188771972e+01,
    -1.328068155288572e+01,
];
const NQ_C: [f64; 6] = [
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e+00,
    -2.549732539343734e+00,
    4.374664141464968e+00,
    2.938163982698783e+00,
];
const NQ_D: [f64; 4] = [
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e+00,
    3.754408661907416e+00,
];

pub(crate) fn norm_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    const P_LOW: f64 = 0.02425;
    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((NQ_C[0] * q + NQ_C[1]) * q + NQ_C[2]) * q + NQ_C[3]) * q + NQ_C[4]) * q + NQ_C[5])
            / ((((NQ_D[0] * q + NQ_D[1]) * q + NQ_D[2]) * q + NQ_D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((NQ_A[0] * r + NQ_A[1]) * r + NQ_A[2]) * r + NQ_A[3]) * r + NQ_A[4]) * r + NQ_A[5]) * q
            / (((((NQ_B[0] * r + NQ_B[1]) * r + NQ_B[2]) * r + NQ_B[3]) * r + NQ_B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((NQ_C[0] * q + NQ_C[1]) * q + NQ_C[2]) * q + NQ_C[3]) * q + NQ_C[4]) * q + NQ_C[5])
            / ((((NQ_D[0] * q + NQ_D[1]) * q + NQ_D[2]) * q + NQ_D[3]) * q + 1.0)
    };
    // One Halley step against the high-accuracy CDF. Skipped deep in the
    // tails where exp(x^2/2) would overflow; the rational estimate is already
    // accurate to ~1e-9 relative there.
    if x.abs() < 37.0 {
        let e = norm_cdf(x) - p;
        let u = e * (2.0 * PI).sqrt() * (0.5 * x * x).exp();
        x - u / (1.0 + 0.5 * x * u)
    } else {
        x
    }
}
