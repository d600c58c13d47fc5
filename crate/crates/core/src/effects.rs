//! Treatment-effect curves and the band geometry connecting distribution
//! functions to quantiles: left-inverse quantiles, band inversion, and
//! Minkowski interval differences.

use crate::ecdf::{Grid, StepDf};
use crate::error::{Error, Result};
use crate::inference::UniformBand;
use serde::Serialize;
use std::sync::Arc;

/// Horizontal axis of a function-valued estimate: an outcome grid or a
/// probability grid.
#[derive(Debug, Clone, PartialEq)]
pub enum Axis {
    Outcome(Arc<Grid>),
    Probability(Vec<f64>),
}

impl Axis {
    pub fn len(&self) -> usize {
        match self {
            Axis::Outcome(g) => g.len(),
            Axis::Probability(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f64] {
        match self {
            Axis::Outcome(g) => g.points(),
            Axis::Probability(t) => t,
        }
    }
}

/// A function-valued effect estimate, optionally with a uniform band.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectCurve {
    pub axis: Axis,
    pub values: Vec<f64>,
    pub band: Option<UniformBand>,
}

impl EffectCurve {
    pub fn new(axis: Axis, values: Vec<f64>) -> Result<Self> {
        if axis.len() != values.len() {
            return Err(Error::GridMismatch);
        }
        Ok(EffectCurve {
            axis,
            values,
            band: None,
        })
    }

    /// Serialize as `axis,estimate,lo,hi` CSV (band columns empty when the
    /// curve carries no band).
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("axis,estimate,lo,hi\n");
        for (i, (x, v)) in self.axis.values().iter().zip(&self.values).enumerate() {
            match &self.band {
                Some(b) => s.push_str(&format!("{x},{v},{},{}\n", b.lo[i], b.hi[i])),
                None => s.push_str(&format!("{x},{v},,\n")),
            }
        }
        s
    }

    /// Parse the CSV written by `to_csv_string`. Bands round-trip only
    /// through their envelopes; scale and critical value are not part of the
    /// flat file.
    pub fn from_csv_str(text: &str, outcome_axis: bool, sup_y: Option<f64>) -> Result<Self> {
        let mut xs = Vec::new();
        let mut vs = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() < 2 {
                return Err(Error::BadRow {
                    row: i + 1,
                    message: "expected at least axis,estimate".into(),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::BadRow {
                    row: i + 1,
                    message: format!("cannot parse {what} '{s}'"),
                })
            };
            xs.push(parse(fields[0], "axis")?);
            vs.push(parse(fields[1], "estimate")?);
            if fields.len() >= 4 && !fields[2].trim().is_empty() {
                lo.push(parse(fields[2], "lo")?);
                hi.push(parse(fields[3], "hi")?);
            }
        }
        let axis = if outcome_axis {
            let sup = sup_y.unwrap_or(*xs.last().ok_or(Error::EmptyGrid)?);
            Axis::Outcome(Arc::new(Grid::new(xs, sup)?))
        } else {
            Axis::Probability(xs)
        };
        let mut curve = EffectCurve::new(axis, vs)?;
        if lo.len() == curve.values.len() {
            curve.band = Some(UniformBand::from_envelopes(
                curve.axis.clone(),
                curve.values.clone(),
                lo,
                hi,
            )?);
        }
        Ok(curve)
    }
}

/// A closed interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo > hi {
            return Err(Error::MalformedInterval(lo, hi));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Distribution treatment effect on the treated: treated DF minus
/// counterfactual DF, pointwise on a common grid.
pub fn dtt(treated: &StepDf, counterfactual: &StepDf) -> Result<EffectCurve> {
    if !treated.same_grid(counterfactual) {
        return Err(Error::GridMismatch);
    }
    let values = treated
        .values()
        .iter()
        .zip(counterfactual.values())
        .map(|(t, c)| t - c)
        .collect();
    EffectCurve::new(Axis::Outcome(treated.grid().clone()), values)
}

/// Discretization used for the average DTT.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdttRule {
    /// Arithmetic mean over grid points (the reported "mean DTT").
    #[default]
    GridMean,
    /// Trapezoid rule over the grid, normalized by the grid span.
    Trapezoid,
}

/// Average DTT over the outcome grid.
pub fn adtt(curve: &EffectCurve) -> f64 {
    adtt_with(curve, AdttRule::GridMean)
}

pub fn adtt_with(curve: &EffectCurve, rule: AdttRule) -> f64 {
    let v = &curve.values;
    match rule {
        AdttRule::GridMean => v.iter().sum::<f64>() / v.len() as f64,
        AdttRule::Trapezoid => {
            let x = curve.axis.values();
            if v.len() == 1 {
                return v[0];
            }
            let mut area = 0.0;
            for i in 1..v.len() {
                area += 0.5 * (v[i] + v[i - 1]) * (x[i] - x[i - 1]);
            }
            area / (x[v.len() - 1] - x[0])
        }
    }
}

/// Left-inverse quantile of a step DF: the smallest grid point where the DF
/// reaches `tau`, falling back to the supremum of the observed support when
/// the DF never does.
pub fn left_inverse(df: &StepDf, tau: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&tau), "tau must lie in [0, 1]");
    for (y, v) in df.grid().points().iter().zip(df.values()) {
        if *v >= tau {
            return *y;
        }
    }
    df.grid().sup_y()
}

/// Quantile treatment effect on the treated at each probability in `taus`.
pub fn qtt(treated: &StepDf, counterfactual: &StepDf, taus: &[f64]) -> Result<EffectCurve> {
    if !treated.same_grid(counterfactual) {
        return Err(Error::GridMismatch);
    }
    let values = taus
        .iter()
        .map(|&tau| left_inverse(treated, tau) - left_inverse(counterfactual, tau))
        .collect();
    EffectCurve::new(Axis::Probability(taus.to_vec()), values)
}

/// Minkowski difference of two intervals: [i1 - j2, i2 - j1].
pub fn minkowski_diff(i: Interval, j: Interval) -> Result<Interval> {
    if i.lo > i.hi {
        return Err(Error::MalformedInterval(i.lo, i.hi));
    }
    if j.lo > j.hi {
        return Err(Error::MalformedInterval(j.lo, j.hi));
    }
    Ok(Interval {
        lo: i.lo - j.hi,
        hi: i.hi - j.lo,
    })
}

/// Quantile-function intervals from a DF band: at each tau the interval runs
/// from the left inverse of the upper envelope to the left inverse of the
/// lower envelope. Both envelopes are monotonized by a running max first (a
/// pointwise envelope of a nondecreasing target stays valid under running
/// max, and the left inverse presumes nondecreasing input).
pub fn invert_df_band(band: &UniformBand, taus: &[f64]) -> Result<Vec<Interval>> {
    let Axis::Outcome(grid) = &band.axis else {
        return Err(Error::Domain(
            "band inversion requires a band on an outcome grid".into(),
        ));
    };
    let run_max = |v: &[f64]| {
        let mut out = v.to_vec();
        let mut m = f64::NEG_INFINITY;
        for x in &mut out {
            m = m.max(*x);
            *x = m;
        }
        out
    };
    let lo_m = run_max(&band.lo);
    let hi_m = run_max(&band.hi);
    if let Some(i) = lo_m.iter().zip(&hi_m).position(|(l, h)| l > h) {
        return Err(Error::BandEdgesCross(i));
    }
    let lo_df = StepDf::new(grid.clone(), lo_m, "band-lo", true)?;
    let hi_df = StepDf::new(grid.clone(), hi_m, "band-hi", true)?;
    taus.iter()
        .map(|&tau| Interval::new(left_inverse(&hi_df, tau), left_inverse(&lo_df, tau)))
        .collect()
}

/// QTT intervals: pointwise Minkowski difference of treated and
/// counterfactual quantile-function intervals on a matched tau grid.
pub fn qtt_band(
    treated_qf: &[Interval],
    counterfactual_qf: &[Interval],
) -> Result<Vec<Interval>> {
    if treated_qf.len() != counterfactual_qf.len() {
        return Err(Error::TauGridMismatch);
    }
    treated_qf
        .iter()
        .zip(counterfactual_qf)
        .map(|(&i, &j)| minkowski_diff(i, j))
        .collect()
}

/// Default probability grid {0.05, 0.10, ..., 0.95}: tail quantiles of
/// discrete DFs are dominated by the support-supremum fallback.
pub fn default_taus() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}
