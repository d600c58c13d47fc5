//! Cluster nonparametric and multiplier bootstrap with uniform sup-t
//! confidence bands.
//!
//! Units are resampled whole (all their periods together), preserving
//! within-unit dependence; repeated cross-sections degenerate to per-period
//! observation resampling automatically since each unit carries one row.
//! Per-point scale is the bootstrap interquartile range rescaled by the
//! standard normal IQR, floored at a small constant so that grid points with
//! no bootstrap variation cannot blow up the sup statistic.

use crate::aggregate::{
    equal_group_weights, equal_weights_all, event_study_weights, event_study_weights_weighted,
    WeightScheme,
};
use crate::data::{DesignInfo, Group, PanelDataset, TreatmentDesign};
use crate::drcov::DrSpec;
use crate::ecdf::{cell_ecdf_unit_weights, Grid, StepDf};
use crate::effects::{
    adtt_with, dtt, invert_df_band, qtt_band, AdttRule, Axis, EffectCurve, Interval,
};
use crate::error::{Error, Result};
use crate::identify::{cf_values_into, clip_eps, CfDiagnostics, CfLinks, CfOptions, LinkRegime};
use crate::links::norm_quantile;
use crate::rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

/// Mean-zero, variance-one multiplier distributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MultiplierDist {
    Rademacher,
    StdNormal,
    Mammen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BootScheme {
    /// Unit-level resampling with replacement.
    Nonparametric,
    /// Unit-level multiplier weights 1 + xi.
    Multiplier(MultiplierDist),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub scheme: BootScheme,
    pub replications: usize,
    pub seed: u64,
    /// Joint coverage level of the bands, in (0, 1).
    pub level: f64,
}

impl BootstrapPlan {
    pub fn new(scheme: BootScheme, replications: usize, seed: u64, level: f64) -> Result<Self> {
        if replications == 0 {
            return Err(Error::Config("bootstrap replications must be >= 1".into()));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::Config(format!(
                "coverage level {level} must lie in (0, 1)"
            )));
        }
        Ok(BootstrapPlan {
            scheme,
            replications,
            seed,
            level,
        })
    }

    /// Non-fatal configuration warnings.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if self.replications < 200 {
            w.push(format!(
                "only {} bootstrap replications; critical values are unstable below 200",
                self.replications
            ));
        }
        w
    }
}

/// A bootstrap draw in the representation the scheme produces.
#[derive(Debug, Clone)]
pub enum Resample {
    /// Nonparametric: a materialized dataset of redrawn units. Units drawn
    /// more than once appear as distinct copies with `~k` id suffixes.
    Dataset(PanelDataset),
    /// Multiplier: per-unit observation weights 1 + xi.
    Weights(Vec<f64>),
}

/// Per-unit weights equivalent to the resample: multiplicity counts for the
/// nonparametric scheme, 1 + xi for multipliers.
pub(crate) fn resample_weights(
    data: &PanelDataset,
    plan: &BootstrapPlan,
    rep: usize,
    retry: usize,
) -> Vec<f64> {
    let n = data.n_units();
    let mut rng = rng::stream(plan.seed, &[0xB007, rep as u64, retry as u64]);
    match plan.scheme {
        BootScheme::Nonparametric => {
            let mut counts = vec![0.0; n];
            for _ in 0..n {
                counts[rng.gen_range(0..n)] += 1.0;
            }
            counts
        }
        BootScheme::Multiplier(dist) => (0..n).map(|_| 1.0 + draw_xi(dist, &mut rng)).collect(),
    }
}

fn draw_xi<R: Rng>(dist: MultiplierDist, rng: &mut R) -> f64 {
    match dist {
        MultiplierDist::Rademacher => {
            if rng.gen::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        MultiplierDist::StdNormal => {
            let u = loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    break u;
                }
            };
            norm_quantile(u)
        }
        MultiplierDist::Mammen => {
            let sqrt5 = 5.0_f64.sqrt();
            let p_neg = (sqrt5 + 1.0) / (2.0 * sqrt5);
            if rng.gen::<f64>() < p_neg {
                -(sqrt5 - 1.0) / 2.0
            } else {
                (sqrt5 + 1.0) / 2.0
            }
        }
    }
}

/// The resample for replication `rep` of the plan, in its natural
/// representation. Deterministic in `(seed, rep)` regardless of threading.
pub fn resample(data: &PanelDataset, plan: &BootstrapPlan, rep: usize) -> Result<Resample> {
    let weights = resample_weights(data, plan, rep, 0);
    match plan.scheme {
        BootScheme::Multiplier(_) => Ok(Resample::Weights(weights)),
        BootScheme::Nonparametric => {
            let mut rows_by_unit: Vec<Vec<usize>> = vec![Vec::new(); data.n_units()];
            for (i, r) in data.rows().iter().enumerate() {
                rows_by_unit[r.unit as usize].push(i);
            }
            let mut observations = Vec::new();
            for (u, &count) in weights.iter().enumerate() {
                for dup in 0..count as usize {
                    let id = if dup == 0 {
                        data.unit_ids()[u].clone()
                    } else {
                        format!("{}~{dup}", data.unit_ids()[u])
                    };
                    for &ri in &rows_by_unit[u] {
                        let row = &data.rows()[ri];
                        observations.push(crate::data::Observation {
                            unit_id: id.clone(),
                            period: row.period,
                            group: row.group,
                            outcome: row.outcome,
                            covariates: row.covariates.as_ref().map(|x| x.to_vec()),
                        });
                    }
                }
            }
            let request = match data.design() {
                TreatmentDesign::TwoPeriod => crate::data::DesignRequest::TwoPeriod,
                TreatmentDesign::Nsmp => crate::data::DesignRequest::Nsmp,
                TreatmentDesign::Staggered => crate::data::DesignRequest::Staggered,
            };
            let ds = PanelDataset::from_observations(
                observations,
                data.covariate_names().to_vec(),
                request,
            )?;
            Ok(Resample::Dataset(ds))
        }
    }
}

// ---------------------------------------------------------------------------
// Estimator specification and the per-replication estimator
// ---------------------------------------------------------------------------

/// Weighting scheme requested for multi-period designs.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightSpec {
    /// Equal weight on every valid (group, pre, post) triple.
    EqualAll,
    /// Equal weights over the valid pairs of one treated group.
    EqualGroup(Group),
    /// Event-study weights at the given horizon, re-estimated inside each
    /// bootstrap replication.
    EventStudy(u32),
    /// A fixed user scheme.
    Explicit(WeightScheme),
}

/// What to estimate.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorSpec {
    TwoPeriod,
    Nsmp { weights: WeightSpec },
    Staggered { weights: WeightSpec },
    /// Two-period design with covariate-conditional identification via
    /// per-grid-point binary-response distribution regression.
    TwoPeriodCovariates { dr: DrSpec },
}

pub(crate) struct EstimatorCtx<'a> {
    data: &'a PanelDataset,
    regime: &'a LinkRegime,
    grid: &'a Arc<Grid>,
    opts: CfOptions,
    control: Group,
    fixed_scheme: Option<WeightScheme>,
    event_horizon: Option<u32>,
    dr: Option<&'a DrSpec>,
}

pub(crate) struct RepEstimate {
    pub treated: Vec<f64>,
    pub cf: Vec<f64>,
    pub diags: CfDiagnostics,
}

impl<'a> EstimatorCtx<'a> {
    pub(crate) fn new(
        data: &'a PanelDataset,
        spec: &'a EstimatorSpec,
        regime: &'a LinkRegime,
        grid: &'a Arc<Grid>,
        opts: CfOptions,
    ) -> Result<Self> {
        let design = data.detect_design();
        let (control, fixed_scheme, event_horizon, dr) = match spec {
            EstimatorSpec::TwoPeriod => {
                require_design(&design, &[TreatmentDesign::TwoPeriod], "two-period")?;
                let scheme = equal_group_weights(&design, Group::TREATED)?;
                (Group::CONTROL, Some(scheme), None, None)
            }
            EstimatorSpec::Nsmp { weights } => {
                require_design(
                    &design,
                    &[TreatmentDesign::Nsmp, TreatmentDesign::TwoPeriod],
                    "non-staggered multi-period",
                )?;
                let (s, e) = resolve_weights(&design, weights)?;
                (Group::CONTROL, s, e, None)
            }
            EstimatorSpec::Staggered { weights } => {
                require_design(&design, &[TreatmentDesign::Staggered], "staggered")?;
                let (s, e) = resolve_weights(&design, weights)?;
                (Group::Never, s, e, None)
            }
            EstimatorSpec::TwoPeriodCovariates { dr } => {
                require_design(&design, &[TreatmentDesign::TwoPeriod], "two-period")?;
                if data.covariate_names().is_empty() {
                    return Err(Error::Config(
                        "covariate estimator requires covariate columns".into(),
                    ));
                }
                (Group::CONTROL, None, None, Some(dr))
            }
        };
        let _ = design;
        Ok(EstimatorCtx {
            data,
            regime,
            grid,
            opts,
            control,
            fixed_scheme,
            event_horizon,
            dr,
        })
    }

    /// The weighting scheme in effect for reporting (point-estimate version).
    pub(crate) fn point_scheme(&self) -> Result<Option<WeightScheme>> {
        if self.dr.is_some() {
            return Ok(None);
        }
        match (&self.fixed_scheme, self.event_horizon) {
            (Some(s), _) => Ok(Some(s.clone())),
            (None, Some(e)) => Ok(Some(event_study_weights(self.data, e)?)),
            (None, None) => Ok(None),
        }
    }

    /// One estimator pass: `weights` is `None` for the point estimate and a
    /// per-unit weight vector inside bootstrap replications.
    pub(crate) fn estimate_rep(&self, weights: Option<&[f64]>) -> Result<RepEstimate> {
        if let Some(dr) = self.dr {
            return crate::drcov::estimate_rep_x(self.data, dr, self.grid, self.opts, weights);
        }
        let scheme_owned;
        let scheme = match (&self.fixed_scheme, self.event_horizon) {
            (Some(s), _) => s,
            (None, Some(e)) => {
                scheme_owned = match weights {
                    None => event_study_weights(self.data, e)?,
                    Some(w) => event_study_weights_weighted(self.data, e, w)?,
                };
                &scheme_owned
            }
            (None, None) => unreachable!("non-covariate estimator always has a scheme"),
        };
        self.estimate_rep_scheme(scheme, weights)
    }

    fn estimate_rep_scheme(
        &self,
        scheme: &WeightScheme,
        weights: Option<&[f64]>,
    ) -> Result<RepEstimate> {
        let gp = self.grid.points();
        let l = gp.len();

        let mut needed: BTreeSet<(Group, i32)> = BTreeSet::new();
        for (g, pre, post, _) in scheme.iter() {
            needed.insert((g, post));
            needed.insert((g, pre));
            needed.insert((self.control, post));
            needed.insert((self.control, pre));
        }
        let mut cells: BTreeMap<(Group, i32), (Vec<f64>, f64)> = BTreeMap::new();
        for &(g, t) in &needed {
            cells.insert((g, t), self.cell_values(g, t, weights)?);
        }

        let mut treated_acc = vec![0.0; l];
        let mut cf_acc = vec![0.0; l];
        let mut diags = CfDiagnostics::default();
        let mut cf_buf: Vec<f64> = Vec::with_capacity(l);
        for (g, pre, post, w) in scheme.iter() {
            let (f_g_post, _) = &cells[&(g, post)];
            let (f_g_pre, _) = &cells[&(g, pre)];
            let (f_c_post, _) = &cells[&(self.control, post)];
            let (f_c_pre, _) = &cells[&(self.control, pre)];
            // the auto clip bound is pinned from the observed cell sizes so
            // that bootstrap replications share the point estimator exactly
            let eps = clip_eps(self.opts.clip, self.observed_min_cell(g, pre, post))?;
            let links = CfLinks::multi_period(self.regime, g, self.control, pre, post)?;
            let mut d = CfDiagnostics {
                clip_eps: eps,
                ..CfDiagnostics::default()
            };
            cf_buf.clear();
            cf_values_into(f_g_pre, f_c_post, f_c_pre, links, eps, gp, &mut cf_buf, &mut d)?;
            diags.clip_events += d.clip_events;
            diags.out_of_range += d.out_of_range;
            diags.clip_eps = diags.clip_eps.max(eps);
            for i in 0..l {
                treated_acc[i] += w * f_g_post[i];
                cf_acc[i] += w * cf_buf[i];
            }
        }
        diags.monotone = cf_acc.windows(2).all(|w| w[0] <= w[1]);
        if self.opts.monotonize {
            let mut running = f64::NEG_INFINITY;
            for v in &mut cf_acc {
                running = running.max(*v);
                *v = running;
            }
        }
        Ok(RepEstimate {
            treated: treated_acc,
            cf: cf_acc,
            diags,
        })
    }

    fn observed_min_cell(&self, g: Group, pre: i32, post: i32) -> Option<f64> {
        [
            (g, pre),
            (self.control, post),
            (self.control, pre),
        ]
        .iter()
        .map(|&(gg, t)| self.data.cell_rows(gg, t).map_or(0, <[u32]>::len) as f64)
        .reduce(f64::min)
    }

    fn cell_values(
        &self,
        group: Group,
        period: i32,
        weights: Option<&[f64]>,
    ) -> Result<(Vec<f64>, f64)> {
        let rows = self
            .data
            .cell_rows(group, period)
            .filter(|r| !r.is_empty())
            .ok_or(Error::EmptyCell { group, period })?;
        let mut values = vec![0.0; self.grid.len()];
        let total =
            cell_ecdf_unit_weights(self.data, rows, weights, self.grid.points(), &mut values)
                .ok_or(Error::EmptyCell { group, period })?;
        Ok((values, total))
    }
}

fn require_design(
    design: &DesignInfo,
    allowed: &[TreatmentDesign],
    what: &str,
) -> Result<()> {
    if allowed.contains(&design.design) {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{what} estimator does not apply to a {:?} dataset",
            design.design
        )))
    }
}

fn resolve_weights(
    design: &DesignInfo,
    spec: &WeightSpec,
) -> Result<(Option<WeightScheme>, Option<u32>)> {
    match spec {
        WeightSpec::EqualAll => Ok((Some(equal_weights_all(design)?), None)),
        WeightSpec::EqualGroup(g) => Ok((Some(equal_group_weights(design, *g)?), None)),
        WeightSpec::EventStudy(e) => Ok((None, Some(*e))),
        WeightSpec::Explicit(s) => {
            s.validate_against(design)?;
            Ok((Some(s.clone()), None))
        }
    }
}

// ---------------------------------------------------------------------------
// Uniform sup-t bands
// ---------------------------------------------------------------------------

/// Uniform confidence band around a function-valued estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBand {
    pub axis: Axis,
    pub center: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub level: f64,
    pub critical_value: f64,
    /// Per-point robust scale (bootstrap IQR / normal IQR, floored).
    pub scale: Vec<f64>,
    /// Whether the envelopes were truncated to [0, 1] (DF bands only).
    pub truncated: bool,
}

impl UniformBand {
    /// Band from explicit envelopes (deserialization and tests); the sup-t
    /// geometry fields are zeroed.
    pub fn from_envelopes(
        axis: Axis,
        center: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    ) -> Result<Self> {
        let n = axis.len();
        if center.len() != n || lo.len() != n || hi.len() != n {
            return Err(Error::GridMismatch);
        }
        if let Some(i) = (0..n).find(|&i| lo[i] > center[i] || center[i] > hi[i]) {
            return Err(Error::MalformedInterval(lo[i], hi[i]));
        }
        Ok(UniformBand {
            axis,
            center,
            lo,
            hi,
            level: 0.0,
            critical_value: 0.0,
            scale: vec![0.0; n],
            truncated: false,
        })
    }

    fn from_scale(
        axis: Axis,
        center: Vec<f64>,
        scale: Vec<f64>,
        critical_value: f64,
        level: f64,
    ) -> Self {
        let lo = center
            .iter()
            .zip(&scale)
            .map(|(c, s)| c - critical_value * s)
            .collect();
        let hi = center
            .iter()
            .zip(&scale)
            .map(|(c, s)| c + critical_value * s)
            .collect();
        UniformBand {
            axis,
            center,
            lo,
            hi,
            level,
            critical_value,
            scale,
            truncated: false,
        }
    }

    /// Clamp the envelopes to [0, 1]; recorded in `truncated`.
    pub fn truncate_unit_interval(&mut self) {
        for v in self.lo.iter_mut().chain(self.hi.iter_mut()) {
            *v = v.clamp(0.0, 1.0);
        }
        self.truncated = true;
    }

    /// True when the band excludes `value` at one or more points.
    pub fn excludes(&self, value: f64) -> bool {
        self.lo
            .iter()
            .zip(&self.hi)
            .any(|(l, h)| value < *l || value > *h)
    }
}

/// A center curve with its bootstrap replicates (`replicates[b]` is curve b).
#[derive(Debug, Clone)]
pub struct CurveSample {
    pub axis: Axis,
    pub center: Vec<f64>,
    pub replicates: Vec<Vec<f64>>,
}

const NORMAL_IQR: f64 = 1.3489795003921634;
const SCALE_FLOOR: f64 = 1e-10;
const RETRY_CAP: usize = 20;

fn quantile_ceil(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    debug_assert!(n > 0);
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// In-place interquartile range (order statistics at the ceil positions).
fn iqr_scratch(scratch: &mut [f64]) -> f64 {
    let n = scratch.len();
    if n < 2 {
        return 0.0;
    }
    let k25 = ((0.25 * n as f64).ceil() as usize).clamp(1, n) - 1;
    let k75 = ((0.75 * n as f64).ceil() as usize).clamp(1, n) - 1;
    scratch.select_nth_unstable_by(k75, f64::total_cmp);
    let q75 = scratch[k75];
    let left = &mut scratch[..k75.max(1)];
    let k25 = k25.min(left.len() - 1);
    left.select_nth_unstable_by(k25, f64::total_cmp);
    q75 - left[k25]
}

/// Shared band computation: per-point scales and the sup-t critical value at
/// the given level, taken jointly over all supplied curves.
fn band_core(curves: &[(&[f64], &[Vec<f64>])], level: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = curves
        .first()
        .map(|(_, reps)| reps.len())
        .ok_or_else(|| Error::Config("no curves supplied".into()))?;
    if b == 0 {
        return Err(Error::Config("no bootstrap replicates supplied".into()));
    }
    let mut scales = Vec::with_capacity(curves.len());
    let mut scratch = vec![0.0; b];
    let mut all_iqr_zero = true;
    for (center, reps) in curves {
        if reps.len() != b || reps.iter().any(|r| r.len() != center.len()) {
            return Err(Error::GridMismatch);
        }
        let mut s = vec![0.0; center.len()];
        for (j, sj) in s.iter_mut().enumerate() {
            for (bi, r) in reps.iter().enumerate() {
                scratch[bi] = r[j];
            }
            let iqr = iqr_scratch(&mut scratch);
            if iqr > 0.0 {
                all_iqr_zero = false;
            }
            *sj = (iqr / NORMAL_IQR).max(SCALE_FLOOR);
        }
        scales.push(s);
    }
    let mut any_dev = false;
    let mut tstats = vec![0.0f64; b];
    for (ci, (center, reps)) in curves.iter().enumerate() {
        let s = &scales[ci];
        for (bi, r) in reps.iter().enumerate() {
            let mut m = tstats[bi];
            for j in 0..center.len() {
                let dev = (r[j] - center[j]).abs();
                if dev > 0.0 {
                    any_dev = true;
                }
                let t = dev / s[j];
                if t > m {
                    m = t;
                }
            }
            tstats[bi] = m;
        }
    }
    // With B >= 2 a bootstrap distribution that is flat at every point yet
    // displaced from the estimate carries no usable scale information.
    if b >= 2 && all_iqr_zero && any_dev {
        return Err(Error::DegenerateBootstrap);
    }
    tstats.sort_by(f64::total_cmp);
    Ok((quantile_ceil(&tstats, level), scales))
}

/// Uniform sup-t band for one curve at coverage `level`.
pub fn uniform_band(sample: &CurveSample, level: f64) -> Result<UniformBand> {
    let mut bands = uniform_band_joint(std::slice::from_ref(sample), level)?;
    Ok(bands.pop().expect("one band per curve"))
}

/// Joint uniform bands across several curves: the sup runs over the
/// concatenated grids so the bands cover all curves simultaneously at `level`.
pub fn uniform_band_joint(samples: &[CurveSample], level: f64) -> Result<Vec<UniformBand>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "coverage level {level} must lie in (0, 1)"
        )));
    }
    let curves: Vec<(&[f64], &[Vec<f64>])> = samples
        .iter()
        .map(|s| (s.center.as_slice(), s.replicates.as_slice()))
        .collect();
    let (crit, scales) = band_core(&curves, level)?;
    Ok(samples
        .iter()
        .zip(scales)
        .map(|(s, scale)| {
            UniformBand::from_scale(s.axis.clone(), s.center.clone(), scale, crit, level)
        })
        .collect())
}

/// Sup-t test of a function-valued null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SupTTest {
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
    pub level: f64,
}

/// Sup-t test of the zero function at significance `alpha`: rejects when
/// `sup |estimate| / scale` exceeds the bootstrap critical value at coverage
/// `1 - alpha`. Equivalent to the `1 - alpha` uniform band excluding zero
/// somewhere.
pub fn sup_t_test(center: &[f64], replicates: &[Vec<f64>], alpha: f64) -> Result<SupTTest> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!(
            "significance level {alpha} must lie in (0, 1)"
        )));
    }
    let (crit, scales) = band_core(&[(center, replicates)], 1.0 - alpha)?;
    let statistic = center
        .iter()
        .zip(&scales[0])
        .map(|(c, s)| c.abs() / s)
        .fold(0.0, f64::max);
    Ok(SupTTest {
        statistic,
        critical: crit,
        reject: statistic > crit,
        level: alpha,
    })
}

// ---------------------------------------------------------------------------
// The full pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOptions {
    pub cf: CfOptions,
    pub taus: Vec<f64>,
    pub adtt_rule: AdttRule,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            cf: CfOptions::default(),
            taus: crate::effects::default_taus(),
            adtt_rule: AdttRule::GridMean,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PipelineDiagnostics {
    /// Replications that needed at least one redraw.
    pub degenerate_reps: usize,
    pub degenerate_fraction: f64,
    /// Boundary clip epsilon of the point estimate (largest across triples).
    pub clip_eps: f64,
    pub clip_events_point: usize,
    pub clip_events_bootstrap: usize,
    /// Identity-link counterfactual values outside [0,1] (point estimate).
    pub cf_out_of_range: usize,
    /// Point-estimate counterfactual nondecreasing?
    pub cf_monotone: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub treated: StepDf,
    pub counterfactual: StepDf,
    pub treated_band: UniformBand,
    pub counterfactual_band: UniformBand,
    pub dtt: EffectCurve,
    pub adtt: f64,
    pub dtt_test: SupTTest,
    pub adtt_test: SupTTest,
    pub taus: Vec<f64>,
    pub treated_qf: Vec<Interval>,
    pub counterfactual_qf: Vec<Interval>,
    pub qtt: EffectCurve,
    pub qtt_intervals: Vec<Interval>,
    pub scheme: Option<WeightScheme>,
    pub diagnostics: PipelineDiagnostics,
}

/// Point estimates without inference.
#[derive(Debug, Clone)]
pub struct EstimateReport {
    pub treated: StepDf,
    pub counterfactual: StepDf,
    pub dtt: EffectCurve,
    pub adtt: f64,
    pub qtt: EffectCurve,
    pub scheme: Option<WeightScheme>,
    pub diagnostics: CfDiagnostics,
}

/// Run the estimator once on the observed data.
pub fn estimate(
    data: &PanelDataset,
    spec: &EstimatorSpec,
    regime: &LinkRegime,
    grid: &Arc<Grid>,
    opts: &PipelineOptions,
) -> Result<EstimateReport> {
    let ctx = EstimatorCtx::new(data, spec, regime, grid, opts.cf)?;
    let rep = ctx.estimate_rep(None)?;
    let treated = StepDf::new(
        grid.clone(),
        rep.treated,
        "F_treated",
        true,
    )?;
    let cf_monotone = rep.diags.monotone || opts.cf.monotonize;
    let counterfactual = StepDf::new(grid.clone(), rep.cf, "F_cf", cf_monotone)?;
    let dtt_curve = dtt(&treated, &counterfactual)?;
    let adtt = adtt_with(&dtt_curve, opts.adtt_rule);
    let qtt_curve = crate::effects::qtt(&treated, &counterfactual, &opts.taus)?;
    Ok(EstimateReport {
        treated,
        counterfactual,
        dtt: dtt_curve,
        adtt,
        qtt: qtt_curve,
        scheme: ctx.point_scheme()?,
        diagnostics: rep.diags,
    })
}

/// Full inference pipeline: re-runs the estimator inside every bootstrap
/// replication, builds joint DF bands for the treated and counterfactual DFs,
/// a DTT band, sup-t tests, and QF/QTT intervals by band inversion and
/// Minkowski differencing.
pub fn band_pipeline(
    data: &PanelDataset,
    spec: &EstimatorSpec,
    regime: &LinkRegime,
    grid: &Arc<Grid>,
    plan: &BootstrapPlan,
    opts: &PipelineOptions,
) -> Result<PipelineResult> {
    let ctx = EstimatorCtx::new(data, spec, regime, grid, opts.cf)?;
    let point = ctx.estimate_rep(None)?;
    let b = plan.replications;

    struct RepOut {
        treated: Vec<f64>,
        cf: Vec<f64>,
        dtt: Vec<f64>,
        adtt: f64,
        clip_events: usize,
        degenerate: bool,
    }

    let axis = Axis::Outcome(grid.clone());
    let reps: Vec<RepOut> = (0..b)
        .into_par_iter()
        .map(|rep| -> Result<RepOut> {
            let mut degenerate = false;
            let mut attempt = 0usize;
            loop {
                let weights = resample_weights(data, plan, rep, attempt);
                match ctx.estimate_rep(Some(&weights)) {
                    Ok(est) => {
                        let dtt_vals: Vec<f64> = est
                            .treated
                            .iter()
                            .zip(&est.cf)
                            .map(|(t, c)| t - c)
                            .collect();
                        let adtt = adtt_of(&dtt_vals, grid.points(), opts.adtt_rule);
                        return Ok(RepOut {
                            treated: est.treated,
                            cf: est.cf,
                            dtt: dtt_vals,
                            adtt,
                            clip_events: est.diags.clip_events,
                            degenerate,
                        });
                    }
                    Err(Error::EmptyCell { group, period }) => {
                        degenerate = true;
                        attempt += 1;
                        if attempt > RETRY_CAP {
                            return Err(Error::DegenerateReplication {
                                rep,
                                group,
                                period,
                                retries: RETRY_CAP,
                            });
                        }
                    }
                    Err(Error::NoValidTriples(_)) => {
                        degenerate = true;
                        attempt += 1;
                        if attempt > RETRY_CAP {
                            return Err(Error::DegenerateReplication {
                                rep,
                                group: Group::TREATED,
                                period: 0,
                                retries: RETRY_CAP,
                            });
                        }
                    }
                    Err(e) => return Err(e),
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let degenerate_reps = reps.iter().filter(|r| r.degenerate).count();
    let degenerate_fraction = degenerate_reps as f64 / b as f64;
    if degenerate_fraction > 0.10 {
        return Err(Error::TooManyDegenerate {
            percent: 100.0 * degenerate_fraction,
        });
    }

    let treated_reps: Vec<Vec<f64>> = reps.iter().map(|r| r.treated.clone()).collect();
    let cf_reps: Vec<Vec<f64>> = reps.iter().map(|r| r.cf.clone()).collect();
    let dtt_reps: Vec<Vec<f64>> = reps.iter().map(|r| r.dtt.clone()).collect();
    let adtt_reps: Vec<Vec<f64>> = reps.iter().map(|r| vec![r.adtt]).collect();
    let clip_events_bootstrap: usize = reps.iter().map(|r| r.clip_events).sum();
    drop(reps);

    // Joint DF bands for the treated and counterfactual DFs.
    let (df_crit, df_scales) = band_core(
        &[
            (point.treated.as_slice(), treated_reps.as_slice()),
            (point.cf.as_slice(), cf_reps.as_slice()),
        ],
        plan.level,
    )?;
    let mut treated_band = UniformBand::from_scale(
        axis.clone(),
        point.treated.clone(),
        df_scales[0].clone(),
        df_crit,
        plan.level,
    );
    let mut counterfactual_band = UniformBand::from_scale(
        axis.clone(),
        point.cf.clone(),
        df_scales[1].clone(),
        df_crit,
        plan.level,
    );
    treated_band.truncate_unit_interval();
    counterfactual_band.truncate_unit_interval();

    // DTT band and the sup-t tests from the same replications.
    let dtt_point: Vec<f64> = point
        .treated
        .iter()
        .zip(&point.cf)
        .map(|(t, c)| t - c)
        .collect();
    let (dtt_crit, dtt_scales) = band_core(&[(dtt_point.as_slice(), &dtt_reps)], plan.level)?;
    let dtt_band = UniformBand::from_scale(
        axis.clone(),
        dtt_point.clone(),
        dtt_scales.into_iter().next().unwrap(),
        dtt_crit,
        plan.level,
    );
    let alpha = 1.0 - plan.level;
    let dtt_stat = dtt_point
        .iter()
        .zip(&dtt_band.scale)
        .map(|(c, s)| c.abs() / s)
        .fold(0.0, f64::max);
    let dtt_test = SupTTest {
        statistic: dtt_stat,
        critical: dtt_crit,
        reject: dtt_stat > dtt_crit,
        level: alpha,
    };
    let adtt_point = adtt_of(&dtt_point, grid.points(), opts.adtt_rule);
    let (adtt_crit, adtt_scales) =
        band_core(&[(std::slice::from_ref(&adtt_point), &adtt_reps)], plan.level)?;
    let adtt_stat = adtt_point.abs() / adtt_scales[0][0];
    let adtt_test = SupTTest {
        statistic: adtt_stat,
        critical: adtt_crit,
        reject: adtt_stat > adtt_crit,
        level: alpha,
    };

    // Quantile intervals by band inversion and Minkowski differencing.
    let treated_qf = invert_df_band(&treated_band, &opts.taus)?;
    let counterfactual_qf = invert_df_band(&counterfactual_band, &opts.taus)?;
    let qtt_intervals = qtt_band(&treated_qf, &counterfactual_qf)?;

    let treated_df = StepDf::new(grid.clone(), point.treated, "F_treated", true)?;
    let cf_monotone = point.diags.monotone || opts.cf.monotonize;
    let counterfactual_df = StepDf::new(grid.clone(), point.cf, "F_cf", cf_monotone)?;
    let mut dtt_curve = EffectCurve::new(axis, dtt_point)?;
    dtt_curve.band = Some(dtt_band);
    let qtt_curve = crate::effects::qtt(&treated_df, &counterfactual_df, &opts.taus)?;

    Ok(PipelineResult {
        treated: treated_df,
        counterfactual: counterfactual_df,
        treated_band,
        counterfactual_band,
        adtt: adtt_point,
        dtt: dtt_curve,
        dtt_test,
        adtt_test,
        taus: opts.taus.clone(),
        treated_qf,
        counterfactual_qf,
        qtt: qtt_curve,
        qtt_intervals,
        scheme: ctx.point_scheme()?,
        diagnostics: PipelineDiagnostics {
            degenerate_reps,
            degenerate_fraction,
            clip_eps: point.diags.clip_eps,
            clip_events_point: point.diags.clip_events,
            clip_events_bootstrap,
            cf_out_of_range: point.diags.out_of_range,
            cf_monotone: point.diags.monotone,
        },
    })
}

fn adtt_of(dtt_values: &[f64], grid_points: &[f64], rule: AdttRule) -> f64 {
    match rule {
        AdttRule::GridMean => dtt_values.iter().sum::<f64>() / dtt_values.len() as f64,
        AdttRule::Trapezoid => {
            if dtt_values.len() == 1 {
                return dtt_values[0];
            }
            let mut area = 0.0;
            for i in 1..dtt_values.len() {
                area += 0.5 * (dtt_values[i] + dtt_values[i - 1])
                    * (grid_points[i] - grid_points[i - 1]);
            }
            area / (grid_points[dtt_values.len() - 1] - grid_points[0])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DesignRequest, Observation};
    use crate::identify::Theta;
    use crate::links::Link;
    use rand::SeedableRng;

    fn rcs_two_period(
        treated_pre: &[f64],
        treated_post: &[f64],
        control_pre: &[f64],
        control_post: &[f64],
    ) -> PanelDataset {
        let mut observations = Vec::new();
        let mut unit = 0usize;
        let mut push = |g: Group, t: i32, ys: &[f64], observations: &mut Vec<Observation>| {
            for &y in ys {
                observations.push(Observation {
                    unit_id: format!("u{unit}"),
                    period: t,
                    group: g,
                    outcome: y,
                    covariates: None,
                });
                unit += 1;
            }
        };
        push(Group::TREATED, 0, treated_pre, &mut observations);
        push(Group::TREATED, 1, treated_post, &mut observations);
        push(Group::CONTROL, 0, control_pre, &mut observations);
        push(Group::CONTROL, 1, control_post, &mut observations);
        PanelDataset::from_observations(observations, vec![], DesignRequest::TwoPeriod).unwrap()
    }

    fn normal_regime() -> LinkRegime {
        LinkRegime::uniform(Theta::GroupIndexed, Link::Normal)
    }

    #[test]
    fn resample_is_deterministic_in_seed_and_rep() {
        let data = rcs_two_period(
            &[1.0, 2.0, 3.0],
            &[2.0, 3.0, 4.0],
            &[0.0, 1.0, 2.0],
            &[1.0, 2.0, 3.0],
        );
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 10, 42, 0.9).unwrap();
        let w1 = resample_weights(&data, &plan, 3, 0);
        let w2 = resample_weights(&data, &plan, 3, 0);
        assert_eq!(w1, w2);
        let w3 = resample_weights(&data, &plan, 4, 0);
        assert_ne!(w1, w3);
        // counts distribute the full sample
        assert_eq!(w1.iter().sum::<f64>(), data.n_units() as f64);
    }

    #[test]
    fn single_unit_resample_is_the_dataset_itself() {
        let observations = vec![
            Observation {
                unit_id: "a".into(),
                period: 0,
                group: Group::TREATED,
                outcome: 1.0,
                covariates: None,
            },
            Observation {
                unit_id: "a".into(),
                period: 1,
                group: Group::TREATED,
                outcome: 2.0,
                covariates: None,
            },
        ];
        let data =
            PanelDataset::from_observations(observations, vec![], DesignRequest::TwoPeriod)
                .unwrap();
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 1, 7, 0.9).unwrap();
        match resample(&data, &plan, 0).unwrap() {
            Resample::Dataset(ds) => {
                assert_eq!(ds.n_units(), 1);
                assert_eq!(ds.n_total(), 2);
                let ys: Vec<f64> = ds.outcomes().collect();
                assert_eq!(ys, vec![1.0, 2.0]);
            }
            Resample::Weights(_) => panic!("nonparametric resample must materialize"),
        }
    }

    #[test]
    fn multiplier_moments() {
        let data = rcs_two_period(&[1.0; 50], &[1.0; 50], &[0.0; 50], &[0.0; 50]);
        for dist in [
            MultiplierDist::Rademacher,
            MultiplierDist::StdNormal,
            MultiplierDist::Mammen,
        ] {
            let plan =
                BootstrapPlan::new(BootScheme::Multiplier(dist), 400, 11, 0.9).unwrap();
            let mut sum = 0.0;
            let mut sumsq = 0.0;
            let mut count = 0.0;
            for rep in 0..plan.replications {
                let w = resample_weights(&data, &plan, rep, 0);
                for v in w {
                    let xi = v - 1.0;
                    if dist == MultiplierDist::Rademacher {
                        assert!(xi == 1.0 || xi == -1.0);
                    }
                    sum += xi;
                    sumsq += xi * xi;
                    count += 1.0;
                }
            }
            let mean = sum / count;
            let var = sumsq / count - mean * mean;
            assert!(mean.abs() < 0.02, "{dist:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.05, "{dist:?} var {var}");
        }
    }

    #[test]
    fn materialized_resample_matches_multiplicity_weights() {
        let data = rcs_two_period(
            &[1.0, 2.0, 5.0, 3.0],
            &[2.0, 3.0, 4.0, 6.0],
            &[0.0, 1.0, 2.0, 2.5],
            &[1.0, 2.0, 3.0, 0.5],
        );
        let grid = Arc::new(Grid::new(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 6.0).unwrap());
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 5, 99, 0.9).unwrap();
        for rep in 0..5 {
            let weights = resample_weights(&data, &plan, rep, 0);
            let Resample::Dataset(ds) = resample(&data, &plan, rep).unwrap() else {
                panic!()
            };
            for (g, t) in [
                (Group::TREATED, 0),
                (Group::TREATED, 1),
                (Group::CONTROL, 0),
                (Group::CONTROL, 1),
            ] {
                let direct = crate::ecdf::group_period_ecdf(&ds, g, t, &grid);
                let mut weighted = vec![0.0; grid.len()];
                let rows = data.cell_rows(g, t).unwrap();
                let total = cell_ecdf_unit_weights(
                    &data,
                    rows,
                    Some(&weights),
                    grid.points(),
                    &mut weighted,
                );
                match (direct, total) {
                    (Ok(df), Some(_)) => {
                        for (a, b) in df.values().iter().zip(&weighted) {
                            assert!((a - b).abs() < 1e-12);
                        }
                    }
                    (Err(_), None) => {}
                    (d, t) => panic!("representations disagree: {d:?} vs {t:?}"),
                }
            }
        }
    }

    #[test]
    fn band_collapses_when_replicates_equal_center() {
        let axis = Axis::Probability(vec![0.5]);
        let sample = CurveSample {
            axis,
            center: vec![0.3],
            replicates: vec![vec![0.3]; 40],
        };
        let band = uniform_band(&sample, 0.9).unwrap();
        assert_eq!(band.critical_value, 0.0);
        assert_eq!(band.lo, band.center);
        assert_eq!(band.hi, band.center);
    }

    #[test]
    fn identical_replicates_away_from_center_are_degenerate() {
        let axis = Axis::Probability(vec![0.5]);
        let sample = CurveSample {
            axis,
            center: vec![0.3],
            replicates: vec![vec![0.4]; 40],
        };
        assert!(matches!(
            uniform_band(&sample, 0.9),
            Err(Error::DegenerateBootstrap)
        ));
    }

    #[test]
    fn gaussian_single_point_band_matches_quantile_oracle() {
        // center + sigma * Z replicates at one grid point: the band
        // half-width is sigma_hat * q_{level}(|Z|); with 10^5 draws it must
        // sit near sigma * 1.6449 for level 0.90
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1234);
        let b = 100_000;
        let sigma = 0.7;
        let replicates: Vec<Vec<f64>> = (0..b)
            .map(|_| {
                let u = loop {
                    let u: f64 = rand::Rng::gen(&mut rng);
                    if u > 0.0 {
                        break u;
                    }
                };
                vec![1.0 + sigma * norm_quantile(u)]
            })
            .collect();
        let sample = CurveSample {
            axis: Axis::Probability(vec![0.5]),
            center: vec![1.0],
            replicates,
        };
        let band = uniform_band(&sample, 0.9).unwrap();
        let half = band.hi[0] - band.center[0];
        assert!(
            (half - sigma * 1.6449).abs() < 0.02,
            "half width {half}, expected ~{}",
            sigma * 1.6449
        );
    }

    #[test]
    fn joint_band_no_narrower_than_marginal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5678);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng| -> CurveSample {
            let center = vec![0.2, 0.4, 0.6];
            let replicates = (0..200)
                .map(|_| {
                    center
                        .iter()
                        .map(|c| c + 0.05 * (rand::Rng::gen::<f64>(rng) - 0.5))
                        .collect()
                })
                .collect();
            CurveSample {
                axis: Axis::Probability(vec![0.1, 0.2, 0.3]),
                center,
                replicates,
            }
        };
        let a = mk(&mut rng);
        let c = mk(&mut rng);
        let marginal = uniform_band(&a, 0.9).unwrap();
        let joint = uniform_band_joint(&[a, c], 0.9).unwrap();
        for j in 0..3 {
            assert!(joint[0].hi[j] >= marginal.hi[j] - 1e-12);
            assert!(joint[0].lo[j] <= marginal.lo[j] + 1e-12);
            // joint band still contains its own center
            assert!(joint[1].lo[j] <= joint[1].center[j]);
            assert!(joint[1].hi[j] >= joint[1].center[j]);
        }
    }

    #[test]
    fn band_symmetry_and_level_monotonicity() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let center = vec![0.1, 0.3];
        let replicates: Vec<Vec<f64>> = (0..300)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + 0.1 * (rand::Rng::gen::<f64>(&mut rng) - 0.5))
                    .collect()
            })
            .collect();
        let sample = CurveSample {
            axis: Axis::Probability(vec![0.4, 0.6]),
            center,
            replicates,
        };
        let b90 = uniform_band(&sample, 0.90).unwrap();
        let b95 = uniform_band(&sample, 0.95).unwrap();
        for j in 0..2 {
            let up = b90.hi[j] - b90.center[j];
            let down = b90.center[j] - b90.lo[j];
            assert!((up - down).abs() < 1e-12);
            assert!(
                (up - b90.critical_value * b90.scale[j]).abs() < 1e-12,
                "half-width is crit * scale"
            );
            assert!(b95.hi[j] >= b90.hi[j]);
            assert!(b95.lo[j] <= b90.lo[j]);
        }
    }

    #[test]
    fn sup_t_zero_curve_never_rejects() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let replicates: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![0.02 * (rand::Rng::gen::<f64>(&mut rng) - 0.5)])
            .collect();
        let t = sup_t_test(&[0.0], &replicates, 0.10).unwrap();
        assert!(!t.reject);
        assert_eq!(t.statistic, 0.0);
    }

    #[test]
    fn sup_t_boundary_and_equivalence_with_band() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let center = vec![0.05, -0.01];
        let replicates: Vec<Vec<f64>> = (0..400)
            .map(|_| {
                center
                    .iter()
                    .map(|c| c + 0.03 * (rand::Rng::gen::<f64>(&mut rng) - 0.5))
                    .collect()
            })
            .collect();
        let alpha = 0.10;
        let t = sup_t_test(&center, &replicates, alpha).unwrap();
        let band = uniform_band(
            &CurveSample {
                axis: Axis::Probability(vec![0.3, 0.6]),
                center: center.clone(),
                replicates: replicates.clone(),
            },
            1.0 - alpha,
        )
        .unwrap();
        // rejection iff the band excludes zero somewhere, exactly
        assert_eq!(t.reject, band.excludes(0.0));
        // a statistic exactly on the critical value sits on the band edge
        // and does not reject under the strict inequality
        let edge = SupTTest {
            statistic: t.critical,
            critical: t.critical,
            reject: t.critical > t.critical,
            level: alpha,
        };
        assert!(!edge.reject);
    }

    #[test]
    fn pipeline_null_effect_two_group() {
        // treated and control identical in both periods: DTT == 0, QTT
        // intervals all contain zero
        let ys_pre: Vec<f64> = (0..30).map(|i| (i % 5) as f64).collect();
        let ys_post: Vec<f64> = (0..30).map(|i| ((i + 2) % 5) as f64).collect();
        let data = rcs_two_period(&ys_pre, &ys_post, &ys_pre, &ys_post);
        // interior grid: at the maximum every ECDF is exactly 1 and the
        // boundary clip would shift the counterfactual by eps
        let grid = Arc::new(Grid::new(vec![0.0, 1.0, 2.0, 3.0], 4.0).unwrap());
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 100, 5, 0.9).unwrap();
        let out = band_pipeline(
            &data,
            &EstimatorSpec::TwoPeriod,
            &normal_regime(),
            &grid,
            &plan,
            &PipelineOptions::default(),
        )
        .unwrap();
        for v in &out.dtt.values {
            assert!(v.abs() < 1e-12);
        }
        assert!(!out.dtt_test.reject);
        for iv in &out.qtt_intervals {
            assert!(iv.contains(0.0));
        }
    }

    #[test]
    fn pipeline_collapses_on_constant_cells() {
        // every unit in a cell identical: every resample reproduces the same
        // ECDFs, so bands collapse to the point estimates
        let data = rcs_two_period(&[1.0; 8], &[2.0; 8], &[1.0; 8], &[1.5; 8]);
        let grid = Arc::new(Grid::new(vec![1.0, 1.5, 2.0], 2.0).unwrap());
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 50, 3, 0.9).unwrap();
        let out = band_pipeline(
            &data,
            &EstimatorSpec::TwoPeriod,
            &normal_regime(),
            &grid,
            &plan,
            &PipelineOptions::default(),
        )
        .unwrap();
        for j in 0..grid.len() {
            assert!((out.dtt.band.as_ref().unwrap().hi[j] - out.dtt.values[j]).abs() < 1e-9);
            assert!((out.treated_band.hi[j] - out.treated.values()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn pipeline_deterministic_across_thread_counts() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| (rand::Rng::gen_range(rng, 0..6)) as f64).collect()
        };
        let data = rcs_two_period(
            &draw(&mut rng, 40),
            &draw(&mut rng, 40),
            &draw(&mut rng, 40),
            &draw(&mut rng, 40),
        );
        let grid = Arc::new(crate::ecdf::build_grid(&data, &crate::ecdf::GridRule::AllUnique).unwrap());
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 60, 17, 0.9).unwrap();
        let run = |threads: usize| -> PipelineResult {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                band_pipeline(
                    &data,
                    &EstimatorSpec::TwoPeriod,
                    &normal_regime(),
                    &grid,
                    &plan,
                    &PipelineOptions::default(),
                )
                .unwrap()
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a.dtt.values, b.dtt.values);
        let ab = a.dtt.band.unwrap();
        let bb = b.dtt.band.unwrap();
        assert_eq!(ab.lo, bb.lo);
        assert_eq!(ab.hi, bb.hi);
        assert_eq!(a.treated_band.hi, b.treated_band.hi);
        assert_eq!(a.qtt_intervals.len(), b.qtt_intervals.len());
        for (x, y) in a.qtt_intervals.iter().zip(&b.qtt_intervals) {
            assert_eq!(x.lo, y.lo);
            assert_eq!(x.hi, y.hi);
        }
        assert_eq!(a.dtt_test, b.dtt_test);
    }

    #[test]
    fn pipeline_rejects_pathologically_degenerate_designs() {
        // one unit per cell: unit resampling empties a required cell in most
        // replications, so the pipeline must refuse
        let data = rcs_two_period(&[1.0], &[2.0], &[0.0], &[1.0]);
        let grid = Arc::new(Grid::new(vec![0.0, 1.0, 2.0], 2.0).unwrap());
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 40, 1, 0.9).unwrap();
        let err = band_pipeline(
            &data,
            &EstimatorSpec::TwoPeriod,
            &normal_regime(),
            &grid,
            &plan,
            &PipelineOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::TooManyDegenerate { .. } | Error::DegenerateReplication { .. }
        ));
    }

    #[test]
    fn multiplier_pipeline_runs_and_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(555);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| -> Vec<f64> {
            (0..n).map(|_| (rand::Rng::gen_range(rng, 0..4)) as f64).collect()
        };
        let data = rcs_two_period(
            &draw(&mut rng, 30),
            &draw(&mut rng, 30),
            &draw(&mut rng, 30),
            &draw(&mut rng, 30),
        );
        let grid = Arc::new(crate::ecdf::build_grid(&data, &crate::ecdf::GridRule::AllUnique).unwrap());
        let plan = BootstrapPlan::new(
            BootScheme::Multiplier(MultiplierDist::StdNormal),
            80,
            23,
            0.9,
        )
        .unwrap();
        let a = band_pipeline(
            &data,
            &EstimatorSpec::TwoPeriod,
            &normal_regime(),
            &grid,
            &plan,
            &PipelineOptions::default(),
        )
        .unwrap();
        let b = band_pipeline(
            &data,
            &EstimatorSpec::TwoPeriod,
            &normal_regime(),
            &grid,
            &plan,
            &PipelineOptions::default(),
        )
        .unwrap();
        assert_eq!(a.dtt.values, b.dtt.values);
        assert_eq!(a.dtt_test, b.dtt_test);
    }

    #[test]
    fn plan_validation_and_warnings() {
        assert!(BootstrapPlan::new(BootScheme::Nonparametric, 0, 1, 0.9).is_err());
        assert!(BootstrapPlan::new(BootScheme::Nonparametric, 10, 1, 1.0).is_err());
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 99, 1, 0.9).unwrap();
        assert_eq!(plan.warnings().len(), 1);
        let plan = BootstrapPlan::new(BootScheme::Nonparametric, 999, 1, 0.9).unwrap();
        assert!(plan.warnings().is_empty());
    }
}
