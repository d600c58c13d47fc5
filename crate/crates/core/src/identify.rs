//! Counterfactual distribution-function construction.
//!
//! The counterfactual DF of the treated group absent treatment is assembled
//! pointwise from three observed cell DFs pushed through working-CDF inverses:
//! an additive index in group and time identifies the missing cell. Links can
//! be indexed by group or by period; an interior mixture of the two regimes is
//! not identified and is not representable here.

use crate::data::{Group, PanelDataset, TreatmentDesign};
use crate::ecdf::{group_period_ecdf, Grid, StepDf};
use crate::error::{Error, Result};
use crate::links::Link;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Whether the working CDFs vary by group or by period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Theta {
    /// theta = 1: one link per group, constant over time.
    GroupIndexed,
    /// theta = 0: one link per period, constant across groups.
    TimeIndexed,
}

/// Working-CDF configuration: the theta regime plus per-group or per-period
/// link assignments (with an optional fallback link).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRegime {
    theta: Theta,
    group_links: BTreeMap<Group, Link>,
    time_links: BTreeMap<i32, Link>,
    default: Option<Link>,
}

impl LinkRegime {
    pub fn group_indexed(links: BTreeMap<Group, Link>) -> Self {
        LinkRegime {
            theta: Theta::GroupIndexed,
            group_links: links,
            time_links: BTreeMap::new(),
            default: None,
        }
    }

    pub fn time_indexed(links: BTreeMap<i32, Link>) -> Self {
        LinkRegime {
            theta: Theta::TimeIndexed,
            group_links: BTreeMap::new(),
            time_links: links,
            default: None,
        }
    }

    /// The same link everywhere under the given regime.
    pub fn uniform(theta: Theta, link: Link) -> Self {
        LinkRegime {
            theta,
            group_links: BTreeMap::new(),
            time_links: BTreeMap::new(),
            default: Some(link),
        }
    }

    pub fn with_default(mut self, link: Link) -> Self {
        self.default = Some(link);
        self
    }

    pub fn theta(&self) -> Theta {
        self.theta
    }

    pub fn link_for_group(&self, g: Group) -> Result<Link> {
        self.group_links
            .get(&g)
            .copied()
            .or(self.default)
            .ok_or_else(|| Error::MissingLink(format!("group {g}")))
    }

    pub fn link_for_period(&self, t: i32) -> Result<Link> {
        self.time_links
            .get(&t)
            .copied()
            .or(self.default)
            .ok_or_else(|| Error::MissingLink(format!("period {t}")))
    }
}

/// Clipping applied to DF values before an unbounded link inverse.
///
/// ECDF values of exactly 0 or 1 are routine with discrete outcomes and map
/// to infinite indices under the unbounded links; clipping to
/// `[eps, 1 - eps]` keeps the index finite while the bound shrinks with the
/// cell size. Bounded links (uniform, identity) are never clipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClipPolicy {
    /// eps = 1 / (4 * smallest cell size entering the counterfactual).
    Auto,
    /// A fixed eps in (0, 1/2).
    Fixed(f64),
    /// No clipping; extended-real arithmetic applies and an indeterminate
    /// inf - inf combination is an error.
    Disabled,
}

impl Default for ClipPolicy {
    fn default() -> Self {
        ClipPolicy::Auto
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfOptions {
    pub clip: ClipPolicy,
    /// Post-hoc nondecreasing rearrangement (running max) of the output.
    /// Off by default: non-monotone counterfactuals are diagnostic evidence
    /// against the identification assumptions and should stay visible.
    pub monotonize: bool,
}

impl Default for CfOptions {
    fn default() -> Self {
        CfOptions {
            clip: ClipPolicy::Auto,
            monotonize: false,
        }
    }
}

/// Per-construction diagnostics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct CfDiagnostics {
    /// Grid-point inputs clipped before a link inverse.
    pub clip_events: usize,
    /// eps actually used (0 when clipping never applied).
    pub clip_eps: f64,
    /// Output values outside [0,1] under an identity outer link.
    pub out_of_range: usize,
    /// Output nondecreasing (checked before any rearrangement).
    pub monotone: bool,
}

/// A counterfactual DF plus its construction diagnostics.
#[derive(Debug, Clone)]
pub struct Counterfactual {
    pub df: StepDf,
    pub diagnostics: CfDiagnostics,
}

/// Index-coefficient curves on the grid; entries may be +/-inf where the
/// input DFs reach 0 or 1 under an unbounded link.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexCoeffs {
    pub grid: Arc<Grid>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
}

/// Links resolved for the four roles of the counterfactual formula.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CfLinks {
    pub(crate) treated_pre: Link,
    pub(crate) control_post: Link,
    pub(crate) control_pre: Link,
    pub(crate) outer: Link,
}

impl CfLinks {
    pub(crate) fn two_period(regime: &LinkRegime) -> Result<Self> {
        match regime.theta() {
            Theta::GroupIndexed => {
                let t = regime.link_for_group(Group::TREATED)?;
                let c = regime.link_for_group(Group::CONTROL)?;
                Ok(CfLinks {
                    treated_pre: t,
                    control_post: c,
                    control_pre: c,
                    outer: t,
                })
            }
            Theta::TimeIndexed => {
                let pre = regime.link_for_period(0)?;
                let post = regime.link_for_period(1)?;
                Ok(CfLinks {
                    treated_pre: pre,
                    control_post: post,
                    control_pre: pre,
                    outer: post,
                })
            }
        }
    }

    pub(crate) fn multi_period(
        regime: &LinkRegime,
        treated: Group,
        control: Group,
        pre: i32,
        post: i32,
    ) -> Result<Self> {
        match regime.theta() {
            Theta::GroupIndexed => {
                let t = regime.link_for_group(treated)?;
                let c = regime.link_for_group(control)?;
                Ok(CfLinks {
                    treated_pre: t,
                    control_post: c,
                    control_pre: c,
                    outer: t,
                })
            }
            Theta::TimeIndexed => {
                let lp = regime.link_for_period(pre)?;
                let lt = regime.link_for_period(post)?;
                Ok(CfLinks {
                    treated_pre: lp,
                    control_post: lt,
                    control_pre: lp,
                    outer: lt,
                })
            }
        }
    }
}

pub(crate) fn clip_eps(policy: ClipPolicy, min_cell: Option<f64>) -> Result<f64> {
    match policy {
        ClipPolicy::Disabled => Ok(0.0),
        ClipPolicy::Fixed(eps) => {
            if !(eps > 0.0 && eps < 0.5) {
                return Err(Error::Config(format!(
                    "clip epsilon {eps} must lie in (0, 1/2)"
                )));
            }
            Ok(eps)
        }
        ClipPolicy::Auto => Ok(match min_cell {
            Some(n) if n > 0.0 => (1.0 / (4.0 * n)).min(0.25),
            _ => 0.0,
        }),
    }
}

/// Inverse-link of one DF value with boundary clipping for unbounded links.
fn inv(link: Link, p: f64, eps: f64, clip_events: &mut usize) -> Result<f64> {
    let q = if link.is_unbounded() && eps > 0.0 {
        let c = p.clamp(eps, 1.0 - eps);
        if c != p {
            *clip_events += 1;
        }
        c
    } else {
        p
    };
    link.quantile(q)
}

/// Index coefficient curves (alpha, beta, gamma) from the three identified
/// cell DFs of the two-period design. No clipping: entries are extended-real.
pub fn index_coeffs(
    f00: &StepDf,
    f10: &StepDf,
    f01: &StepDf,
    regime: &LinkRegime,
) -> Result<IndexCoeffs> {
    if !f00.same_grid(f10) || !f00.same_grid(f01) {
        return Err(Error::GridMismatch);
    }
    let links = CfLinks::two_period(regime)?;
    // Roles: alpha from the control pre cell, beta from treated pre, gamma
    // from control post; under theta = 0 the inverse links follow the period.
    let (l00, l10, l01) = (links.control_pre, links.treated_pre, links.control_post);
    let n = f00.values().len();
    let mut alpha = Vec::with_capacity(n);
    let mut beta = Vec::with_capacity(n);
    let mut gamma = Vec::with_capacity(n);
    for i in 0..n {
        let a = l00.quantile(f00.values()[i])?;
        let b = l10.quantile(f10.values()[i])? - a;
        let g = l01.quantile(f01.values()[i])? - a;
        alpha.push(a);
        beta.push(b);
        gamma.push(g);
    }
    Ok(IndexCoeffs {
        grid: f00.grid().clone(),
        alpha,
        beta,
        gamma,
    })
}

/// Slice-level counterfactual: pushes the three input DF values through the
/// role links at the given clip epsilon, appending into `out`. Shared by the
/// public constructors and the bootstrap hot path.
pub(crate) fn cf_values_into(
    f_treated_pre: &[f64],
    f_control_post: &[f64],
    f_control_pre: &[f64],
    links: CfLinks,
    eps: f64,
    grid_points: &[f64],
    out: &mut Vec<f64>,
    diagnostics: &mut CfDiagnostics,
) -> Result<()> {
    for i in 0..grid_points.len() {
        let a = inv(
            links.treated_pre,
            f_treated_pre[i],
            eps,
            &mut diagnostics.clip_events,
        )?;
        let b = inv(
            links.control_post,
            f_control_post[i],
            eps,
            &mut diagnostics.clip_events,
        )?;
        let c = inv(
            links.control_pre,
            f_control_pre[i],
            eps,
            &mut diagnostics.clip_events,
        )?;
        let index = a + b - c;
        if index.is_nan() {
            return Err(Error::IndeterminateIndex(grid_points[i]));
        }
        let v = links.outer.cdf(index)?;
        if links.outer == Link::Identity && !(0.0..=1.0).contains(&v) {
            diagnostics.out_of_range += 1;
        }
        out.push(v);
    }
    Ok(())
}

fn counterfactual_core(
    f_treated_pre: &StepDf,
    f_control_post: &StepDf,
    f_control_pre: &StepDf,
    links: CfLinks,
    opts: &CfOptions,
    label: String,
) -> Result<Counterfactual> {
    if !f_treated_pre.same_grid(f_control_post) || !f_treated_pre.same_grid(f_control_pre) {
        return Err(Error::GridMismatch);
    }
    let min_cell = [f_treated_pre, f_control_post, f_control_pre]
        .iter()
        .filter_map(|d| d.cell_n())
        .min()
        .map(|n| n as f64);
    let eps = clip_eps(opts.clip, min_cell)?;
    let grid = f_treated_pre.grid().clone();
    let mut diagnostics = CfDiagnostics {
        clip_eps: eps,
        ..CfDiagnostics::default()
    };
    let mut values = Vec::with_capacity(grid.len());
    cf_values_into(
        f_treated_pre.values(),
        f_control_post.values(),
        f_control_pre.values(),
        links,
        eps,
        grid.points(),
        &mut values,
        &mut diagnostics,
    )?;
    diagnostics.monotone = values.windows(2).all(|w| w[0] <= w[1]);
    if opts.monotonize {
        let mut running = f64::NEG_INFINITY;
        for v in &mut values {
            running = running.max(*v);
            *v = running;
        }
    }
    let monotone = diagnostics.monotone || opts.monotonize;
    let df = StepDf::new(grid, values, label, monotone)?;
    Ok(Counterfactual { df, diagnostics })
}

/// Two-period counterfactual DF from the three identified cell DFs.
pub fn counterfactual_two_period(
    f10: &StepDf,
    f01: &StepDf,
    f00: &StepDf,
    regime: &LinkRegime,
    opts: &CfOptions,
) -> Result<Counterfactual> {
    let links = CfLinks::two_period(regime)?;
    counterfactual_core(f10, f01, f00, links, opts, "F_cf".into())
}

/// Non-staggered multiple-period counterfactual for the pre period `pre`
/// (< 0) and post period `post` (>= 1).
pub fn counterfactual_nsmp(
    data: &PanelDataset,
    pre: i32,
    post: i32,
    regime: &LinkRegime,
    grid: &Arc<Grid>,
    opts: &CfOptions,
) -> Result<Counterfactual> {
    if data.design() == TreatmentDesign::TwoPeriod {
        if !(pre == 0 && post == 1) {
            return Err(Error::InvalidPrePeriod {
                pre,
                group: Group::TREATED,
            });
        }
    } else {
        if pre >= 0 {
            return Err(Error::InvalidPrePeriod {
                pre,
                group: Group::TREATED,
            });
        }
        if post < 1 {
            return Err(Error::InvalidPostPeriod {
                post,
                group: Group::TREATED,
            });
        }
    }
    let f_1pre = group_period_ecdf(data, Group::TREATED, pre, grid)?;
    let f_0post = group_period_ecdf(data, Group::CONTROL, post, grid)?;
    let f_0pre = group_period_ecdf(data, Group::CONTROL, pre, grid)?;
    let links = CfLinks::multi_period(regime, Group::TREATED, Group::CONTROL, pre, post)?;
    counterfactual_core(
        &f_1pre,
        &f_0post,
        &f_0pre,
        links,
        opts,
        format!("F_cf[t'={pre},t={post}]"),
    )
}

/// Staggered counterfactual for group `g` (first treated at period g),
/// pre period `pre` in [-T:g-1] \ {0} and post period `post` >= g, using the
/// never-treated group as control.
pub fn counterfactual_staggered(
    data: &PanelDataset,
    group: Group,
    pre: i32,
    post: i32,
    regime: &LinkRegime,
    grid: &Arc<Grid>,
    opts: &CfOptions,
) -> Result<Counterfactual> {
    let g = match group {
        Group::Label(g) if g >= 1 => g as i32,
        _ => {
            return Err(Error::Domain(format!(
                "counterfactuals are defined for treated groups, not {group}"
            )))
        }
    };
    if pre >= g || pre == 0 {
        return Err(Error::InvalidPrePeriod { pre, group });
    }
    if post < g {
        return Err(Error::InvalidPostPeriod { post, group });
    }
    let f_gpre = group_period_ecdf(data, group, pre, grid)?;
    let f_npost = group_period_ecdf(data, Group::Never, post, grid)?;
    let f_npre = group_period_ecdf(data, Group::Never, pre, grid)?;
    let links = CfLinks::multi_period(regime, group, Group::Never, pre, post)?;
    counterfactual_core(
        &f_gpre,
        &f_npost,
        &f_npre,
        links,
        opts,
        format!("F_cf[g={group},t'={pre},t={post}]"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DesignRequest, Observation};
    use crate::links::Link;

    fn df(grid: &Arc<Grid>, values: Vec<f64>, n: usize) -> StepDf {
        StepDf::new(grid.clone(), values, "F", true)
            .unwrap()
            .with_cell_n(n)
    }

    fn grid1() -> Arc<Grid> {
        Arc::new(Grid::new(vec![0.0], 0.0).unwrap())
    }

    fn regime(link: Link) -> LinkRegime {
        LinkRegime::uniform(Theta::GroupIndexed, link)
    }

    const NO_CLIP: CfOptions = CfOptions {
        clip: ClipPolicy::Disabled,
        monotonize: false,
    };

    // Independent normal quantile for expectations: bisection of the CDF.
    fn normal_q_oracle(p: f64) -> f64 {
        let (mut lo, mut hi) = (-12.0, 12.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if Link::Normal.cdf(mid).unwrap() < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn index_coeffs_identity_is_subtraction() {
        let g = grid1();
        let coeffs = index_coeffs(
            &df(&g, vec![0.2], 10),
            &df(&g, vec![0.3], 10),
            &df(&g, vec![0.5], 10),
            &regime(Link::Identity),
        )
        .unwrap();
        assert!((coeffs.alpha[0] - 0.2).abs() < 1e-15);
        assert!((coeffs.beta[0] - 0.1).abs() < 1e-15);
        assert!((coeffs.gamma[0] - 0.3).abs() < 1e-15);
    }

    #[test]
    fn index_coeffs_normal_at_half_vanish() {
        let g = grid1();
        let coeffs = index_coeffs(
            &df(&g, vec![0.5], 10),
            &df(&g, vec![0.5], 10),
            &df(&g, vec![0.5], 10),
            &regime(Link::Normal),
        )
        .unwrap();
        assert!(coeffs.alpha[0].abs() < 1e-15);
        assert!(coeffs.beta[0].abs() < 1e-15);
        assert!(coeffs.gamma[0].abs() < 1e-15);
    }

    #[test]
    fn index_coeffs_normal_derived_values() {
        let g = grid1();
        let coeffs = index_coeffs(
            &df(&g, vec![0.2], 10),
            &df(&g, vec![0.3], 10),
            &df(&g, vec![0.5], 10),
            &regime(Link::Normal),
        )
        .unwrap();
        let a = normal_q_oracle(0.2);
        let b = normal_q_oracle(0.3) - a;
        let gm = normal_q_oracle(0.5) - a;
        assert!((coeffs.alpha[0] - a).abs() < 1e-9);
        assert!((coeffs.beta[0] - b).abs() < 1e-9);
        assert!((coeffs.gamma[0] - gm).abs() < 1e-9);
        // frozen values
        assert!((coeffs.alpha[0] - (-0.84162)).abs() < 1e-5);
        assert!((coeffs.beta[0] - 0.31722).abs() < 1e-5);
        assert!((coeffs.gamma[0] - 0.84162).abs() < 1e-5);
    }

    #[test]
    fn index_coeffs_reproduce_f00_through_the_link() {
        // invariant: Phi_0(alpha(y)) == F00(y) at every finite entry
        let g = Arc::new(Grid::new(vec![0.0, 1.0, 2.0], 2.0).unwrap());
        let f00 = df(&g, vec![0.0, 0.4, 1.0], 5);
        let f10 = df(&g, vec![0.1, 0.5, 0.9], 5);
        let f01 = df(&g, vec![0.2, 0.6, 1.0], 5);
        for link in [Link::Normal, Link::Logistic, Link::Cauchy] {
            let coeffs = index_coeffs(&f00, &f10, &f01, &regime(link)).unwrap();
            for (a, f) in coeffs.alpha.iter().zip(f00.values()) {
                if a.is_finite() {
                    assert!((link.cdf(*a).unwrap() - f).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn two_period_identity_closed_form() {
        let g = grid1();
        let cf = counterfactual_two_period(
            &df(&g, vec![0.3], 10),
            &df(&g, vec![0.5], 10),
            &df(&g, vec![0.2], 10),
            &regime(Link::Identity),
            &NO_CLIP,
        )
        .unwrap();
        assert_eq!(cf.df.values()[0], 0.3 + 0.5 - 0.2);
    }

    #[test]
    fn two_period_normal_derived_value() {
        let g = grid1();
        let cf = counterfactual_two_period(
            &df(&g, vec![0.3], 10),
            &df(&g, vec![0.5], 10),
            &df(&g, vec![0.2], 10),
            &regime(Link::Normal),
            &NO_CLIP,
        )
        .unwrap();
        let idx = normal_q_oracle(0.3) + normal_q_oracle(0.5) - normal_q_oracle(0.2);
        let expected = Link::Normal.cdf(idx).unwrap();
        assert!((cf.df.values()[0] - expected).abs() < 1e-9);
        assert!((cf.df.values()[0] - 0.62446).abs() < 1e-4);
    }

    #[test]
    fn two_period_uniform_clamps_to_support() {
        let g = grid1();
        let cf = counterfactual_two_period(
            &df(&g, vec![0.9], 10),
            &df(&g, vec![0.8], 10),
            &df(&g, vec![0.1], 10),
            &regime(Link::Uniform),
            &NO_CLIP,
        )
        .unwrap();
        assert_eq!(cf.df.values()[0], 1.0);
    }

    #[test]
    fn identity_out_of_range_is_flagged_not_error() {
        let g = grid1();
        let cf = counterfactual_two_period(
            &df(&g, vec![0.9], 10),
            &df(&g, vec![0.8], 10),
            &df(&g, vec![0.1], 10),
            &regime(Link::Identity),
            &NO_CLIP,
        )
        .unwrap();
        assert!((cf.df.values()[0] - 1.6).abs() < 1e-15);
        assert_eq!(cf.diagnostics.out_of_range, 1);
    }

    #[test]
    fn identity_oracle_random_triples() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = grid1();
        for _ in 0..10_000 {
            let f10: f64 = rng.gen();
            let f01: f64 = rng.gen();
            let f00: f64 = rng.gen();
            let cf = counterfactual_two_period(
                &df(&g, vec![f10], 10),
                &df(&g, vec![f01], 10),
                &df(&g, vec![f00], 10),
                &regime(Link::Identity),
                &NO_CLIP,
            )
            .unwrap();
            assert_eq!(cf.df.values()[0], f10 + f01 - f00);
        }
    }

    #[test]
    fn degenerate_trend_returns_f10() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let g = grid1();
        for link in Link::ALL {
            for _ in 0..200 {
                let common: f64 = rng.gen_range(0.01..0.99);
                // boundary F10 values exercise the extended-real path
                let f10: f64 = match rng.gen_range(0..4) {
                    0 => 0.0,
                    1 => 1.0,
                    _ => rng.gen(),
                };
                let cf = counterfactual_two_period(
                    &df(&g, vec![f10], 10),
                    &df(&g, vec![common], 10),
                    &df(&g, vec![common], 10),
                    &regime(link),
                    &NO_CLIP,
                )
                .unwrap();
                assert!(
                    (cf.df.values()[0] - f10).abs() < 1e-12,
                    "{link} f10={f10} got={}",
                    cf.df.values()[0]
                );
            }
        }
    }

    #[test]
    fn range_invariant_for_cdf_outer_links() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let g = grid1();
        let opts = CfOptions::default();
        for link in [Link::Normal, Link::Logistic, Link::Cauchy, Link::Uniform] {
            for _ in 0..500 {
                let cf = counterfactual_two_period(
                    &df(&g, vec![rng.gen()], 3),
                    &df(&g, vec![rng.gen()], 3),
                    &df(&g, vec![rng.gen()], 3),
                    &regime(link),
                    &opts,
                )
                .unwrap();
                let v = cf.df.values()[0];
                assert!((0.0..=1.0).contains(&v), "{link} produced {v}");
            }
        }
    }

    #[test]
    fn link_composition_recovers_the_model() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let g = grid1();
        for link in [Link::Normal, Link::Logistic, Link::Cauchy] {
            for _ in 0..300 {
                let a: f64 = rng.gen_range(-1.5..1.5);
                let b: f64 = rng.gen_range(-1.0..1.0);
                let c: f64 = rng.gen_range(-1.0..1.0);
                let f10 = link.cdf(a + b).unwrap();
                let f01 = link.cdf(a + c).unwrap();
                let f00 = link.cdf(a).unwrap();
                let cf = counterfactual_two_period(
                    &df(&g, vec![f10], 100),
                    &df(&g, vec![f01], 100),
                    &df(&g, vec![f00], 100),
                    &regime(link),
                    &NO_CLIP,
                )
                .unwrap();
                let truth = link.cdf(a + b + c).unwrap();
                assert!(
                    (cf.df.values()[0] - truth).abs() < 1e-9,
                    "{link}: got {} want {truth}",
                    cf.df.values()[0]
                );
            }
        }
    }

    #[test]
    fn indeterminate_index_is_an_error_without_clipping() {
        let g = grid1();
        let err = counterfactual_two_period(
            &df(&g, vec![0.5], 10),
            &df(&g, vec![1.0], 10),
            &df(&g, vec![1.0], 10),
            &regime(Link::Normal),
            &NO_CLIP,
        )
        .unwrap_err();
        assert!(matches!(err, Error::IndeterminateIndex(_)));
        // with auto clipping the same inputs are fine
        let ok = counterfactual_two_period(
            &df(&g, vec![0.5], 10),
            &df(&g, vec![1.0], 10),
            &df(&g, vec![1.0], 10),
            &regime(Link::Normal),
            &CfOptions::default(),
        )
        .unwrap();
        assert!(ok.diagnostics.clip_events == 2);
        assert!((ok.df.values()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn clipping_epsilon_tracks_min_cell_size() {
        let g = grid1();
        let cf = counterfactual_two_period(
            &df(&g, vec![0.0], 50),
            &df(&g, vec![0.5], 10),
            &df(&g, vec![0.5], 20),
            &regime(Link::Normal),
            &CfOptions::default(),
        )
        .unwrap();
        assert!((cf.diagnostics.clip_eps - 1.0 / 40.0).abs() < 1e-15);
        assert_eq!(cf.diagnostics.clip_events, 1);
    }

    #[test]
    fn monotonize_flag_applies_running_max() {
        let g = Arc::new(Grid::new(vec![0.0, 1.0], 1.0).unwrap());
        // identity links and a deliberately non-monotone combination
        let cf = counterfactual_two_period(
            &df(&g, vec![0.5, 0.4], 10),
            &df(&g, vec![0.3, 0.3], 10),
            &df(&g, vec![0.1, 0.1], 10),
            &regime(Link::Identity),
            &NO_CLIP,
        )
        .unwrap();
        assert!(!cf.diagnostics.monotone);
        assert!(!cf.df.monotone());
        let cf2 = counterfactual_two_period(
            &df(&g, vec![0.5, 0.4], 10),
            &df(&g, vec![0.3, 0.3], 10),
            &df(&g, vec![0.1, 0.1], 10),
            &regime(Link::Identity),
            &CfOptions {
                clip: ClipPolicy::Disabled,
                monotonize: true,
            },
        )
        .unwrap();
        assert!((cf2.df.values()[0] - 0.7).abs() < 1e-12);
        assert!((cf2.df.values()[1] - 0.7).abs() < 1e-12);
        assert!(!cf2.diagnostics.monotone);
        assert!(cf2.df.monotone());
    }

    fn staggered_two_group_data() -> (PanelDataset, PanelDataset) {
        // staggered: group 1 treated at period 1, never-treated control,
        // periods {-1, 1}; relabelled two-period twin: d in {0,1}, t in {0,1}
        let mut staggered = Vec::new();
        let mut twin = Vec::new();
        let treated_pre = [0.0, 1.0, 1.0, 2.0];
        let treated_post = [1.0, 2.0, 2.0, 3.0];
        let control_pre = [0.0, 0.0, 1.0, 2.0];
        let control_post = [0.0, 1.0, 1.0, 2.0];
        let mut push = |unit: usize, t_s: i32, g_s: Group, t_t: i32, g_t: Group, y: f64| {
            staggered.push(Observation {
                unit_id: format!("u{unit}"),
                period: t_s,
                group: g_s,
                outcome: y,
                covariates: None,
            });
            twin.push(Observation {
                unit_id: format!("u{unit}"),
                period: t_t,
                group: g_t,
                outcome: y,
                covariates: None,
            });
        };
        for (i, &y) in treated_pre.iter().enumerate() {
            push(i, -1, Group::Label(1), 0, Group::TREATED, y);
        }
        for (i, &y) in treated_post.iter().enumerate() {
            push(i, 1, Group::Label(1), 1, Group::TREATED, y);
        }
        for (i, &y) in control_pre.iter().enumerate() {
            push(100 + i, -1, Group::Never, 0, Group::CONTROL, y);
        }
        for (i, &y) in control_post.iter().enumerate() {
            push(100 + i, 1, Group::Never, 1, Group::CONTROL, y);
        }
        let s =
            PanelDataset::from_observations(staggered, vec![], DesignRequest::Staggered).unwrap();
        let t = PanelDataset::from_observations(twin, vec![], DesignRequest::TwoPeriod).unwrap();
        (s, t)
    }

    #[test]
    fn staggered_two_group_reduces_bit_for_bit() {
        let (staggered, twin) = staggered_two_group_data();
        let grid = Arc::new(Grid::new(vec![0.0, 1.0, 2.0, 3.0], 3.0).unwrap());
        for link in [Link::Normal, Link::Identity, Link::Uniform, Link::Logistic] {
            let mut group_links = BTreeMap::new();
            group_links.insert(Group::Label(1), link);
            group_links.insert(Group::Never, link);
            let stag_regime = LinkRegime::group_indexed(group_links);
            let cf_s = counterfactual_staggered(
                &staggered,
                Group::Label(1),
                -1,
                1,
                &stag_regime,
                &grid,
                &CfOptions::default(),
            )
            .unwrap();

            let f10 = group_period_ecdf(&twin, Group::TREATED, 0, &grid).unwrap();
            let f01 = group_period_ecdf(&twin, Group::CONTROL, 1, &grid).unwrap();
            let f00 = group_period_ecdf(&twin, Group::CONTROL, 0, &grid).unwrap();
            let cf_t =
                counterfactual_two_period(&f10, &f01, &f00, &regime(link), &CfOptions::default())
                    .unwrap();
            assert_eq!(cf_s.df.values(), cf_t.df.values(), "link {link}");
        }
    }

    #[test]
    fn staggered_invalid_periods_rejected() {
        let (staggered, _) = staggered_two_group_data();
        let grid = Arc::new(Grid::new(vec![0.0], 0.0).unwrap());
        let r = regime(Link::Normal);
        assert!(matches!(
            counterfactual_staggered(&staggered, Group::Label(1), 1, 1, &r, &grid, &NO_CLIP),
            Err(Error::InvalidPrePeriod { .. })
        ));
        assert!(matches!(
            counterfactual_staggered(&staggered, Group::Label(1), -1, 0, &r, &grid, &NO_CLIP),
            Err(Error::InvalidPostPeriod { .. })
        ));
        assert!(matches!(
            counterfactual_staggered(&staggered, Group::Never, -1, 1, &r, &grid, &NO_CLIP),
            Err(Error::Domain(_))
        ));
    }

    fn nsmp_data() -> PanelDataset {
        // three periods {-1, 1, 2}; the control distribution at t = 2
        // replicates t' = -1 exactly
        let mut observations = Vec::new();
        let mut unit = 0usize;
        let mut cell = |g: Group, t: i32, ys: &[f64], observations: &mut Vec<Observation>| {
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
        cell(Group::TREATED, -1, &[0.0, 1.0, 2.0, 3.0], &mut observations);
        cell(Group::TREATED, 1, &[1.0, 2.0, 3.0, 3.0], &mut observations);
        cell(Group::TREATED, 2, &[2.0, 3.0, 3.0, 3.0], &mut observations);
        cell(Group::CONTROL, -1, &[0.0, 1.0, 1.0, 2.0], &mut observations);
        cell(Group::CONTROL, 1, &[0.0, 1.0, 2.0, 2.0], &mut observations);
        cell(Group::CONTROL, 2, &[0.0, 1.0, 1.0, 2.0], &mut observations);
        PanelDataset::from_observations(observations, vec![], DesignRequest::Nsmp).unwrap()
    }

    #[test]
    fn nsmp_no_trend_returns_treated_pre() {
        let data = nsmp_data();
        // interior grid: the treated-pre ECDF stays below 1 so the boundary
        // clipping of the (cancelling) control terms cannot shift the result
        let grid = Arc::new(Grid::new(vec![0.0, 1.0, 2.0], 3.0).unwrap());
        // control at t=2 equals control at t'=-1, so gamma == 0
        let cf = counterfactual_nsmp(
            &data,
            -1,
            2,
            &regime(Link::Normal),
            &grid,
            &CfOptions::default(),
        )
        .unwrap();
        let f_1pre = group_period_ecdf(&data, Group::TREATED, -1, &grid).unwrap();
        for (a, b) in cf.df.values().iter().zip(f_1pre.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nsmp_hand_computed_value() {
        let data = nsmp_data();
        let grid = Arc::new(Grid::new(vec![0.0, 1.0, 2.0, 3.0], 3.0).unwrap());
        let cf = counterfactual_nsmp(
            &data,
            -1,
            1,
            &regime(Link::Normal),
            &grid,
            &CfOptions::default(),
        )
        .unwrap();
        // hand-computed from the 4-point cell distributions via the oracle:
        // F_1,-1 = (.25,.5,.75,1), F_0,1 = (.25,.5,1,1), F_0,-1 = (.25,.75,1,1)
        // with every cell of size 4 the auto clip is eps = 1/16
        let f1pre: [f64; 4] = [0.25, 0.5, 0.75, 1.0];
        let f0post: [f64; 4] = [0.25, 0.5, 1.0, 1.0];
        let f0pre: [f64; 4] = [0.25, 0.75, 1.0, 1.0];
        let eps = 1.0 / 16.0;
        for i in 0..4 {
            let idx = normal_q_oracle(f1pre[i].clamp(eps, 1.0 - eps))
                + normal_q_oracle(f0post[i].clamp(eps, 1.0 - eps))
                - normal_q_oracle(f0pre[i].clamp(eps, 1.0 - eps));
            let expected = Link::Normal.cdf(idx).unwrap();
            let got = cf.df.values()[i];
            assert!(
                (got - expected).abs() < 1e-9,
                "i={i} got={got} expected={expected}"
            );
        }
    }

    #[test]
    fn nsmp_rejects_bad_periods() {
        let data = nsmp_data();
        let grid = Arc::new(Grid::new(vec![0.0], 0.0).unwrap());
        assert!(matches!(
            counterfactual_nsmp(&data, 1, 2, &regime(Link::Normal), &grid, &NO_CLIP),
            Err(Error::InvalidPrePeriod { .. })
        ));
        assert!(matches!(
            counterfactual_nsmp(&data, -1, 0, &regime(Link::Normal), &grid, &NO_CLIP),
            Err(Error::InvalidPostPeriod { .. })
        ));
    }

    #[test]
    fn time_indexed_regime_follows_periods() {
        // theta = 0 with distinct pre/post links; verify against the direct
        // formula with inverse links chosen by period
        let g = grid1();
        let mut time_links = BTreeMap::new();
        time_links.insert(0, Link::Logistic);
        time_links.insert(1, Link::Normal);
        let r = LinkRegime::time_indexed(time_links);
        let cf = counterfactual_two_period(
            &df(&g, vec![0.3], 10),
            &df(&g, vec![0.5], 10),
            &df(&g, vec![0.2], 10),
            &r,
            &NO_CLIP,
        )
        .unwrap();
        let idx = Link::Logistic.quantile(0.3).unwrap() + Link::Normal.quantile(0.5).unwrap()
            - Link::Logistic.quantile(0.2).unwrap();
        let expected = Link::Normal.cdf(idx).unwrap();
        assert!((cf.df.values()[0] - expected).abs() < 1e-12);
    }
}
