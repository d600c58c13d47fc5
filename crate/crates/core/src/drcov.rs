//! Covariate-conditional identification via distribution regression.
//!
//! At every grid point y the indicator 1{Y <= y} is regressed on a dictionary
//! of covariate transforms by binary-response quasi-maximum likelihood, once
//! per estimation cell; the counterfactual DF averages the fitted
//! treated-group probabilities over the treated post-period covariates.

use crate::data::{Group, PanelDataset};
use crate::ecdf::{cell_ecdf_unit_weights, Grid, StepDf};
use crate::effects::EffectCurve;
use crate::error::{Error, Result};
use crate::identify::{clip_eps, CfDiagnostics, CfLinks, CfOptions, ClipPolicy, LinkRegime};
use crate::inference::RepEstimate;
use crate::links::Link;
use rayon::prelude::*;
use serde::Serialize;
use std::sync::Arc;

/// Covariate dictionary: transforms of the raw columns, constant included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dictionary {
    #[default]
    Linear,
    /// Linear terms plus squares and pairwise products.
    Quadratic,
}

/// Distribution-regression specification.
#[derive(Debug, Clone, PartialEq)]
pub struct DrSpec {
    pub dictionary: Dictionary,
    pub links: LinkRegime,
    pub max_iter: usize,
    pub tol: f64,
}

impl DrSpec {
    pub fn new(dictionary: Dictionary, links: LinkRegime) -> Self {
        DrSpec {
            dictionary,
            links,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

/// Row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if n == 0 || p == 0 {
            return Err(Error::Domain("empty design matrix".into()));
        }
        let mut data = Vec::with_capacity(n * p);
        for r in &rows {
            if r.len() != p {
                return Err(Error::Domain("ragged design matrix".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(DesignMatrix { rows: n, cols: p, data })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Convergence and pathology flags of one fit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FitFlags {
    pub converged: bool,
    /// Some index |x'eta| hit the +-30 clamp at the optimum.
    pub separated: bool,
    /// All responses equal: clipped intercept-only fit.
    pub degenerate: bool,
    /// Non-concave likelihood (Cauchy link): multistart was used.
    pub nonconcave: bool,
    pub iterations: usize,
    pub grad_norm: f64,
}

/// A fitted binary-response regression.
#[derive(Debug, Clone, PartialEq)]
pub struct QmleFit {
    pub coef: Vec<f64>,
    pub loglik: f64,
    pub flags: FitFlags,
}

#[derive(Debug, Clone, Copy)]
pub struct QmleOptions {
    pub max_iter: usize,
    pub tol: f64,
    /// Probability used for the clipped intercept when all responses agree.
    pub boundary_eps: f64,
}

impl Default for QmleOptions {
    fn default() -> Self {
        QmleOptions {
            max_iter: 100,
            tol: 1e-10,
            boundary_eps: 1e-6,
        }
    }
}

const INDEX_CLAMP: f64 = 30.0;
const PROB_CLIP: f64 = 1e-10;

/// Maximize the binary-response quasi-likelihood with link CDF `link` by
/// Fisher scoring with step halving.
pub fn qmle_binary_fit(
    responses: &[f64],
    design: &DesignMatrix,
    link: Link,
    opts: &QmleOptions,
) -> Result<QmleFit> {
    if responses.len() != design.n_rows() {
        return Err(Error::Domain(
            "responses and design matrix have different lengths".into(),
        ));
    }
    if let Some(bad) = responses.iter().find(|r| **r != 0.0 && **r != 1.0) {
        return Err(Error::Domain(format!("response {bad} is not 0/1")));
    }
    if independent_columns(design, None).len() != design.n_cols() {
        return Err(Error::RankDeficient);
    }
    qmle_fit_weighted(responses, design, link, None, opts)
}

pub(crate) fn qmle_fit_weighted(
    responses: &[f64],
    design: &DesignMatrix,
    link: Link,
    weights: Option<&[f64]>,
    opts: &QmleOptions,
) -> Result<QmleFit> {
    if link == Link::Cauchy {
        // non-concave likelihood: multistart from the probit solution and
        // from zero, keep the better optimum
        let probit = fisher_scoring(responses, design, Link::Normal, weights, opts, None)?;
        let from_probit =
            fisher_scoring(responses, design, link, weights, opts, Some(probit.coef.clone()))?;
        let from_zero = fisher_scoring(
            responses,
            design,
            link,
            weights,
            opts,
            Some(vec![0.0; design.n_cols()]),
        )?;
        let mut best = if from_probit.loglik >= from_zero.loglik {
            from_probit
        } else {
            from_zero
        };
        best.flags.nonconcave = true;
        return Ok(best);
    }
    fisher_scoring(responses, design, link, weights, opts, None)
}

fn weight_at(weights: Option<&[f64]>, i: usize) -> f64 {
    weights.map_or(1.0, |w| w[i])
}

fn loglik(
    responses: &[f64],
    design: &DesignMatrix,
    link: Link,
    weights: Option<&[f64]>,
    coef: &[f64],
) -> f64 {
    let mut ll = 0.0;
    for i in 0..design.n_rows() {
        let z = dot(design.row(i), coef).clamp(-INDEX_CLAMP, INDEX_CLAMP);
        let p = link
            .cdf(z)
            .expect("finite clamped index")
            .clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        let w = weight_at(weights, i);
        ll += w * (responses[i] * p.ln() + (1.0 - responses[i]) * (1.0 - p).ln());
    }
    ll
}

fn fisher_scoring(
    responses: &[f64],
    design: &DesignMatrix,
    link: Link,
    weights: Option<&[f64]>,
    opts: &QmleOptions,
    start: Option<Vec<f64>>,
) -> Result<QmleFit> {
    let n = design.n_rows();
    let p = design.n_cols();
    let total: f64 = (0..n).map(|i| weight_at(weights, i)).sum();
    if total <= 0.0 {
        return Err(Error::Domain("nonpositive total weight".into()));
    }
    let mean: f64 = (0..n)
        .map(|i| weight_at(weights, i) * responses[i])
        .sum::<f64>()
        / total;

    // all responses equal: clipped intercept-only degenerate fit
    if mean <= 0.0 || mean >= 1.0 {
        let q = if mean <= 0.0 {
            link.quantile(opts.boundary_eps)?
        } else {
            link.quantile(1.0 - opts.boundary_eps)?
        };
        let mut coef = vec![0.0; p];
        coef[0] = q;
        let ll = loglik(responses, design, link, weights, &coef);
        return Ok(QmleFit {
            coef,
            loglik: ll,
            flags: FitFlags {
                converged: true,
                degenerate: true,
                ..FitFlags::default()
            },
        });
    }

    let mut coef = start.unwrap_or_else(|| {
        let mut c = vec![0.0; p];
        c[0] = link
            .quantile(mean.clamp(opts.boundary_eps, 1.0 - opts.boundary_eps))
            .expect("interior probability");
        c
    });
    let mut ll = loglik(responses, design, link, weights, &coef);
    let mut grad = vec![0.0; p];
    let mut info = vec![0.0; p * p];
    let mut iterations = 0;
    let mut converged = false;
    let mut hit_clamp = false;

    for iter in 0..opts.max_iter {
        iterations = iter + 1;
        grad.iter_mut().for_each(|g| *g = 0.0);
        info.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            let x = design.row(i);
            let raw = dot(x, &coef);
            if raw.abs() > INDEX_CLAMP {
                hit_clamp = true;
            }
            let z = raw.clamp(-INDEX_CLAMP, INDEX_CLAMP);
            let prob = link
                .cdf(z)
                .expect("finite clamped index")
                .clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            let dens = link.density(z).expect("finite clamped index");
            let w = weight_at(weights, i);
            let denom = prob * (1.0 - prob);
            let score_w = w * (responses[i] - prob) * dens / denom;
            let info_w = w * dens * dens / denom;
            for a in 0..p {
                grad[a] += score_w * x[a];
                for b in a..p {
                    info[a * p + b] += info_w * x[a] * x[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[a * p + b] = info[b * p + a];
            }
        }
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if gnorm < opts.tol {
            converged = true;
            break;
        }
        let step = solve_spd(&mut info.clone(), &grad, p)?;
        // step halving on the quasi-likelihood
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = coef
                .iter()
                .zip(&step)
                .map(|(c, s)| c + lambda * s)
                .collect();
            let cand_ll = loglik(responses, design, link, weights, &cand);
            if cand_ll >= ll - 1e-12 {
                coef = cand;
                ll = cand_ll;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }

    // final gradient; separation = the index clamp bound during iteration,
    // or the fit perfectly classifying the responses (a diverging index)
    grad.iter_mut().for_each(|g| *g = 0.0);
    let mut separated = hit_clamp;
    const SEP_MARGIN: f64 = 1e-4;
    let mut classified = true;
    for i in 0..n {
        let x = design.row(i);
        let raw = dot(x, &coef);
        if raw.abs() > INDEX_CLAMP {
            separated = true;
        }
        let z = raw.clamp(-INDEX_CLAMP, INDEX_CLAMP);
        let prob = link
            .cdf(z)
            .expect("finite clamped index")
            .clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        if weight_at(weights, i) > 0.0 {
            let fits = if responses[i] == 1.0 {
                prob >= 1.0 - SEP_MARGIN
            } else {
                prob <= SEP_MARGIN
            };
            classified &= fits;
        }
        let dens = link.density(z).expect("finite clamped index");
        let w = weight_at(weights, i);
        let score_w = w * (responses[i] - prob) * dens / (prob * (1.0 - prob));
        for a in 0..p {
            grad[a] += score_w * x[a];
        }
    }
    if classified {
        separated = true;
    }
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if grad_norm < opts.tol {
        converged = true;
    }
    Ok(QmleFit {
        coef,
        loglik: ll,
        flags: FitFlags {
            converged,
            separated,
            degenerate: false,
            nonconcave: false,
            iterations,
            grad_norm,
        },
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve a symmetric positive (semi)definite system by Gaussian elimination
/// with partial pivoting, ridging the diagonal when near-singular.
fn solve_spd(a: &mut [f64], rhs: &[f64], p: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut b = rhs.to_vec();
    let scale: f64 = (0..p).map(|i| m[i * p + i].abs()).fold(0.0, f64::max);
    let ridge = (scale * 1e-12).max(1e-300);
    for i in 0..p {
        m[i * p + i] += ridge;
    }
    for col in 0..p {
        let mut piv = col;
        let mut best = m[col * p + col].abs();
        for r in (col + 1)..p {
            let v = m[r * p + col].abs();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best <= scale * 1e-14 {
            return Err(Error::RankDeficient);
        }
        if piv != col {
            for c in 0..p {
                m.swap(piv * p + c, col * p + c);
            }
            b.swap(piv, col);
        }
        let d = m[col * p + col];
        for r in (col + 1)..p {
            let f = m[r * p + col] / d;
            if f != 0.0 {
                for c in col..p {
                    m[r * p + c] -= f * m[col * p + c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; p];
    for col in (0..p).rev() {
        let mut s = b[col];
        for c in (col + 1)..p {
            s -= m[col * p + c] * x[c];
        }
        x[col] = s / m[col * p + col];
    }
    Ok(x)
}

/// Indices of a maximal linearly independent column subset (modified
/// Gram-Schmidt over the rows, with a relative pivot tolerance).
fn independent_columns(design: &DesignMatrix, row_weights: Option<&[f64]>) -> Vec<usize> {
    let n = design.n_rows();
    let p = design.n_cols();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut kept = Vec::new();
    for c in 0..p {
        let mut v: Vec<f64> = (0..n)
            .map(|i| design.row(i)[c] * row_weights.map_or(1.0, |w| w[i].abs().sqrt()))
            .collect();
        let norm0 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        for q in &basis {
            let proj = dot(&v, q);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= proj * qi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0 {
            for x in &mut v {
                *x /= norm;
            }
            basis.push(v);
            kept.push(c);
        }
    }
    kept
}

/// Dictionary row for one observation's covariates.
fn dictionary_row(dict: Dictionary, x: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.push(1.0);
    out.extend_from_slice(x);
    if dict == Dictionary::Quadratic {
        for i in 0..x.len() {
            out.push(x[i] * x[i]);
        }
        for i in 0..x.len() {
            for j in (i + 1)..x.len() {
                out.push(x[i] * x[j]);
            }
        }
    }
}

fn dictionary_names(dict: Dictionary, names: &[String]) -> Vec<String> {
    let mut out = vec!["const".to_string()];
    out.extend(names.iter().cloned());
    if dict == Dictionary::Quadratic {
        for n in names {
            out.push(format!("{n}^2"));
        }
        for i in 0..names.len() {
            for j in (i + 1)..names.len() {
                out.push(format!("{}*{}", names[i], names[j]));
            }
        }
    }
    out
}

/// Coefficient curves of the three-step algorithm, one vector per grid point,
/// with per-(cell, gridpoint) fit diagnostics.
#[derive(Debug, Clone)]
pub struct CoefCurve {
    pub grid: Arc<Grid>,
    /// Names of the kept dictionary columns.
    pub columns: Vec<String>,
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    /// Flags for the fits on cells (0,0), (1,0), (0,1) at each grid point.
    pub flags: Vec<[FitFlags; 3]>,
}

struct CellDesign {
    design: DesignMatrix,
    outcomes: Vec<f64>,
    row_weights: Option<Vec<f64>>,
}

fn cell_design(
    data: &PanelDataset,
    dict: Dictionary,
    kept: &[usize],
    group: Group,
    period: i32,
    unit_weights: Option<&[f64]>,
) -> Result<CellDesign> {
    let rows = data
        .cell_rows(group, period)
        .filter(|r| !r.is_empty())
        .ok_or(Error::EmptyCell { group, period })?;
    let mut mat = Vec::with_capacity(rows.len());
    let mut outcomes = Vec::with_capacity(rows.len());
    let mut row_weights = unit_weights.map(|_| Vec::with_capacity(rows.len()));
    let mut total = 0.0;
    let mut buf = Vec::new();
    for &ri in rows {
        let row = &data.rows()[ri as usize];
        let x = row.covariates.as_deref().unwrap_or(&[]);
        dictionary_row(dict, x, &mut buf);
        mat.push(kept.iter().map(|&c| buf[c]).collect::<Vec<f64>>());
        outcomes.push(row.outcome);
        let w = unit_weights.map_or(1.0, |uw| uw[row.unit as usize]);
        if let Some(rw) = &mut row_weights {
            rw.push(w);
        }
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::EmptyCell { group, period });
    }
    Ok(CellDesign {
        design: DesignMatrix::from_rows(mat)?,
        outcomes,
        row_weights,
    })
}

struct ThreeStepFit {
    kept: Vec<usize>,
    alpha: Vec<Vec<f64>>,
    beta: Vec<Vec<f64>>,
    gamma: Vec<Vec<f64>>,
    flags: Vec<[FitFlags; 3]>,
    boundary_eps: f64,
    degenerate_fits: usize,
}

fn three_step_core(
    data: &PanelDataset,
    spec: &DrSpec,
    grid: &Grid,
    clip: ClipPolicy,
    unit_weights: Option<&[f64]>,
) -> Result<ThreeStepFit> {
    if clip == ClipPolicy::Disabled {
        return Err(Error::Config(
            "the covariate estimator requires boundary clipping (auto or a fixed epsilon)".into(),
        ));
    }
    // prune the dictionary on the pooled design across all four cells
    let dict = spec.dictionary;
    let mut pooled = Vec::new();
    let mut buf = Vec::new();
    for (g, t) in [
        (Group::CONTROL, 0),
        (Group::TREATED, 0),
        (Group::CONTROL, 1),
        (Group::TREATED, 1),
    ] {
        if let Some(rows) = data.cell_rows(g, t) {
            for &ri in rows {
                let row = &data.rows()[ri as usize];
                dictionary_row(dict, row.covariates.as_deref().unwrap_or(&[]), &mut buf);
                pooled.push(buf.clone());
            }
        }
    }
    let pooled = DesignMatrix::from_rows(pooled)?;
    let kept = independent_columns(&pooled, None);
    if kept.is_empty() {
        return Err(Error::RankDeficient);
    }

    let links = CfLinks::two_period(&spec.links)?;
    let c00 = cell_design(data, dict, &kept, Group::CONTROL, 0, unit_weights)?;
    let c10 = cell_design(data, dict, &kept, Group::TREATED, 0, unit_weights)?;
    let c01 = cell_design(data, dict, &kept, Group::CONTROL, 1, unit_weights)?;
    // pinned from the observed cell sizes, as in the no-covariate estimator
    let min_cell = [(Group::CONTROL, 0), (Group::TREATED, 0), (Group::CONTROL, 1)]
        .iter()
        .map(|&(g, t)| data.cell_rows(g, t).map_or(0, <[u32]>::len) as f64)
        .reduce(f64::min);
    let boundary_eps = clip_eps(clip, min_cell)?;
    let qopts = QmleOptions {
        max_iter: spec.max_iter,
        tol: spec.tol,
        boundary_eps,
    };

    let fit_cell = |cell: &CellDesign, link: Link, y: f64, group: Group, period: i32| {
        let responses: Vec<f64> = cell
            .outcomes
            .iter()
            .map(|&o| if o <= y { 1.0 } else { 0.0 })
            .collect();
        qmle_fit_weighted(
            &responses,
            &cell.design,
            link,
            cell.row_weights.as_deref(),
            &qopts,
        )
        .map_err(|e| Error::FitFailure {
            group,
            period,
            y,
            message: e.to_string(),
        })
    };

    let per_point: Vec<([Vec<f64>; 3], [FitFlags; 3])> = grid
        .points()
        .par_iter()
        .map(|&y| -> Result<([Vec<f64>; 3], [FitFlags; 3])> {
            let f00 = fit_cell(&c00, links.control_pre, y, Group::CONTROL, 0)?;
            let f10 = fit_cell(&c10, links.treated_pre, y, Group::TREATED, 0)?;
            let f01 = fit_cell(&c01, links.control_post, y, Group::CONTROL, 1)?;
            Ok((
                [f00.coef, f10.coef, f01.coef],
                [f00.flags, f10.flags, f01.flags],
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let p = kept.len();
    let mut alpha = Vec::with_capacity(grid.len());
    let mut beta = Vec::with_capacity(grid.len());
    let mut gamma = Vec::with_capacity(grid.len());
    let mut flags = Vec::with_capacity(grid.len());
    let mut degenerate_fits = 0usize;
    for (coefs, fl) in per_point {
        let [a, e10, e01] = coefs;
        let b: Vec<f64> = (0..p).map(|j| e10[j] - a[j]).collect();
        let g: Vec<f64> = (0..p).map(|j| e01[j] - a[j]).collect();
        degenerate_fits += fl.iter().filter(|f| f.degenerate).count();
        alpha.push(a);
        beta.push(b);
        gamma.push(g);
        flags.push(fl);
    }
    Ok(ThreeStepFit {
        kept,
        alpha,
        beta,
        gamma,
        flags,
        boundary_eps,
        degenerate_fits,
    })
}

/// The three-step coefficient curves on the grid.
pub fn dr_three_step(data: &PanelDataset, spec: &DrSpec, grid: &Arc<Grid>) -> Result<CoefCurve> {
    let fit = three_step_core(data, spec, grid, ClipPolicy::Auto, None)?;
    let all_names = dictionary_names(spec.dictionary, data.covariate_names());
    Ok(CoefCurve {
        grid: grid.clone(),
        columns: fit.kept.iter().map(|&c| all_names[c].clone()).collect(),
        alpha: fit.alpha,
        beta: fit.beta,
        gamma: fit.gamma,
        flags: fit.flags,
    })
}

fn counterfactual_values_x(
    data: &PanelDataset,
    fit: &ThreeStepFit,
    spec: &DrSpec,
    grid: &Grid,
    unit_weights: Option<&[f64]>,
) -> Result<Vec<f64>> {
    let links = CfLinks::two_period(&spec.links)?;
    let rows = data
        .cell_rows(Group::TREATED, 1)
        .filter(|r| !r.is_empty())
        .ok_or(Error::EmptyCell {
            group: Group::TREATED,
            period: 1,
        })?;
    let mut buf = Vec::new();
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(rows.len());
    let mut ws: Vec<f64> = Vec::with_capacity(rows.len());
    let mut total = 0.0;
    for &ri in rows {
        let row = &data.rows()[ri as usize];
        dictionary_row(spec.dictionary, row.covariates.as_deref().unwrap_or(&[]), &mut buf);
        xs.push(fit.kept.iter().map(|&c| buf[c]).collect());
        let w = unit_weights.map_or(1.0, |uw| uw[row.unit as usize]);
        ws.push(w);
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::EmptyCell {
            group: Group::TREATED,
            period: 1,
        });
    }
    let p = fit.kept.len();
    let mut values = Vec::with_capacity(grid.len());
    for l in 0..grid.len() {
        let mut s = vec![0.0; p];
        for j in 0..p {
            s[j] = fit.alpha[l][j] + fit.beta[l][j] + fit.gamma[l][j];
        }
        let mut acc = 0.0;
        for (x, w) in xs.iter().zip(&ws) {
            let z = dot(x, &s).clamp(-INDEX_CLAMP, INDEX_CLAMP);
            acc += w * links.outer.cdf(z)?;
        }
        values.push(acc / total);
    }
    Ok(values)
}

/// Counterfactual DF with covariates: the fitted untreated-outcome
/// probability averaged over the treated group's post-period covariates.
pub fn counterfactual_x(
    data: &PanelDataset,
    coefs: &CoefCurve,
    spec: &DrSpec,
    grid: &Arc<Grid>,
) -> Result<StepDf> {
    let fit = ThreeStepFit {
        kept: resolve_kept(&coefs.columns, spec, data)?,
        alpha: coefs.alpha.clone(),
        beta: coefs.beta.clone(),
        gamma: coefs.gamma.clone(),
        flags: coefs.flags.clone(),
        boundary_eps: 0.0,
        degenerate_fits: 0,
    };
    let values = counterfactual_values_x(data, &fit, spec, grid, None)?;
    let monotone = values.windows(2).all(|w| w[0] <= w[1]);
    StepDf::new(grid.clone(), values, "F_cf^X", monotone)
}

fn resolve_kept(columns: &[String], spec: &DrSpec, data: &PanelDataset) -> Result<Vec<usize>> {
    let all = dictionary_names(spec.dictionary, data.covariate_names());
    columns
        .iter()
        .map(|c| {
            all.iter()
                .position(|n| n == c)
                .ok_or_else(|| Error::Config(format!("unknown dictionary column '{c}'")))
        })
        .collect()
}

/// DTT with covariates: treated post-period ECDF minus the covariate
/// counterfactual.
pub fn dtt_x(
    data: &PanelDataset,
    coefs: &CoefCurve,
    spec: &DrSpec,
    grid: &Arc<Grid>,
) -> Result<EffectCurve> {
    let treated = crate::ecdf::group_period_ecdf(data, Group::TREATED, 1, grid)?;
    let cf = counterfactual_x(data, coefs, spec, grid)?;
    crate::effects::dtt(&treated, &cf)
}

/// One covariate-estimator pass for the bootstrap pipeline.
pub(crate) fn estimate_rep_x(
    data: &PanelDataset,
    spec: &DrSpec,
    grid: &Arc<Grid>,
    opts: CfOptions,
    unit_weights: Option<&[f64]>,
) -> Result<RepEstimate> {
    let fit = three_step_core(data, spec, grid, opts.clip, unit_weights)?;
    let cf = counterfactual_values_x(data, &fit, spec, grid, unit_weights)?;
    let rows = data
        .cell_rows(Group::TREATED, 1)
        .filter(|r| !r.is_empty())
        .ok_or(Error::EmptyCell {
            group: Group::TREATED,
            period: 1,
        })?;
    let mut treated = vec![0.0; grid.len()];
    cell_ecdf_unit_weights(data, rows, unit_weights, grid.points(), &mut treated).ok_or(
        Error::EmptyCell {
            group: Group::TREATED,
            period: 1,
        },
    )?;
    let mut cf_values = cf;
    let monotone = cf_values.windows(2).all(|w| w[0] <= w[1]);
    if opts.monotonize {
        let mut running = f64::NEG_INFINITY;
        for v in &mut cf_values {
            running = running.max(*v);
            *v = running;
        }
    }
    Ok(RepEstimate {
        treated,
        cf: cf_values,
        diags: CfDiagnostics {
            clip_events: fit.degenerate_fits,
            clip_eps: fit.boundary_eps,
            out_of_range: 0,
            monotone,
        },
    })
}
