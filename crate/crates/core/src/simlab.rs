//! Monte Carlo harness: data-generating processes with censored/discretized
//! or continuous outcomes, asymmetric Laplace errors, and the evaluation
//! metrics (L2 distances, rejection rates, ADTT bias summaries).

use crate::data::{DesignRequest, Observation, PanelDataset};
use crate::ecdf::{build_grid, GridRule};
use crate::error::{Error, Result};
use crate::identify::LinkRegime;
use crate::inference::{band_pipeline, BootScheme, BootstrapPlan, EstimatorSpec, PipelineOptions};
use crate::links::norm_cdf;
use crate::rng;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

const MC_DATA_TAG: u64 = 0xD47A;
const MC_BOOT_TAG: u64 = 0x1B007;
const MC_LEVEL: f64 = 0.90;

/// Asymmetric Laplace distribution with location 0 and scale 1 in the skew
/// parameterization whose density is proportional to exp(-sqrt(2) k u) for
/// u >= 0 and exp(sqrt(2) u / k) for u < 0; the CDF at 0 is k^2/(1+k^2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ald {
    kappa: f64,
}

impl Ald {
    pub fn new(kappa: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::Config(format!(
                "ALD skew parameter {kappa} must lie in (0, 1)"
            )));
        }
        Ok(Ald { kappa })
    }

    pub fn kappa(self) -> f64 {
        self.kappa
    }

    pub fn cdf(self, u: f64) -> f64 {
        let k = self.kappa;
        let p0 = k * k / (1.0 + k * k);
        if u < 0.0 {
            p0 * (std::f64::consts::SQRT_2 * u / k).exp()
        } else {
            1.0 - (-(std::f64::consts::SQRT_2) * k * u).exp() / (1.0 + k * k)
        }
    }

    pub fn quantile(self, p: f64) -> f64 {
        debug_assert!((0.0..=1.0).contains(&p));
        let k = self.kappa;
        let p0 = k * k / (1.0 + k * k);
        if p <= p0 {
            k / std::f64::consts::SQRT_2 * (p * (1.0 + k * k) / (k * k)).ln()
        } else {
            -((1.0 - p) * (1.0 + k * k)).ln() / (std::f64::consts::SQRT_2 * k)
        }
    }

    pub fn mean(self) -> f64 {
        (1.0 - self.kappa * self.kappa) / (std::f64::consts::SQRT_2 * self.kappa)
    }

    pub fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        let u = loop {
            let u: f64 = rng.gen();
            if u > 0.0 {
                break u;
            }
        };
        self.quantile(u)
    }
}

/// One inverse-transform draw from ALD(0, 1, kappa).
pub fn sample_ald<R: Rng>(rng: &mut R, kappa: f64) -> Result<f64> {
    Ok(Ald::new(kappa)?.sample(rng))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorDist {
    StdNormal,
    Ald { kappa: f64 },
}

impl ErrorDist {
    fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            ErrorDist::StdNormal => {
                let u = loop {
                    let u: f64 = rng.gen();
                    if u > 0.0 {
                        break u;
                    }
                };
                crate::links::norm_quantile(u)
            }
            ErrorDist::Ald { kappa } => Ald { kappa }.sample(rng),
        }
    }

    fn cdf(self, u: f64) -> f64 {
        match self {
            ErrorDist::StdNormal => norm_cdf(u),
            ErrorDist::Ald { kappa } => Ald { kappa }.cdf(u),
        }
    }
}

/// Which outcome map the generator applies to the latent linear model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dgp {
    /// Censored and discretized: Y = max(ceil(Y~ + 1), 0).
    Censored,
    /// Continuous: Y = Y~.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DgpParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for DgpParams {
    fn default() -> Self {
        DgpParams {
            alpha: 0.1,
            beta: 0.2,
            gamma: -0.1,
            delta: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub dgp: Dgp,
    pub n: usize,
    pub error: ErrorDist,
    pub params: DgpParams,
    /// Link regime used by the estimator (not by the generator).
    pub regime: LinkRegime,
    pub bootstrap: usize,
    pub replications: usize,
    pub seed: u64,
}

impl DgpConfig {
    /// Generator-side validity: even sample size, admissible error law.
    pub fn validate_data(&self) -> Result<()> {
        if self.n == 0 || self.n % 2 != 0 {
            return Err(Error::Config(format!(
                "sample size {} must be positive and even (periods split the sample in half)",
                self.n
            )));
        }
        if let ErrorDist::Ald { kappa } = self.error {
            Ald::new(kappa)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_data()?;
        if self.bootstrap == 0 || self.replications == 0 {
            return Err(Error::Config(
                "bootstrap and Monte Carlo replication counts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// The censoring/discretization map of the censored DGP.
pub fn censor_outcome(latent: f64) -> f64 {
    (latent + 1.0).ceil().max(0.0)
}

/// Generate one synthetic repeated cross-section: treatment Bernoulli(1/2),
/// the first half of the units in the pre period and the second half in the
/// post period.
pub fn gen_dgp<R: Rng>(config: &DgpConfig, rng: &mut R) -> Result<PanelDataset> {
    config.validate_data()?;
    let p = config.params;
    let mut observations = Vec::with_capacity(config.n);
    for i in 1..=config.n {
        let d = usize::from(rng.gen::<bool>());
        let t = i32::from(i > config.n / 2);
        let u = config.error.sample(rng);
        let latent = p.alpha + d as f64 * p.beta + t as f64 * p.gamma
            + (d as f64) * (t as f64) * p.delta
            + u;
        let y = match config.dgp {
            Dgp::Censored => censor_outcome(latent),
            Dgp::Continuous => latent,
        };
        observations.push(Observation {
            unit_id: format!("u{i}"),
            period: t,
            group: crate::data::Group::Label(d as i64),
            outcome: y,
            covariates: None,
        });
    }
    PanelDataset::from_observations(observations, vec![], DesignRequest::TwoPeriod)
}

/// Population DF of the untreated potential outcome of the treated group in
/// the post period, evaluated at a grid value.
pub fn true_counterfactual_cdf(config: &DgpConfig, y: f64) -> f64 {
    let p = config.params;
    let shift = p.alpha + p.beta + p.gamma;
    match config.dgp {
        Dgp::Continuous => config.error.cdf(y - shift),
        Dgp::Censored => {
            if y < 0.0 {
                0.0
            } else {
                config.error.cdf(y.floor() - 1.0 - shift)
            }
        }
    }
}

/// Population DF of the observed treated outcome in the post period.
pub fn true_treated_cdf(config: &DgpConfig, y: f64) -> f64 {
    let p = config.params;
    let shift = p.alpha + p.beta + p.gamma + p.delta;
    match config.dgp {
        Dgp::Continuous => config.error.cdf(y - shift),
        Dgp::Censored => {
            if y < 0.0 {
                0.0
            } else {
                config.error.cdf(y.floor() - 1.0 - shift)
            }
        }
    }
}

/// Data-generation stream of one Monte Carlo replication (for diagnostics).
pub fn data_stream(config: &DgpConfig, rep: usize) -> rand_chacha::ChaCha8Rng {
    rng::stream(config.seed, &[MC_DATA_TAG, rep as u64])
}

/// Bootstrap seed of one Monte Carlo replication (for diagnostics).
pub fn boot_seed(config: &DgpConfig, rep: usize) -> u64 {
    rng::derive(config.seed, &[MC_BOOT_TAG, rep as u64])
}

/// Point-estimate metrics of a single replication (no bootstrap).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PointMetrics {
    pub l2_dtt: f64,
    pub l2_cdf: f64,
    pub adtt: f64,
}

pub fn point_metrics(config: &DgpConfig, rep: usize) -> Result<PointMetrics> {
    let mut data_rng = rng::stream(config.seed, &[MC_DATA_TAG, rep as u64]);
    let data = gen_dgp(config, &mut data_rng)?;
    let grid = std::sync::Arc::new(build_grid(&data, &GridRule::SimulationRule)?);
    let est = crate::inference::estimate(
        &data,
        &EstimatorSpec::TwoPeriod,
        &config.regime,
        &grid,
        &PipelineOptions::default(),
    )?;
    let (l2_dtt, l2_cdf) = l2_metrics(config, &grid, &est.dtt.values, est.counterfactual.values());
    Ok(PointMetrics {
        l2_dtt,
        l2_cdf,
        adtt: est.adtt,
    })
}

fn l2_metrics(
    config: &DgpConfig,
    grid: &crate::ecdf::Grid,
    dtt_values: &[f64],
    cf_values: &[f64],
) -> (f64, f64) {
    let l = grid.len() as f64;
    let mut dtt_sq = 0.0;
    let mut cdf_sq = 0.0;
    for (i, &y) in grid.points().iter().enumerate() {
        let true_cf = true_counterfactual_cdf(config, y);
        let true_dtt = true_treated_cdf(config, y) - true_cf;
        dtt_sq += (dtt_values[i] - true_dtt).powi(2);
        cdf_sq += (cf_values[i] - true_cf).powi(2);
    }
    ((dtt_sq / l).sqrt(), (cdf_sq / l).sqrt())
}

/// Aggregated Monte Carlo metrics.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct McMetrics {
    pub replications: usize,
    /// Mean L2 distance of the DTT curve from the truth.
    pub l2_dtt: f64,
    /// Mean L2 distance of the counterfactual DF from the truth.
    pub l2_cdf: f64,
    /// 10% sup-t rejection rate of the zero-DTT null.
    pub rej_dtt: f64,
    /// 10% rejection rate of the scalar ADTT test.
    pub rej_adtt: f64,
    /// Mean bias of ADTT.
    pub mb_adtt: f64,
    /// Median absolute deviation of ADTT across replications.
    pub mad_adtt: f64,
    /// Fraction of replications whose 90% DTT band covers the zero function.
    pub dtt_band_zero_coverage: f64,
    /// Fraction of replications whose QTT intervals contain 0 at every tau.
    pub qtt_zero_coverage: f64,
}

/// Run the full Monte Carlo: per replication, generate data, build the grid,
/// estimate, bootstrap, test, and score against the analytic truth.
pub fn run_mc(config: &DgpConfig) -> Result<McMetrics> {
    config.validate()?;
    struct RepMetrics {
        l2_dtt: f64,
        l2_cdf: f64,
        rej_dtt: bool,
        rej_adtt: bool,
        adtt: f64,
        adtt_bias: f64,
        dtt_covers_zero: bool,
        qtt_covers_zero: bool,
    }

    let reps: Vec<RepMetrics> = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<RepMetrics> {
            let mut data_rng = rng::stream(config.seed, &[MC_DATA_TAG, rep as u64]);
            let data = gen_dgp(config, &mut data_rng)?;
            let grid = std::sync::Arc::new(build_grid(&data, &GridRule::SimulationRule)?);
            let plan = BootstrapPlan::new(
                BootScheme::Nonparametric,
                config.bootstrap,
                rng::derive(config.seed, &[MC_BOOT_TAG, rep as u64]),
                MC_LEVEL,
            )?;
            let out = band_pipeline(
                &data,
                &EstimatorSpec::TwoPeriod,
                &config.regime,
                &grid,
                &plan,
                &PipelineOptions::default(),
            )?;
            let (l2_dtt, l2_cdf) =
                l2_metrics(config, &grid, &out.dtt.values, out.counterfactual.values());
            let true_adtt = grid
                .points()
                .iter()
                .map(|&y| true_treated_cdf(config, y) - true_counterfactual_cdf(config, y))
                .sum::<f64>()
                / grid.len() as f64;
            let band = out.dtt.band.as_ref().expect("pipeline attaches a band");
            Ok(RepMetrics {
                l2_dtt,
                l2_cdf,
                rej_dtt: out.dtt_test.reject,
                rej_adtt: out.adtt_test.reject,
                adtt: out.adtt,
                adtt_bias: out.adtt - true_adtt,
                dtt_covers_zero: !band.excludes(0.0),
                qtt_covers_zero: out.qtt_intervals.iter().all(|iv| iv.contains(0.0)),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let r = reps.len() as f64;
    let mut adtts: Vec<f64> = reps.iter().map(|m| m.adtt).collect();
    adtts.sort_by(f64::total_cmp);
    let median = adtts[adtts.len() / 2];
    let mut devs: Vec<f64> = adtts.iter().map(|a| (a - median).abs()).collect();
    devs.sort_by(f64::total_cmp);
    let mad = devs[devs.len() / 2];

    Ok(McMetrics {
        replications: reps.len(),
        l2_dtt: reps.iter().map(|m| m.l2_dtt).sum::<f64>() / r,
        l2_cdf: reps.iter().map(|m| m.l2_cdf).sum::<f64>() / r,
        rej_dtt: reps.iter().filter(|m| m.rej_dtt).count() as f64 / r,
        rej_adtt: reps.iter().filter(|m| m.rej_adtt).count() as f64 / r,
        mb_adtt: reps.iter().map(|m| m.adtt_bias).sum::<f64>() / r,
        mad_adtt: mad,
        dtt_band_zero_coverage: reps.iter().filter(|m| m.dtt_covers_zero).count() as f64 / r,
        qtt_zero_coverage: reps.iter().filter(|m| m.qtt_covers_zero).count() as f64 / r,
    })
}
