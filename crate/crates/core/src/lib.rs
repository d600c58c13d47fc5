//! Distribution and quantile treatment effects on the treated via
//! difference-in-differences on working CDFs.
//!
//! The estimand machinery models the distribution function of untreated
//! potential outcomes through a known strictly increasing working CDF applied
//! to an additive index in group and time, separately at each outcome level.
//! That identifies the counterfactual DF of the treated group for discrete,
//! mixed, or continuous outcomes, under two-group, non-staggered
//! multi-period, and staggered adoption designs with balanced panels,
//! unbalanced panels, or repeated cross-sections.
//!
//! Inference runs through a unit-level (cluster) bootstrap: uniform sup-t
//! confidence bands for the DFs and the DTT curve, quantile-function bands by
//! inverting the DF bands, and QTT bands by Minkowski differencing, which
//! stay valid when outcomes are discrete and the quantile map is not smooth.
//!
//! Modules follow the pipeline: [`data`] ingests panels, [`ecdf`] builds
//! grids and cell ECDFs, [`links`] supplies the working CDFs, [`identify`]
//! assembles counterfactual DFs, [`aggregate`] averages over period pairs and
//! adoption groups, [`effects`] turns DFs into DTT/QTT curves, [`inference`]
//! runs the bootstrap pipeline, [`drcov`] adds covariate-conditional
//! identification via distribution regression, and [`simlab`] hosts the
//! Monte Carlo harness.

pub mod aggregate;
pub mod data;
pub mod drcov;
pub mod ecdf;
pub mod effects;
mod error;
pub mod identify;
pub mod inference;
pub mod links;
mod rng;
pub mod simlab;

pub use error::{Error, ErrorCategory, Result};
