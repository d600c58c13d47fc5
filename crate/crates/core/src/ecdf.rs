//! Outcome grids and step distribution functions.
//!
//! A `StepDf` holds a distribution-function estimate evaluated on a finite
//! outcome grid; it is the currency every estimation and inference stage
//! trades in. Empirical CDFs are nondecreasing by construction; counterfactual
//! DFs need not be, so monotonicity is carried as a flag.

use crate::data::{Group, PanelDataset};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Strictly increasing finite evaluation grid plus the supremum of the
/// observed support (the fallback value for quantiles past the top of the DF).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    sup_y: f64,
}

impl Grid {
    pub fn new(points: Vec<f64>, sup_y: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if points.iter().any(|p| !p.is_finite())
            || points.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::GridNotIncreasing);
        }
        let last = *points.last().unwrap();
        Ok(Grid {
            points,
            sup_y: sup_y.max(last),
        })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sup_y(&self) -> f64 {
        self.sup_y
    }
}

/// Rule for constructing the evaluation grid from the pooled outcomes.
#[derive(Debug, Clone, PartialEq)]
pub enum GridRule {
    /// All distinct outcome values.
    AllUnique,
    /// Distinct values minus the two largest realisations and minus values
    /// above the pooled empirical 90th percentile.
    SimulationRule,
    /// A user-supplied strictly increasing list.
    Explicit(Vec<f64>),
}

/// Type-1 (inverted ECDF) empirical quantile: smallest order statistic whose
/// ECDF value reaches `p`.
pub(crate) fn empirical_quantile_type1(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Build the outcome grid from the pooled sample.
pub fn build_grid(data: &PanelDataset, rule: &GridRule) -> Result<Grid> {
    let mut outcomes: Vec<f64> = data.outcomes().collect();
    if outcomes.is_empty() {
        return Err(Error::EmptyDataset);
    }
    outcomes.sort_by(f64::total_cmp);
    let sup_y = *outcomes.last().unwrap();
    match rule {
        GridRule::AllUnique => {
            let mut points = outcomes;
            points.dedup();
            Grid::new(points, sup_y)
        }
        GridRule::SimulationRule => {
            let q90 = empirical_quantile_type1(&outcomes, 0.9);
            let n = outcomes.len();
            // drop the two largest realisations, then values above q90
            let kept = &outcomes[..n.saturating_sub(2)];
            let mut points: Vec<f64> = kept.iter().copied().filter(|&y| y <= q90).collect();
            points.dedup();
            if points.is_empty() {
                return Err(Error::EmptyGrid);
            }
            Grid::new(points, sup_y)
        }
        GridRule::Explicit(points) => Grid::new(points.clone(), sup_y),
    }
}

/// A distribution-function estimate on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDf {
    grid: Arc<Grid>,
    values: Vec<f64>,
    label: String,
    monotone: bool,
    cell_n: Option<usize>,
}

impl StepDf {
    pub fn new(grid: Arc<Grid>, values: Vec<f64>, label: impl Into<String>, monotone: bool) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch);
        }
        Ok(StepDf {
            grid,
            values,
            label: label.into(),
            monotone,
            cell_n: None,
        })
    }

    pub(crate) fn with_cell_n(mut self, n: usize) -> Self {
        self.cell_n = Some(n);
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// True when the values are nondecreasing by construction or by check.
    pub fn monotone(&self) -> bool {
        self.monotone
    }

    /// Number of observations behind an empirical cell DF, when known.
    pub fn cell_n(&self) -> Option<usize> {
        self.cell_n
    }

    pub fn same_grid(&self, other: &StepDf) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid == other.grid
    }

    /// Serialize as `y,value` CSV.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("y,value\n");
        for (y, v) in self.grid.points().iter().zip(&self.values) {
            s.push_str(&format!("{y},{v}\n"));
        }
        s
    }

    /// Parse a `y,value` CSV produced by `to_csv_string`. The supremum of the
    /// support is not part of the serialization; it defaults to the last grid
    /// point unless supplied.
    pub fn from_csv_str(text: &str, label: impl Into<String>, sup_y: Option<f64>) -> Result<Self> {
        let mut points = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 {
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let y: f64 = it
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::BadRow {
                    row: i + 1,
                    message: "cannot parse grid point".into(),
                })?;
            let v: f64 = it
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::BadRow {
                    row: i + 1,
                    message: "cannot parse value".into(),
                })?;
            points.push(y);
            values.push(v);
        }
        let sup = sup_y.unwrap_or(*points.last().ok_or(Error::EmptyGrid)?);
        let grid = Arc::new(Grid::new(points, sup)?);
        let monotone = values.windows(2).all(|w| w[0] <= w[1]);
        StepDf::new(grid, values, label, monotone)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Dto<'a> {
            grid: &'a Grid,
            values: &'a [f64],
            label: &'a str,
            monotone: bool,
        }
        serde_json::to_string(&Dto {
            grid: &self.grid,
            values: &self.values,
            label: &self.label,
            monotone: self.monotone,
        })
        .expect("StepDf serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Dto {
            grid: Grid,
            values: Vec<f64>,
            label: String,
            monotone: bool,
        }
        let dto: Dto =
            serde_json::from_str(text).map_err(|e| Error::Domain(format!("bad StepDf JSON: {e}")))?;
        StepDf::new(Arc::new(dto.grid), dto.values, dto.label, dto.monotone)
    }
}

/// ECDF of one (group, period) cell evaluated on the grid.
pub fn group_period_ecdf(
    data: &PanelDataset,
    group: Group,
    period: i32,
    grid: &Arc<Grid>,
) -> Result<StepDf> {
    let rows = data
        .cell_rows(group, period)
        .filter(|r| !r.is_empty())
        .ok_or(Error::EmptyCell { group, period })?;
    let mut values = vec![0.0; grid.len()];
    cell_ecdf_unit_weights(data, rows, None, grid.points(), &mut values)
        .ok_or(Error::EmptyCell { group, period })?;
    Ok(
        StepDf::new(grid.clone(), values, format!("F[{group},{period}]"), true)?
            .with_cell_n(rows.len()),
    )
}

/// Weighted cell ECDF sharing one code path with the unweighted estimate:
/// `weights` maps unit index -> weight (all ones when `None`). Returns the
/// total cell weight, or `None` when it is not strictly positive.
pub(crate) fn cell_ecdf_unit_weights(
    data: &PanelDataset,
    sorted_rows: &[u32],
    weights: Option<&[f64]>,
    grid_points: &[f64],
    out: &mut [f64],
) -> Option<f64> {
    debug_assert_eq!(grid_points.len(), out.len());
    let rows = data.rows();
    let mut total = 0.0;
    match weights {
        None => total = sorted_rows.len() as f64,
        Some(w) => {
            for &r in sorted_rows {
                total += w[rows[r as usize].unit as usize];
            }
        }
    }
    if !(total > 0.0) {
        return None;
    }
    let mut cum = 0.0;
    let mut i = 0usize;
    for (l, &y) in grid_points.iter().enumerate() {
        while i < sorted_rows.len() && rows[sorted_rows[i] as usize].outcome <= y {
            cum += match weights {
                None => 1.0,
                Some(w) => w[rows[sorted_rows[i] as usize].unit as usize],
            };
            i += 1;
        }
        out[l] = cum / total;
    }
    Some(total)
}
