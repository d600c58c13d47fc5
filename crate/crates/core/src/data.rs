//! In-memory panel data model and CSV ingestion.
//!
//! The sampling frame is a set of latent units observed in some subset of the
//! periods; presence indicators are derived from which (unit, period) pairs
//! actually carry an observation. Balanced panels, unbalanced panels, and
//! repeated cross-sections are all special cases.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

/// Treatment group label. In two-group designs the labels are 0 (control) and
/// 1 (treated); in staggered designs a label g >= 1 is the first treatment
/// period and `Never` is the never-treated control group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Label(i64),
    Never,
}

impl Group {
    pub const CONTROL: Group = Group::Label(0);
    pub const TREATED: Group = Group::Label(1);

    /// First treatment period implied by the label under the given design:
    /// in two-group designs the treated group adopts at period 1.
    pub fn adoption_period(self, design: TreatmentDesign) -> Option<i32> {
        match (self, design) {
            (Group::Never, _) => None,
            (Group::Label(g), TreatmentDesign::Staggered) => Some(g as i32),
            (Group::Label(1), _) => Some(1),
            (Group::Label(_), _) => None,
        }
    }
}

impl PartialOrd for Group {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Group {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        use Group::*;
        match (self, other) {
            (Label(a), Label(b)) => a.cmp(b),
            (Label(_), Never) => std::cmp::Ordering::Less,
            (Never, Label(_)) => std::cmp::Ordering::Greater,
            (Never, Never) => std::cmp::Ordering::Equal,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Group::Label(g) => write!(f, "{g}"),
            Group::Never => f.write_str("inf"),
        }
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.is_empty() || t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("never") {
            return Ok(Group::Never);
        }
        t.parse::<i64>()
            .map(Group::Label)
            .map_err(|_| Error::Domain(format!("invalid group label '{s}'")))
    }
}

impl Serialize for Group {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Group {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A single observed row.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit_id: String,
    pub period: i32,
    pub group: Group,
    pub outcome: f64,
    pub covariates: Option<Vec<f64>>,
}

/// Treatment-timing structure of the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TreatmentDesign {
    /// Two groups {0,1}, two periods {0,1}.
    TwoPeriod,
    /// Two groups {0,1}, pre-treatment periods < 0 and post periods >= 1.
    Nsmp,
    /// Adoption-period groups g >= 1 plus a never-treated control.
    Staggered,
}

/// Requested design when constructing a dataset; `Auto` infers it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignRequest {
    #[default]
    Auto,
    TwoPeriod,
    Nsmp,
    Staggered,
}

/// Sampling-scheme classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingScheme {
    BalancedPanel,
    UnbalancedPanel,
    RepeatedCrossSection,
}

/// Design summary: sampling scheme, pre/post period lists, and group labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignInfo {
    pub kind: SamplingScheme,
    pub design: TreatmentDesign,
    pub pre_periods: Vec<i32>,
    pub post_periods: Vec<i32>,
    pub groups: Vec<Group>,
}

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub unit: u32,
    pub period: i32,
    pub group: Group,
    pub outcome: f64,
    pub covariates: Option<Box<[f64]>>,
}

/// Immutable unit/period/group panel with derived presence structure.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    units: Vec<String>,
    rows: Vec<Row>,
    covariate_names: Vec<String>,
    design: TreatmentDesign,
    periods: Vec<i32>,
    groups: Vec<Group>,
    n_t: BTreeMap<i32, usize>,
    /// Row indices per (group, period), sorted by outcome.
    cells: BTreeMap<(Group, i32), Vec<u32>>,
    /// Periods each unit is observed in, sorted.
    unit_periods: Vec<Vec<i32>>,
}

impl PanelDataset {
    /// Build a dataset from observations, validating panel invariants and
    /// resolving the treatment design.
    pub fn from_observations(
        observations: Vec<Observation>,
        covariate_names: Vec<String>,
        request: DesignRequest,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n_cov = covariate_names.len();

        let mut unit_index: HashMap<String, u32> = HashMap::new();
        let mut units: Vec<String> = Vec::new();
        let mut unit_group: Vec<Group> = Vec::new();
        let mut seen: HashMap<(u32, i32), usize> = HashMap::new();
        let mut rows: Vec<Row> = Vec::with_capacity(observations.len());

        for (i, obs) in observations.into_iter().enumerate() {
            let row_no = i + 1;
            if !obs.outcome.is_finite() {
                return Err(Error::BadRow {
                    row: row_no,
                    message: format!("outcome {} is not finite", obs.outcome),
                });
            }
            match (&obs.covariates, n_cov) {
                (None, 0) => {}
                (Some(x), n) if x.len() == n => {
                    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
                        return Err(Error::BadRow {
                            row: row_no,
                            message: format!("covariate value {bad} is not finite"),
                        });
                    }
                }
                (x, n) => {
                    return Err(Error::BadRow {
                        row: row_no,
                        message: format!(
                            "expected {n} covariates, found {}",
                            x.as_ref().map_or(0, |v| v.len())
                        ),
                    });
                }
            }
            let unit = *unit_index.entry(obs.unit_id.clone()).or_insert_with(|| {
                units.push(obs.unit_id.clone());
                unit_group.push(obs.group);
                (units.len() - 1) as u32
            });
            if unit_group[unit as usize] != obs.group {
                return Err(Error::InconsistentGroup {
                    unit: obs.unit_id,
                    first: unit_group[unit as usize],
                    second: obs.group,
                });
            }
            if let Some(&first) = seen.get(&(unit, obs.period)) {
                let _ = first;
                return Err(Error::DuplicateObservation {
                    row: row_no,
                    unit: obs.unit_id,
                    period: obs.period,
                });
            }
            seen.insert((unit, obs.period), row_no);
            rows.push(Row {
                unit,
                period: obs.period,
                group: obs.group,
                outcome: obs.outcome,
                covariates: obs.covariates.map(Vec::into_boxed_slice),
            });
        }

        let mut periods: Vec<i32> = rows.iter().map(|r| r.period).collect();
        periods.sort_unstable();
        periods.dedup();
        let mut groups: Vec<Group> = rows.iter().map(|r| r.group).collect();
        groups.sort_unstable();
        groups.dedup();

        let design = resolve_design(request, &groups, &periods)?;
        if design == TreatmentDesign::TwoPeriod && periods != [0, 1] {
            // map the smaller of the two observed period labels to t = 0
            let lo = periods[0];
            let hi = periods[1];
            for r in &mut rows {
                r.period = if r.period == lo { 0 } else { 1 };
            }
            periods = vec![0, 1];
            let _ = hi;
        }
        validate_design(design, &groups, &periods)?;

        let mut n_t: BTreeMap<i32, usize> = BTreeMap::new();
        let mut cells: BTreeMap<(Group, i32), Vec<u32>> = BTreeMap::new();
        let mut unit_periods: Vec<Vec<i32>> = vec![Vec::new(); units.len()];
        for (i, r) in rows.iter().enumerate() {
            *n_t.entry(r.period).or_insert(0) += 1;
            cells.entry((r.group, r.period)).or_default().push(i as u32);
            unit_periods[r.unit as usize].push(r.period);
        }
        for list in cells.values_mut() {
            list.sort_by(|&a, &b| {
                rows[a as usize]
                    .outcome
                    .total_cmp(&rows[b as usize].outcome)
            });
        }
        for p in &mut unit_periods {
            p.sort_unstable();
        }

        Ok(PanelDataset {
            units,
            rows,
            covariate_names,
            design,
            periods,
            groups,
            n_t,
            cells,
            unit_periods,
        })
    }

    /// Number of distinct units.
    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    /// Pooled number of observations.
    pub fn n_total(&self) -> usize {
        self.rows.len()
    }

    /// Observations in a period.
    pub fn n_in_period(&self, period: i32) -> Option<usize> {
        self.n_t.get(&period).copied()
    }

    pub fn periods(&self) -> &[i32] {
        &self.periods
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn design(&self) -> TreatmentDesign {
        self.design
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.units
    }

    pub fn unit_index(&self, unit_id: &str) -> Option<usize> {
        self.units.iter().position(|u| u == unit_id)
    }

    /// Presence indicator S_jt.
    pub fn is_present(&self, unit_idx: usize, period: i32) -> bool {
        self.unit_periods
            .get(unit_idx)
            .is_some_and(|ps| ps.binary_search(&period).is_ok())
    }

    pub(crate) fn rows(&self) -> &[Row] {
        &self.rows
    }

    /// Row indices of a (group, period) cell, sorted by outcome.
    pub(crate) fn cell_rows(&self, group: Group, period: i32) -> Option<&[u32]> {
        self.cells.get(&(group, period)).map(Vec::as_slice)
    }

    /// All outcomes, in row order.
    pub fn outcomes(&self) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(|r| r.outcome)
    }

    /// Cell count and within-period share of a (group, period) cell. An
    /// empty cell yields `(0, 0.0)`; an absent period is an error.
    pub fn cell_stats(&self, group: Group, period: i32) -> Result<(usize, f64)> {
        let n_t = *self.n_t.get(&period).ok_or(Error::EmptyPeriod(period))?;
        let count = self.cells.get(&(group, period)).map_or(0, Vec::len);
        Ok((count, count as f64 / n_t as f64))
    }

    /// Classify the sampling scheme and summarise the design.
    pub fn detect_design(&self) -> DesignInfo {
        let every_unit_once = self.unit_periods.iter().all(|p| p.len() == 1);
        let balanced = self
            .unit_periods
            .iter()
            .all(|p| p.len() == self.periods.len());
        let kind = if every_unit_once && self.periods.len() > 1 {
            SamplingScheme::RepeatedCrossSection
        } else if balanced {
            SamplingScheme::BalancedPanel
        } else {
            SamplingScheme::UnbalancedPanel
        };
        let (pre, post): (Vec<i32>, Vec<i32>) = match self.design {
            TreatmentDesign::TwoPeriod => (vec![0], vec![1]),
            _ => (
                self.periods.iter().copied().filter(|&t| t < 0).collect(),
                self.periods.iter().copied().filter(|&t| t > 0).collect(),
            ),
        };
        DesignInfo {
            kind,
            design: self.design,
            pre_periods: pre,
            post_periods: post,
            groups: self.groups.clone(),
        }
    }

    /// Serialize to CSV with the default schema. Inverse of `load_csv`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "id,time,group,y")?;
        for c in &self.covariate_names {
            write!(w, ",{c}")?;
        }
        writeln!(w)?;
        for r in &self.rows {
            write!(
                w,
                "{},{},{},{}",
                self.units[r.unit as usize], r.period, r.group, r.outcome
            )?;
            if let Some(x) = &r.covariates {
                for v in x.iter() {
                    write!(w, ",{v}")?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

fn resolve_design(
    request: DesignRequest,
    groups: &[Group],
    periods: &[i32],
) -> Result<TreatmentDesign> {
    let has_never = groups.contains(&Group::Never);
    match request {
        DesignRequest::TwoPeriod => {
            if periods.len() != 2 {
                return Err(Error::InvalidPanel(format!(
                    "two-period design requires exactly 2 distinct periods, found {}",
                    periods.len()
                )));
            }
            Ok(TreatmentDesign::TwoPeriod)
        }
        DesignRequest::Nsmp => Ok(TreatmentDesign::Nsmp),
        DesignRequest::Staggered => Ok(TreatmentDesign::Staggered),
        DesignRequest::Auto => {
            if has_never {
                Ok(TreatmentDesign::Staggered)
            } else if periods.len() == 2 {
                Ok(TreatmentDesign::TwoPeriod)
            } else {
                Ok(TreatmentDesign::Nsmp)
            }
        }
    }
}

fn validate_design(design: TreatmentDesign, groups: &[Group], periods: &[i32]) -> Result<()> {
    match design {
        TreatmentDesign::TwoPeriod => {
            for g in groups {
                if !matches!(g, Group::Label(0) | Group::Label(1)) {
                    return Err(Error::InvalidPanel(format!(
                        "two-period design requires group labels 0/1, found {g}"
                    )));
                }
            }
        }
        TreatmentDesign::Nsmp => {
            for g in groups {
                if !matches!(g, Group::Label(0) | Group::Label(1)) {
                    return Err(Error::InvalidPanel(format!(
                        "non-staggered design requires group labels 0/1, found {g}"
                    )));
                }
            }
            if periods.contains(&0) {
                return Err(Error::InvalidPanel(
                    "period 0 is reserved in multi-period designs".into(),
                ));
            }
            if !periods.iter().any(|&t| t < 0) || !periods.iter().any(|&t| t > 0) {
                return Err(Error::InvalidPanel(
                    "non-staggered multi-period design needs at least one pre (t < 0) and one post (t >= 1) period"
                        .into(),
                ));
            }
        }
        TreatmentDesign::Staggered => {
            if periods.contains(&0) {
                return Err(Error::InvalidPanel(
                    "period 0 is reserved in multi-period designs".into(),
                ));
            }
            if !groups.contains(&Group::Never) {
                return Err(Error::InvalidPanel(
                    "staggered design requires a never-treated group ('inf')".into(),
                ));
            }
            for g in groups {
                if let Group::Label(l) = g {
                    if *l < 1 {
                        return Err(Error::InvalidPanel(format!(
                            "staggered group labels must be first-treatment periods >= 1, found {l}"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

/// Column mapping and design request used by `load_csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub time: String,
    pub group: String,
    pub outcome: String,
    pub covariates: Vec<String>,
    #[serde(default)]
    pub design: DesignRequest,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            time: "time".into(),
            group: "group".into(),
            outcome: "y".into(),
            covariates: Vec::new(),
            design: DesignRequest::Auto,
        }
    }
}

/// Load a dataset from a headered CSV file using the given column mapping.
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<PanelDataset> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_csv_reader(file, schema)
}

/// Same as `load_csv`, reading from any source.
pub fn load_csv_reader<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::InvalidPanel(format!("cannot read CSV header: {e}")))?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col(&schema.id)?;
    let time_col = col(&schema.time)?;
    let group_col = col(&schema.group)?;
    let y_col = col(&schema.outcome)?;
    let cov_cols: Vec<usize> = schema
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let mut observations = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row_no = i + 2; // header is line 1
        let record = record.map_err(|e| Error::BadRow {
            row: row_no,
            message: e.to_string(),
        })?;
        let field = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| Error::BadRow {
                row: row_no,
                message: format!("missing field {idx}"),
            })
        };
        let y_raw = field(y_col)?;
        if y_raw.is_empty() {
            return Err(Error::BadRow {
                row: row_no,
                message: "missing outcome value".into(),
            });
        }
        let outcome: f64 = y_raw.parse().map_err(|_| Error::BadRow {
            row: row_no,
            message: format!("cannot parse outcome '{y_raw}'"),
        })?;
        let period: i32 = field(time_col)?.parse().map_err(|_| Error::BadRow {
            row: row_no,
            message: format!("cannot parse period '{}'", field(time_col).unwrap_or("")),
        })?;
        let group: Group = field(group_col)?.parse().map_err(|e| Error::BadRow {
            row: row_no,
            message: format!("{e}"),
        })?;
        let covariates = if cov_cols.is_empty() {
            None
        } else {
            let mut x = Vec::with_capacity(cov_cols.len());
            for (&c, name) in cov_cols.iter().zip(&schema.covariates) {
                let raw = field(c)?;
                if raw.is_empty() {
                    return Err(Error::BadRow {
                        row: row_no,
                        message: format!("missing covariate '{name}'"),
                    });
                }
                x.push(raw.parse::<f64>().map_err(|_| Error::BadRow {
                    row: row_no,
                    message: format!("cannot parse covariate '{name}' value '{raw}'"),
                })?);
            }
            Some(x)
        };
        observations.push(Observation {
            unit_id: field(id_col)?.to_string(),
            period,
            group,
            outcome,
            covariates,
        });
    }
    PanelDataset::from_observations(observations, schema.covariates.clone(), schema.design)
}
