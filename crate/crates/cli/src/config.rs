//! Run configuration: TOML file merged with command-line flags (flags win).

use distdid::aggregate::explicit_weights;
use distdid::data::{CsvSchema, DesignRequest, Group};
use distdid::drcov::{Dictionary, DrSpec};
use distdid::ecdf::GridRule;
use distdid::effects::AdttRule;
use distdid::identify::{ClipPolicy, LinkRegime, Theta};
use distdid::inference::{BootScheme, MultiplierDist, WeightSpec};
use distdid::links::Link;
use distdid::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

/// Fully resolved estimation configuration. Everything here participates in
/// the config hash; the thread count deliberately does not.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub data: String,
    pub id_col: String,
    pub time_col: String,
    pub group_col: String,
    pub y_col: String,
    pub covariates: Vec<String>,
    pub design: String,
    pub theta: String,
    pub link: String,
    pub links: BTreeMap<String, String>,
    pub grid: String,
    pub grid_points: Vec<f64>,
    pub taus: Vec<f64>,
    pub aggregate: String,
    pub dictionary: String,
    pub boot: usize,
    pub seed: u64,
    pub level: f64,
    pub scheme: String,
    pub clip: String,
    pub monotonize: bool,
    pub adtt: String,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        EstimateConfig {
            data: String::new(),
            id_col: "id".into(),
            time_col: "time".into(),
            group_col: "group".into(),
            y_col: "y".into(),
            covariates: Vec::new(),
            design: "auto".into(),
            theta: "group".into(),
            link: "normal".into(),
            links: BTreeMap::new(),
            grid: "all".into(),
            grid_points: Vec::new(),
            taus: distdid::effects::default_taus(),
            aggregate: "equal".into(),
            dictionary: "linear".into(),
            boot: 999,
            seed: 0,
            level: 0.90,
            scheme: "nonparam".into(),
            clip: "auto".into(),
            monotonize: false,
            adtt: "mean".into(),
        }
    }
}

/// Optional-field mirror of `EstimateConfig` for the TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<String>,
    pub id_col: Option<String>,
    pub time_col: Option<String>,
    pub group_col: Option<String>,
    pub y_col: Option<String>,
    pub covariates: Option<Vec<String>>,
    pub design: Option<String>,
    pub theta: Option<String>,
    pub link: Option<String>,
    pub links: Option<BTreeMap<String, String>>,
    pub grid: Option<String>,
    pub grid_points: Option<Vec<f64>>,
    pub taus: Option<Vec<f64>>,
    pub aggregate: Option<String>,
    pub dictionary: Option<String>,
    pub boot: Option<usize>,
    pub seed: Option<u64>,
    pub level: Option<f64>,
    pub scheme: Option<String>,
    pub clip: Option<String>,
    pub monotonize: Option<bool>,
    pub adtt: Option<String>,
    /// Accepted in files for convenience; never hashed or echoed.
    #[serde(default)]
    pub threads: Option<usize>,
}

impl EstimateConfig {
    pub fn apply_file(&mut self, file: FileConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = file.$f { self.$f = v; } )* };
        }
        take!(
            data, id_col, time_col, group_col, y_col, covariates, design, theta, link, links,
            grid, grid_points, taus, aggregate, dictionary, boot, seed, level, scheme, clip,
            monotonize, adtt
        );
    }

    pub fn schema(&self) -> Result<CsvSchema> {
        Ok(CsvSchema {
            id: self.id_col.clone(),
            time: self.time_col.clone(),
            group: self.group_col.clone(),
            outcome: self.y_col.clone(),
            covariates: self.covariates.clone(),
            design: parse_design(&self.design)?,
        })
    }

    pub fn regime(&self) -> Result<LinkRegime> {
        let theta = parse_theta(&self.theta)?;
        let default: Link = self.link.parse()?;
        let mut regime = match theta {
            Theta::GroupIndexed => {
                let mut map = BTreeMap::new();
                for (k, v) in &self.links {
                    let g: Group = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad group label '{k}' in links")))?;
                    map.insert(g, v.parse::<Link>()?);
                }
                LinkRegime::group_indexed(map)
            }
            Theta::TimeIndexed => {
                let mut map = BTreeMap::new();
                for (k, v) in &self.links {
                    let t: i32 = k
                        .parse()
                        .map_err(|_| Error::Config(format!("bad period '{k}' in links")))?;
                    map.insert(t, v.parse::<Link>()?);
                }
                LinkRegime::time_indexed(map)
            }
        };
        regime = regime.with_default(default);
        Ok(regime)
    }

    pub fn grid_rule(&self) -> Result<GridRule> {
        match self.grid.as_str() {
            "all" => Ok(GridRule::AllUnique),
            "sim" => Ok(GridRule::SimulationRule),
            "explicit" => {
                if self.grid_points.is_empty() {
                    return Err(Error::Config(
                        "grid = \"explicit\" requires grid_points".into(),
                    ));
                }
                Ok(GridRule::Explicit(self.grid_points.clone()))
            }
            other => {
                if let Some(points) = other.strip_prefix("explicit:") {
                    return Ok(GridRule::Explicit(parse_f64_list(points)?));
                }
                Err(Error::Config(format!(
                    "unknown grid rule '{other}' (expected all, sim, explicit)"
                )))
            }
        }
    }

    pub fn clip_policy(&self) -> Result<ClipPolicy> {
        match self.clip.as_str() {
            "auto" => Ok(ClipPolicy::Auto),
            "none" => Ok(ClipPolicy::Disabled),
            other => {
                let eps: f64 = other.parse().map_err(|_| {
                    Error::Config(format!("clip must be auto, none, or a number, got '{other}'"))
                })?;
                Ok(ClipPolicy::Fixed(eps))
            }
        }
    }

    pub fn adtt_rule(&self) -> Result<AdttRule> {
        match self.adtt.as_str() {
            "mean" => Ok(AdttRule::GridMean),
            "trapezoid" => Ok(AdttRule::Trapezoid),
            other => Err(Error::Config(format!(
                "adtt must be mean or trapezoid, got '{other}'"
            ))),
        }
    }

    pub fn boot_scheme(&self) -> Result<BootScheme> {
        parse_scheme(&self.scheme)
    }

    pub fn weight_spec(&self) -> Result<WeightSpec> {
        let agg = self.aggregate.trim();
        if agg == "equal" {
            return Ok(WeightSpec::EqualAll);
        }
        if let Some(e) = agg.strip_prefix("event:") {
            let e: u32 = e
                .parse()
                .map_err(|_| Error::Config(format!("bad event horizon in '{agg}'")))?;
            return Ok(WeightSpec::EventStudy(e));
        }
        if let Some(g) = agg.strip_prefix("group:") {
            let g: Group = g
                .parse()
                .map_err(|_| Error::Config(format!("bad group label in '{agg}'")))?;
            return Ok(WeightSpec::EqualGroup(g));
        }
        if let Some(path) = agg.strip_prefix("file:") {
            return Ok(WeightSpec::Explicit(load_weights_csv(Path::new(path))?));
        }
        Err(Error::Config(format!(
            "aggregate must be equal, event:<e>, group:<g>, or file:<path>, got '{agg}'"
        )))
    }

    pub fn dictionary(&self) -> Result<Dictionary> {
        match self.dictionary.as_str() {
            "linear" => Ok(Dictionary::Linear),
            "quadratic" => Ok(Dictionary::Quadratic),
            other => Err(Error::Config(format!(
                "dictionary must be linear or quadratic, got '{other}'"
            ))),
        }
    }

    pub fn dr_spec(&self) -> Result<DrSpec> {
        Ok(DrSpec::new(self.dictionary()?, self.regime()?))
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_empty() {
            return Err(Error::Config("no data file given (--data or config)".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level {} must lie in (0, 1)",
                self.level
            )));
        }
        if self.taus.is_empty()
            || self.taus.windows(2).any(|w| w[0] >= w[1])
            || self.taus.iter().any(|t| !(0.0..=1.0).contains(t))
        {
            return Err(Error::Config(
                "taus must be strictly increasing probabilities".into(),
            ));
        }
        self.schema()?;
        self.regime()?;
        self.grid_rule()?;
        self.clip_policy()?;
        self.adtt_rule()?;
        self.boot_scheme()?;
        self.weight_spec()?;
        self.dictionary()?;
        Ok(())
    }
}

pub fn parse_design(s: &str) -> Result<DesignRequest> {
    match s {
        "auto" => Ok(DesignRequest::Auto),
        "two-period" => Ok(DesignRequest::TwoPeriod),
        "nsmp" => Ok(DesignRequest::Nsmp),
        "staggered" => Ok(DesignRequest::Staggered),
        other => Err(Error::Config(format!(
            "design must be auto, two-period, nsmp, or staggered, got '{other}'"
        ))),
    }
}

pub fn parse_theta(s: &str) -> Result<Theta> {
    match s {
        "group" => Ok(Theta::GroupIndexed),
        "time" => Ok(Theta::TimeIndexed),
        other => Err(Error::Config(format!(
            "theta must be group or time, got '{other}'"
        ))),
    }
}

pub fn parse_scheme(s: &str) -> Result<BootScheme> {
    match s {
        "nonparam" => Ok(BootScheme::Nonparametric),
        "rademacher" => Ok(BootScheme::Multiplier(MultiplierDist::Rademacher)),
        "normal" => Ok(BootScheme::Multiplier(MultiplierDist::StdNormal)),
        "mammen" => Ok(BootScheme::Multiplier(MultiplierDist::Mammen)),
        other => Err(Error::Config(format!(
            "scheme must be nonparam, rademacher, normal, or mammen, got '{other}'"
        ))),
    }
}

pub fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot parse number '{p}'")))
        })
        .collect()
}

/// `a:b:step` ranges or comma lists of probabilities.
pub fn parse_taus(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let a = f64::from_str(parts[0])
            .map_err(|_| Error::Config(format!("bad tau range '{s}'")))?;
        let b = f64::from_str(parts[1])
            .map_err(|_| Error::Config(format!("bad tau range '{s}'")))?;
        let step = f64::from_str(parts[2])
            .map_err(|_| Error::Config(format!("bad tau range '{s}'")))?;
        if step <= 0.0 || b < a {
            return Err(Error::Config(format!("bad tau range '{s}'")));
        }
        let mut taus = Vec::new();
        let mut k = 0usize;
        loop {
            let t = a + k as f64 * step;
            if t > b + 1e-12 {
                break;
            }
            taus.push(t);
            k += 1;
        }
        return Ok(taus);
    }
    parse_f64_list(s)
}

/// `g,tpre,tpost,weight` CSV for explicit weighting schemes.
pub fn load_weights_csv(path: &Path) -> Result<distdid::aggregate::WeightScheme> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::BadRow {
                row: i + 1,
                message: "expected g,tpre,tpost,weight".into(),
            });
        }
        let g: Group = fields[0].parse().map_err(|_| Error::BadRow {
            row: i + 1,
            message: format!("bad group '{}'", fields[0]),
        })?;
        let parse_i32 = |s: &str| -> Result<i32> {
            s.parse().map_err(|_| Error::BadRow {
                row: i + 1,
                message: format!("bad period '{s}'"),
            })
        };
        let w: f64 = fields[3].parse().map_err(|_| Error::BadRow {
            row: i + 1,
            message: format!("bad weight '{}'", fields[3]),
        })?;
        entries.push((g, parse_i32(fields[1])?, parse_i32(fields[2])?, w));
    }
    explicit_weights(entries)
}
