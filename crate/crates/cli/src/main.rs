//! `distdid`: distribution and quantile treatment effects on the treated by
//! difference-in-differences on working CDFs, with uniform bootstrap bands.
//!
//! Two subcommands: `estimate` runs the full pipeline on a CSV panel and
//! writes curve files plus a JSON summary; `simulate` runs the Monte Carlo
//! harness and writes a metrics table.
//!
//! Exit codes: 2 configuration error, 3 data error, 4 identification error
//! (an empty required cell), 5 numerical failure.

mod config;
mod output;

use clap::{Args, Parser, Subcommand};
use config::{parse_f64_list, parse_taus, EstimateConfig, FileConfig};
use distdid::data::{load_csv, TreatmentDesign};
use distdid::ecdf::build_grid;
use distdid::identify::{CfOptions, LinkRegime};
use distdid::inference::{band_pipeline, BootstrapPlan, EstimatorSpec, PipelineOptions};
use distdid::simlab::{run_mc, Dgp, DgpConfig, DgpParams, ErrorDist};
use distdid::{Error, ErrorCategory};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "distdid", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate DTT/QTT with uniform confidence bands from a CSV panel.
    Estimate(EstimateArgs),
    /// Run the Monte Carlo harness and write a metrics table.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input CSV (columns id,time,group,y by default).
    #[arg(long)]
    data: Option<String>,
    /// Output directory for curves and the JSON summary.
    #[arg(long, default_value = "distdid-out")]
    out: PathBuf,
    #[arg(long)]
    id_col: Option<String>,
    #[arg(long)]
    time_col: Option<String>,
    #[arg(long)]
    group_col: Option<String>,
    #[arg(long)]
    y_col: Option<String>,
    /// Comma-separated covariate column names.
    #[arg(long)]
    covariates: Option<String>,
    /// auto | two-period | nsmp | staggered
    #[arg(long)]
    design: Option<String>,
    /// group | time
    #[arg(long)]
    theta: Option<String>,
    /// Default link: normal | logistic | cauchy | uniform | identity.
    #[arg(long)]
    link: Option<String>,
    /// Per-group or per-period links, e.g. "0=normal,1=logistic".
    #[arg(long)]
    links: Option<String>,
    /// all | sim | explicit:<p1,p2,...>
    #[arg(long)]
    grid: Option<String>,
    /// Probability grid: comma list or a:b:step.
    #[arg(long)]
    taus: Option<String>,
    /// equal | event:<e> | group:<g> | file:<path>
    #[arg(long)]
    aggregate: Option<String>,
    /// linear | quadratic
    #[arg(long)]
    dictionary: Option<String>,
    /// Bootstrap replications.
    #[arg(long)]
    boot: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Joint coverage level of the bands.
    #[arg(long)]
    level: Option<f64>,
    /// nonparam | rademacher | normal | mammen
    #[arg(long)]
    scheme: Option<String>,
    /// auto | none | <eps>
    #[arg(long)]
    clip: Option<String>,
    /// Monotonize the counterfactual DF by a running max.
    #[arg(long)]
    monotonize: bool,
    /// mean | trapezoid
    #[arg(long)]
    adtt: Option<String>,
    /// Worker threads (0 = all cores). Does not affect results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SimulateArgs {
    /// 1 = censored/discretized outcomes, 2 = continuous outcomes.
    #[arg(long)]
    dgp: u8,
    /// normal | ald:<kappa>
    #[arg(long, default_value = "normal")]
    error: String,
    /// Comma-separated sample sizes, one table row each.
    #[arg(long)]
    n: String,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    #[arg(long, default_value_t = 499)]
    boot: usize,
    /// Working CDF used by the estimator.
    #[arg(long, default_value = "normal")]
    link: String,
    /// group | time
    #[arg(long, default_value = "group")]
    theta: String,
    /// Interaction coefficient of the generating model (0 = null effect).
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV table.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads (0 = all cores). Does not affect results.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Estimate(args) => run_estimate(args),
        Command::Simulate(args) => run_simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e.category() {
                ErrorCategory::Config => 2,
                ErrorCategory::Data => 3,
                ErrorCategory::Identification => 4,
                ErrorCategory::Numerical => 5,
            };
            ExitCode::from(code)
        }
    }
}

fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> distdid::Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
    Ok(pool.install(f))
}

fn merge_estimate_config(args: &EstimateArgs) -> distdid::Result<(EstimateConfig, usize)> {
    let mut cfg = EstimateConfig::default();
    let mut file_threads = 0usize;
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let file: FileConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse config file: {e}")))?;
        file_threads = file.threads.unwrap_or(0);
        cfg.apply_file(file);
    }
    macro_rules! flag {
        ($($f:ident),*) => { $( if let Some(v) = &args.$f { cfg.$f = v.clone(); } )* };
    }
    flag!(data, id_col, time_col, group_col, y_col, design, theta, link, grid, aggregate, dictionary, clip, adtt);
    if let Some(v) = args.boot {
        cfg.boot = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.level {
        cfg.level = v;
    }
    if let Some(v) = &args.scheme {
        cfg.scheme = v.clone();
    }
    if args.monotonize {
        cfg.monotonize = true;
    }
    if let Some(v) = &args.covariates {
        cfg.covariates = v.split(',').map(|s| s.trim().to_string()).collect();
    }
    if let Some(v) = &args.taus {
        cfg.taus = parse_taus(v)?;
    }
    if let Some(v) = &args.links {
        cfg.links = v
            .split(',')
            .map(|pair| {
                let (k, val) = pair
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("bad links entry '{pair}'")))?;
                Ok((k.trim().to_string(), val.trim().to_string()))
            })
            .collect::<distdid::Result<_>>()?;
    }
    // compact explicit grids like "explicit:0,0.25,..." are normalized into
    // the grid_points list so the config echo is canonical
    let grid_str = cfg.grid.clone();
    if let Some(points) = grid_str.strip_prefix("explicit:") {
        cfg.grid_points = parse_f64_list(points)?;
        cfg.grid = "explicit".into();
    }
    cfg.validate()?;
    let threads = if args.threads != 0 {
        args.threads
    } else {
        file_threads
    };
    Ok((cfg, threads))
}

fn estimator_spec(
    cfg: &EstimateConfig,
    design: TreatmentDesign,
) -> distdid::Result<EstimatorSpec> {
    if !cfg.covariates.is_empty() {
        if design != TreatmentDesign::TwoPeriod {
            return Err(Error::Config(
                "covariates are supported in the two-period design only".into(),
            ));
        }
        return Ok(EstimatorSpec::TwoPeriodCovariates { dr: cfg.dr_spec()? });
    }
    Ok(match design {
        TreatmentDesign::TwoPeriod => EstimatorSpec::TwoPeriod,
        TreatmentDesign::Nsmp => EstimatorSpec::Nsmp {
            weights: cfg.weight_spec()?,
        },
        TreatmentDesign::Staggered => EstimatorSpec::Staggered {
            weights: cfg.weight_spec()?,
        },
    })
}

fn run_estimate(args: EstimateArgs) -> distdid::Result<()> {
    let (cfg, threads) = merge_estimate_config(&args)?;
    let data = load_csv(Path::new(&cfg.data), &cfg.schema()?)?;
    let design = data.detect_design();
    let spec = estimator_spec(&cfg, design.design)?;
    let regime = cfg.regime()?;
    let grid = Arc::new(build_grid(&data, &cfg.grid_rule()?)?);
    let plan = BootstrapPlan::new(cfg.boot_scheme()?, cfg.boot, cfg.seed, cfg.level)?;
    for w in plan.warnings() {
        eprintln!("warning: {w}");
    }
    let opts = PipelineOptions {
        cf: CfOptions {
            clip: cfg.clip_policy()?,
            monotonize: cfg.monotonize,
        },
        taus: cfg.taus.clone(),
        adtt_rule: cfg.adtt_rule()?,
    };
    let result = with_threads(threads, || {
        band_pipeline(&data, &spec, &regime, &grid, &plan, &opts)
    })??;
    let summary = output::write_estimate_outputs(&args.out, &cfg, &data, &design, &result)?;
    println!("{summary}");
    Ok(())
}

fn parse_error_dist(s: &str) -> distdid::Result<ErrorDist> {
    if s == "normal" {
        return Ok(ErrorDist::StdNormal);
    }
    if let Some(kappa) = s.strip_prefix("ald:") {
        let kappa: f64 = kappa
            .parse()
            .map_err(|_| Error::Config(format!("bad ALD skew in '{s}'")))?;
        return Ok(ErrorDist::Ald { kappa });
    }
    Err(Error::Config(format!(
        "error must be normal or ald:<kappa>, got '{s}'"
    )))
}

fn run_simulate(args: SimulateArgs) -> distdid::Result<()> {
    let dgp = match args.dgp {
        1 => Dgp::Censored,
        2 => Dgp::Continuous,
        other => {
            return Err(Error::Config(format!(
                "dgp must be 1 (censored) or 2 (continuous), got {other}"
            )))
        }
    };
    let error = parse_error_dist(&args.error)?;
    let theta = config::parse_theta(&args.theta)?;
    let link: distdid::links::Link = args.link.parse()?;
    let regime = LinkRegime::uniform(theta, link);
    let sizes: Vec<usize> = args
        .n
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad sample size '{p}'")))
        })
        .collect::<distdid::Result<_>>()?;

    let mut rows = Vec::new();
    for &n in &sizes {
        let cfg = DgpConfig {
            dgp,
            n,
            error,
            params: DgpParams {
                delta: args.delta,
                ..DgpParams::default()
            },
            regime: regime.clone(),
            bootstrap: args.boot,
            replications: args.reps,
            seed: args.seed,
        };
        let metrics = with_threads(args.threads, || run_mc(&cfg))??;
        rows.push((n, metrics));
    }
    output::write_simulation_table(&args.out, &rows)?;
    let last = &rows.last().expect("at least one sample size").1;
    println!(
        "{}",
        serde_json::json!({
            "status": "ok",
            "out": args.out.display().to_string(),
            "rows": rows.len(),
            "rej_dtt_last": last.rej_dtt,
            "l2_dtt_last": last.l2_dtt,
        })
    );
    Ok(())
}
