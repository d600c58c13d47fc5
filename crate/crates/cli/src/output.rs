//! Result emission: curve CSVs, the JSON summary, and the simulation table.

use crate::config::EstimateConfig;
use distdid::data::{DesignInfo, PanelDataset};
use distdid::effects::{left_inverse, Interval};
use distdid::inference::PipelineResult;
use distdid::simlab::McMetrics;
use distdid::{Error, Result};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::Path;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(io_err(&path))
}

fn band_csv(axis: &[f64], estimate: &[f64], lo: &[f64], hi: &[f64]) -> String {
    let mut s = String::from("axis,estimate,lo,hi\n");
    for i in 0..axis.len() {
        let _ = writeln!(s, "{},{},{},{}", axis[i], estimate[i], lo[i], hi[i]);
    }
    s
}

fn interval_csv(taus: &[f64], estimate: &[f64], intervals: &[Interval]) -> String {
    let mut s = String::from("axis,estimate,lo,hi\n");
    for i in 0..taus.len() {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            taus[i], estimate[i], intervals[i].lo, intervals[i].hi
        );
    }
    s
}

/// Write the artifact set and return the one-line machine-readable summary
/// for stdout.
pub fn write_estimate_outputs(
    out_dir: &Path,
    cfg: &EstimateConfig,
    data: &PanelDataset,
    design: &DesignInfo,
    result: &PipelineResult,
) -> Result<String> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let grid = result.treated.grid();
    write_file(
        out_dir,
        "treated_df.csv",
        &band_csv(
            grid.points(),
            result.treated.values(),
            &result.treated_band.lo,
            &result.treated_band.hi,
        ),
    )?;
    write_file(
        out_dir,
        "counterfactual_df.csv",
        &band_csv(
            grid.points(),
            result.counterfactual.values(),
            &result.counterfactual_band.lo,
            &result.counterfactual_band.hi,
        ),
    )?;
    let dtt_band = result.dtt.band.as_ref().expect("pipeline attaches a band");
    write_file(
        out_dir,
        "dtt.csv",
        &band_csv(grid.points(), &result.dtt.values, &dtt_band.lo, &dtt_band.hi),
    )?;

    let treated_qf_point: Vec<f64> = result
        .taus
        .iter()
        .map(|&t| left_inverse(&result.treated, t))
        .collect();
    let cf_qf_point: Vec<f64> = result
        .taus
        .iter()
        .map(|&t| left_inverse(&result.counterfactual, t))
        .collect();
    write_file(
        out_dir,
        "treated_qf.csv",
        &interval_csv(&result.taus, &treated_qf_point, &result.treated_qf),
    )?;
    write_file(
        out_dir,
        "counterfactual_qf.csv",
        &interval_csv(&result.taus, &cf_qf_point, &result.counterfactual_qf),
    )?;
    write_file(
        out_dir,
        "qtt.csv",
        &interval_csv(&result.taus, &result.qtt.values, &result.qtt_intervals),
    )?;

    let config_json =
        serde_json::to_string(cfg).map_err(|e| Error::Config(format!("config echo: {e}")))?;
    let config_hash = format!("{:x}", Sha256::digest(config_json.as_bytes()));

    let weights: Vec<serde_json::Value> = result
        .scheme
        .iter()
        .flat_map(|s| s.iter())
        .map(|(g, pre, post, w)| {
            serde_json::json!({
                "group": g.to_string(),
                "pre": pre,
                "post": post,
                "weight": w,
            })
        })
        .collect();

    let summary = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": cfg.seed,
        "config_hash": config_hash,
        "config": serde_json::from_str::<serde_json::Value>(&config_json).unwrap(),
        "design": design,
        "n_units": data.n_units(),
        "n_obs": data.n_total(),
        "grid_size": grid.len(),
        "sup_y": grid.sup_y(),
        "level": result.treated_band.level,
        "adtt": result.adtt,
        "dtt_test": result.dtt_test,
        "adtt_test": result.adtt_test,
        "n_triples": weights.len(),
        "weights": weights,
        "diagnostics": result.diagnostics,
        "outputs": [
            "treated_df.csv",
            "counterfactual_df.csv",
            "dtt.csv",
            "treated_qf.csv",
            "counterfactual_qf.csv",
            "qtt.csv"
        ],
    });
    let pretty = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))?;
    write_file(out_dir, "summary.json", &pretty)?;

    Ok(serde_json::json!({
        "status": "ok",
        "out": out_dir.display().to_string(),
        "adtt": result.adtt,
        "dtt_reject": result.dtt_test.reject,
        "config_hash": config_hash,
    })
    .to_string())
}

/// Metrics table mirroring the simulation-report column layout.
pub fn write_simulation_table(path: &Path, rows: &[(usize, McMetrics)]) -> Result<()> {
    let mut s = String::from(
        "n,l2_dtt,rej_dtt_10,mb_adtt,mad_adtt,rej_adtt_10,l2_cdf,dtt_band_coverage,qtt_zero_coverage,reps\n",
    );
    for (n, m) in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            n,
            m.l2_dtt,
            m.rej_dtt,
            m.mb_adtt,
            m.mad_adtt,
            m.rej_adtt,
            m.l2_cdf,
            m.dtt_band_zero_coverage,
            m.qtt_zero_coverage,
            m.replications
        );
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    std::fs::write(path, s).map_err(io_err(path))
}
