use distdid::data::PanelDataset;
use distdid::ecdf::{Grid, GridRule, build_grid};
use distdid::identify::{LinkRegime, Theta};
use distdid::inference::*;
use distdid::links::Link;
use distdid::simlab::*;
use std::sync::Arc;

fn mc(reps: usize, grid_of: &dyn Fn(&PanelDataset) -> Grid) -> (f64, f64) {
    let cfg = DgpConfig {
        dgp: Dgp::Continuous,
        n: 1000,
        error: ErrorDist::StdNormal,
        params: DgpParams::default(),
        regime: LinkRegime::uniform(Theta::GroupIndexed, Link::Normal),
        bootstrap: 499,
        replications: reps,
        seed: 20240811,
    };
    let mut rejects = 0usize;
    let mut l2sum = 0.0;
    for rep in 0..reps {
        // mirror run_mc's data stream so numbers are comparable
        let mut rng = distdid::simlab::data_stream(&cfg, rep);
        let data = gen_dgp(&cfg, &mut rng).unwrap();
        let grid = Arc::new(grid_of(&data));
        let plan = BootstrapPlan::new(
            BootScheme::Nonparametric,
            cfg.bootstrap,
            distdid::simlab::boot_seed(&cfg, rep),
            0.9,
        )
        .unwrap();
        let out = band_pipeline(
            &data,
            &EstimatorSpec::TwoPeriod,
            &cfg.regime,
            &grid,
            &plan,
            &PipelineOptions::default(),
        )
        .unwrap();
        if out.dtt_test.reject {
            rejects += 1;
        }
        let l = grid.len() as f64;
        let mut sq = 0.0;
        for (i, &y) in grid.points().iter().enumerate() {
            let t = true_treated_cdf(&cfg, y) - true_counterfactual_cdf(&cfg, y);
            sq += (out.dtt.values[i] - t).powi(2);
        }
        l2sum += (sq / l).sqrt();
    }
    (rejects as f64 / reps as f64, l2sum / reps as f64)
}

fn trimmed_grid(data: &PanelDataset, lo_q: f64) -> Grid {
    let mut ys: Vec<f64> = data.outcomes().collect();
    ys.sort_by(f64::total_cmp);
    let n = ys.len();
    let q90 = ys[((0.9 * n as f64).ceil() as usize).clamp(1, n) - 1];
    let qlo = ys[((lo_q * n as f64).ceil() as usize).clamp(1, n) - 1];
    let sup = ys[n - 1];
    let kept: Vec<f64> = ys[..n - 2]
        .iter()
        .copied()
        .filter(|&y| y <= q90 && y >= qlo)
        .collect();
    Grid::new(kept, sup).unwrap()
}

fn main() {
    let reps = 200;
    let spec_rule = |d: &PanelDataset| build_grid(d, &GridRule::SimulationRule).unwrap();
    let (rej, l2) = mc(reps, &spec_rule);
    println!("spec grid:        rej {rej:.3}  l2 {l2:.4}");
    for lo in [0.02, 0.05, 0.10] {
        let g = move |d: &PanelDataset| trimmed_grid(d, lo);
        let (rej, l2) = mc(reps, &g);
        println!("lower-trim q{lo:.2}: rej {rej:.3}  l2 {l2:.4}");
    }
}
