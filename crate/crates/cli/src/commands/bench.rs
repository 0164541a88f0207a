//! `graphtrack bench`: per-step runtime of each filter across graph sizes,
//! with log-log slope fits and inversion-count instrumentation.
//!
//! The benchmark model is a linear graph-filter system with a scaled-identity
//! measurement — the orthogonal-frequency regime in which the graph-filter
//! EKF provably coincides with the full EKF, so the two filters are timed at
//! equal estimation accuracy. The graph-filter EKF runs its diagonal
//! covariance recursion here (exact in this regime); the full EKF runs its
//! dense algebra with a matrix factorization per step.

use crate::common::{self, parse_usize_list, write_json};
use crate::config::{ConfigFile, Overlay};
use anyhow::{Context, Result};
use graphtrack_core::dynamics::{simulate_trajectory, NoiseProcess, StateSpaceModel};
use graphtrack_core::filters::classic::{
    ekf_run, to_frequency_model, FilterState, SeparableStructure,
};
use graphtrack_core::filters::gsp::{gsp_ekf_run, init_state as gsp_init_state, GspConfig};
use graphtrack_core::graph::random_regular_graph;
use graphtrack_core::knet::knet_run;
use graphtrack_core::neural::GainNetwork;
use graphtrack_core::spectral::{filter_matrix, FrequencyFilter, SpectralBasis};
use graphtrack_core::util::matrix_inversions;
use nalgebra::{DMatrix, DVector};
use serde_json::json;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

#[derive(Debug, clap::Args)]
pub struct BenchArgs {
    /// Comma-separated graph sizes (at least two for slope fits).
    #[arg(long)]
    pub sizes: Option<String>,
    #[arg(long)]
    pub degree: Option<usize>,
    /// Steps per timed trajectory.
    #[arg(long)]
    pub t: Option<usize>,
    /// Timing repetitions per cell (median reported).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Comma-separated subset of: ekf, gsp-ekf, gsp-kalmannet.
    #[arg(long)]
    pub filters: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

struct Cell {
    n: usize,
    filter: String,
    mse_db: Option<f64>,
    median_traj_seconds: Option<f64>,
    median_step_seconds: Option<f64>,
    inversions_per_step: Option<f64>,
    status: String,
}

pub fn run(file: &ConfigFile, args: BenchArgs) -> Result<()> {
    let started = Instant::now();
    let overlay = Overlay::new(file, "bench");
    let sizes = parse_usize_list(&overlay.string("sizes", args.sizes.clone(), "50,150,300")?)?;
    if sizes.len() < 2 {
        crate::usage_bail!("--sizes needs at least two graph sizes");
    }
    let degree = overlay.usize("degree", args.degree, 4)?;
    let t_len = overlay.usize("t", args.t, 20)?;
    let reps = overlay.usize("reps", args.reps, 5)?;
    let seed = overlay.seed(args.seed)?;
    let filters: Vec<String> = overlay
        .string("filters", args.filters.clone(), "ekf,gsp-ekf,gsp-kalmannet")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if filters.is_empty() {
        crate::usage_bail!("--filters must name at least one filter");
    }
    let out_dir = PathBuf::from(overlay.string(
        "out_dir",
        args.out_dir.map(|p| p.display().to_string()),
        "bench-out",
    )?);
    std::fs::create_dir_all(&out_dir)?;

    let mut cells = Vec::new();
    for &n in &sizes {
        let (model, structure) = bench_model(n, degree, seed)?;
        let freq = to_frequency_model(&model).with_separable(structure);
        let traj = simulate_trajectory(&model, &model.x0, t_len, seed)?;
        let net = GainNetwork::init(n, seed);

        for filter in &filters {
            let run_filter: Box<dyn Fn() -> graphtrack_core::error::Result<Vec<DVector<f64>>>> =
                match filter.as_str() {
                    "ekf" => {
                        let (model, traj) = (&model, &traj);
                        Box::new(move || {
                            ekf_run(model, FilterState::init(model), &traj.observations)
                        })
                    }
                    "gsp-ekf" => {
                        let (freq, traj) = (&freq, &traj);
                        Box::new(move || {
                            let config =
                                GspConfig { diagonal_covariance: true, ..GspConfig::default() };
                            gsp_ekf_run(
                                freq,
                                &config,
                                gsp_init_state(freq, &config),
                                &traj.observations,
                            )
                        })
                    }
                    "gsp-kalmannet" => {
                        let (freq, net, traj) = (&freq, &net, &traj);
                        Box::new(move || knet_run(freq, net, &traj.observations))
                    }
                    other => crate::usage_bail!("unknown filter '{other}'"),
                };

            // Failures (the paper's "--" cells) become status rows rather
            // than aborting the table.
            cells.push(match time_cell(&run_filter, &traj, reps, t_len) {
                Ok(cell) => Cell { n, filter: filter.clone(), ..cell },
                Err(err) => Cell {
                    n,
                    filter: filter.clone(),
                    mse_db: None,
                    median_traj_seconds: None,
                    median_step_seconds: None,
                    inversions_per_step: None,
                    status: format!("error: {err}").replace([',', '\n'], ";"),
                },
            });
        }
    }

    // Least-squares slope of log(step time) against log(n) per filter.
    let mut slopes = serde_json::Map::new();
    for filter in &filters {
        let pts: Vec<(f64, f64)> = cells
            .iter()
            .filter(|c| &c.filter == filter)
            .filter_map(|c| c.median_step_seconds.map(|t| ((c.n as f64).ln(), t.ln())))
            .collect();
        if pts.len() >= 2 {
            slopes.insert(filter.clone(), json!(fit_slope(&pts)));
        }
    }

    let csv_path = out_dir.join("bench.csv");
    let mut csv = String::new();
    csv.push_str(&format!("# {}\n", common::BENCH_CSV_SCHEMA));
    csv.push_str(
        "n,filter,mse_db,median_step_seconds,median_traj_seconds,inversions_per_step,reps,steps,status\n",
    );
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for c in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            c.n,
            c.filter,
            opt(c.mse_db),
            opt(c.median_step_seconds),
            opt(c.median_traj_seconds),
            opt(c.inversions_per_step),
            reps,
            t_len,
            c.status
        ));
    }
    std::fs::write(&csv_path, csv)?;

    let summary = json!({
        "schema": common::RESULTS_SCHEMA,
        "command": "bench",
        "config": {
            "sizes": sizes,
            "degree": degree,
            "t": t_len,
            "reps": reps,
            "filters": filters,
            "seed": seed,
        },
        "slopes": slopes,
        "timing": { "wall_seconds": started.elapsed().as_secs_f64() },
    });
    write_json(&out_dir.join("bench.json"), &summary)?;
    for (f, s) in &slopes {
        println!("{f}: log-log slope {:.2}", s.as_f64().unwrap_or(f64::NAN));
    }
    println!("wrote {}", csv_path.display());
    Ok(())
}

/// Times one (size, filter) cell: warm-up, `reps` repetitions, median, plus
/// the (deterministic) estimation MSE of the timed filter.
fn time_cell(
    run_filter: &dyn Fn() -> graphtrack_core::error::Result<Vec<DVector<f64>>>,
    traj: &graphtrack_core::dataset::Trajectory,
    reps: usize,
    t_len: usize,
) -> Result<Cell> {
    let estimates = run_filter().context("warm-up run")?;
    let n = traj.n() as f64;
    let mse = estimates
        .iter()
        .zip(&traj.states)
        .map(|(e, x)| (e - x).norm_squared())
        .sum::<f64>()
        / (t_len as f64 * n);
    let mut times = Vec::with_capacity(reps);
    let inv_before = matrix_inversions();
    for _ in 0..reps {
        let start = Instant::now();
        run_filter()?;
        times.push(start.elapsed().as_secs_f64());
    }
    let inversions = (matrix_inversions() - inv_before) as f64;
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = times[times.len() / 2];
    Ok(Cell {
        n: 0,
        filter: String::new(),
        mse_db: graphtrack_core::util::to_db(mse),
        median_traj_seconds: Some(median),
        median_step_seconds: Some(median / t_len as f64),
        inversions_per_step: Some(inversions / (reps * t_len) as f64),
        status: "ok".into(),
    })
}

/// Linear graph-filter dynamics with h = 3x: the coincidence regime where
/// the graph-filter gain is exact, so both filters see identical estimation
/// problems.
pub fn bench_model(n: usize, degree: usize, seed: u64) -> Result<(StateSpaceModel, SeparableStructure)> {
    let graph = random_regular_graph(n, degree.min(n - 1), seed)?;
    let basis = Arc::new(SpectralBasis::from_graph(&graph)?);
    let filt = FrequencyFilter::for_basis(&basis, |l| 0.9 / (1.0 + l));
    let f_mat = Arc::new(filter_matrix(&basis, &filt));
    let f_jac = f_mat.clone();
    let q2 = 1e-3;
    let r2 = 0.1;
    let structure = SeparableStructure {
        f_response: filt.response().clone(),
        h_response: DVector::from_element(n, 3.0),
        q_diag: DVector::from_element(n, q2),
        r_diag: DVector::from_element(n, r2),
    };
    let model = StateSpaceModel::new(
        basis,
        Arc::new(move |_, x: &DVector<f64>| &*f_mat * x),
        Arc::new(|_, x: &DVector<f64>| x * 3.0),
        Arc::new(move |_, _x: &DVector<f64>| (*f_jac).clone()),
        Arc::new(|_, x: &DVector<f64>| DMatrix::identity(x.len(), x.len()) * 3.0),
        NoiseProcess::gaussian(q2),
        NoiseProcess::gaussian(r2),
    );
    Ok((model, structure))
}

pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx: f64 = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my: f64 = points.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    num / den
}
