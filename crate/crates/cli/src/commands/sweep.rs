//! `graphtrack sweep`: MSE of each filter across a noise grid, written as a
//! plot-ready CSV plus a JSON summary.

use super::TrainFlags;
use crate::common::{
    self, parse_f64_list, resolve_topology, write_json, MismatchArgs, NoiseSetup,
};
use crate::config::{ConfigFile, Overlay};
use anyhow::{Context, Result};
use graphtrack_core::dataset::DatasetMetadata;
use graphtrack_core::dynamics::{generate_dataset, DEFAULT_TEST_TRAJECTORIES};
use graphtrack_core::filters::classic::to_frequency_model;
use graphtrack_core::filters::gsp::GspConfig;
use graphtrack_core::knet::{evaluate, train, Estimator};
use graphtrack_core::scenarios::{apply_mismatch, build_system, ScenarioId};
use graphtrack_core::util::derive_seed;
use rayon::prelude::*;
use serde_json::json;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub case: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub graph_seed: Option<u64>,
    /// gauss | exp
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub ratio_db: Option<f64>,
    /// Comma-separated grid: 10·log₁₀(1/r²) values (gauss) or rates (exp).
    #[arg(long)]
    pub grid: Option<String>,
    /// Comma-separated subset of: ekf, gsp-ekf, gsp-kalmannet.
    #[arg(long)]
    pub filters: Option<String>,
    /// Comma-separated run seeds (one sweep repetition per seed).
    #[arg(long)]
    pub seeds: Option<String>,
    /// Training trajectories per grid point (gsp-kalmannet only).
    #[arg(long)]
    pub d: Option<usize>,
    /// Test trajectories per grid point.
    #[arg(long)]
    pub test_d: Option<usize>,
    /// Trajectory length.
    #[arg(long)]
    pub t: Option<usize>,
    #[arg(long)]
    pub raw_exponential: bool,
    #[command(flatten)]
    pub mismatch: MismatchArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parallel workers across grid points.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Keep the per-point test datasets under <out-dir>/data/.
    #[arg(long)]
    pub keep_datasets: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

struct Row {
    point_idx: usize,
    noise_param: f64,
    filter: String,
    seed: u64,
    mse_linear: Option<f64>,
    mse_db: Option<f64>,
    status: String,
}

pub fn run(file: &ConfigFile, args: SweepArgs) -> Result<()> {
    let started = Instant::now();
    let overlay = Overlay::new(file, "sweep");
    let scenario: ScenarioId = overlay
        .string("scenario", args.scenario.clone(), "scenario1")?
        .parse()?;
    let seed_list: Vec<u64> = overlay
        .string("seeds", args.seeds.clone(), "")?
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<u64>().context("bad seed"))
        .collect::<Result<_>>()?;
    let base_seed = overlay.seed(args.seed)?;
    let seeds = if seed_list.is_empty() { vec![base_seed] } else { seed_list };

    let filters: Vec<String> = overlay
        .string("filters", args.filters.clone(), "")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if filters.is_empty() {
        crate::usage_bail!("--filters must name at least one of ekf, gsp-ekf, gsp-kalmannet");
    }
    for f in &filters {
        if !matches!(f.as_str(), "ekf" | "gsp-ekf" | "gsp-kalmannet") {
            crate::usage_bail!("unknown filter '{f}'");
        }
    }

    let grid = parse_f64_list(&overlay.string("grid", args.grid.clone(), "0,5,10,15,20")?)?;
    if grid.is_empty() {
        crate::usage_bail!("--grid must contain at least one noise point");
    }
    let noise_kind = overlay.string("noise", args.noise.clone(), "gauss")?;
    let ratio_db = overlay.f64("ratio_db", args.ratio_db, -20.0)?;
    let raw_exp = overlay.bool("raw_exponential", args.raw_exponential, false)?;
    let topology = resolve_topology(
        &overlay,
        scenario,
        args.graph.clone(),
        args.case.clone(),
        args.n,
        args.degree,
        args.graph_seed,
    )?;
    let train_d = overlay.usize("d", args.d, 500)?;
    let test_d = overlay.usize("test_d", args.test_d, DEFAULT_TEST_TRAJECTORIES)?;
    let t_len = overlay.usize("t", args.t, 200)?;
    let jobs = overlay.usize("jobs", args.jobs, 1)?;
    let keep = overlay.bool("keep_datasets", args.keep_datasets, false)?;
    let out_dir = PathBuf::from(overlay.string(
        "out_dir",
        args.out_dir.map(|p| p.display().to_string()),
        "sweep-out",
    )?);
    std::fs::create_dir_all(&out_dir)?;
    if keep {
        std::fs::create_dir_all(out_dir.join("data"))?;
    }

    let train_flags = args.train.clone();
    let mismatch_args = args.mismatch.clone();

    let config_echo = json!({
        "scenario": scenario.as_str(),
        "topology": topology.source,
        "noise": noise_kind,
        "ratio_db": ratio_db,
        "raw_exponential": raw_exp,
        "grid": grid,
        "filters": filters,
        "seeds": seeds,
        "d": train_d,
        "test_d": test_d,
        "t": t_len,
        "mismatch_drop_edges": mismatch_args.mismatch_drop_edges,
        "mismatch_rate": mismatch_args.mismatch_rate,
        "train": train_flags.resolve(&overlay, 0)?,
    });

    // One work item per (grid point, run seed); every filter shares that
    // item's datasets. Failures become status rows, not aborts.
    let items: Vec<(usize, u64)> = (0..grid.len())
        .flat_map(|p| seeds.iter().map(move |&s| (p, s)))
        .collect();
    let run_item = |&(point_idx, run_seed): &(usize, u64)| -> Vec<Row> {
        let value = grid[point_idx];
        match run_point(
            scenario,
            &topology,
            &noise_kind,
            ratio_db,
            raw_exp,
            value,
            run_seed,
            point_idx,
            &filters,
            train_d,
            test_d,
            t_len,
            &train_flags,
            &mismatch_args,
            &overlay,
            keep.then_some(out_dir.as_path()),
        ) {
            Ok(rows) => rows,
            Err(err) => filters
                .iter()
                .map(|f| Row {
                    point_idx,
                    noise_param: value,
                    filter: f.clone(),
                    seed: run_seed,
                    mse_linear: None,
                    mse_db: None,
                    status: format!("error: {err:#}").replace(['\n', ','], ";"),
                })
                .collect(),
        }
    };
    let mut rows: Vec<Row> = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .context("building worker pool")?;
        pool.install(|| items.par_iter().map(run_item).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect()
    } else {
        items.iter().flat_map(|i| run_item(i)).collect()
    };
    rows.sort_by(|a, b| {
        (a.point_idx, &a.filter, a.seed).cmp(&(b.point_idx, &b.filter, b.seed))
    });

    let csv_path = out_dir.join("sweep.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(csv, "# {}", common::SWEEP_CSV_SCHEMA)?;
    writeln!(csv, "# config: {}", serde_json::to_string(&config_echo)?)?;
    writeln!(csv, "noise_param,filter,mse_db,mse_linear,seed,status")?;
    for row in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{}",
            row.noise_param,
            row.filter,
            row.mse_db.map_or(String::new(), |v| v.to_string()),
            row.mse_linear.map_or(String::new(), |v| v.to_string()),
            row.seed,
            row.status
        )?;
    }
    drop(csv);

    let summary = json!({
        "schema": common::RESULTS_SCHEMA,
        "command": "sweep",
        "config": config_echo,
        "rows": rows.len(),
        "csv": csv_path.display().to_string(),
        "timing": { "wall_seconds": started.elapsed().as_secs_f64() },
    });
    write_json(&out_dir.join("sweep.json"), &summary)?;
    println!("wrote {} rows to {}", rows.len(), csv_path.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_point(
    scenario: ScenarioId,
    topology: &common::Topology,
    noise_kind: &str,
    ratio_db: f64,
    raw_exp: bool,
    value: f64,
    run_seed: u64,
    point_idx: usize,
    filters: &[String],
    train_d: usize,
    test_d: usize,
    t_len: usize,
    train_flags: &TrainFlags,
    mismatch_args: &MismatchArgs,
    overlay: &Overlay,
    keep_dir: Option<&std::path::Path>,
) -> Result<Vec<Row>> {
    let noise = match noise_kind {
        "gauss" => NoiseSetup::gaussian(value, ratio_db),
        "exp" => NoiseSetup::exponential(value, ratio_db, raw_exp),
        other => crate::usage_bail!("unknown noise kind '{other}'"),
    };
    let (process, meas) = noise.processes();
    let truth = build_system(
        scenario,
        topology.graph.clone(),
        topology.case.clone(),
        process,
        meas,
    )?;
    let mismatch = mismatch_args.to_spec(derive_seed(run_seed, 0xED), truth.s2_rate)?;
    let filter_system = match &mismatch {
        Some(spec) => apply_mismatch(&truth, spec)?,
        None => truth.clone(),
    };
    let freq = to_frequency_model(&filter_system.model);

    let meta = DatasetMetadata::new(
        scenario.as_str(),
        &truth.model,
        topology.source.graph_hash.clone(),
        run_seed,
    );
    let test_seed = derive_seed(run_seed, 0x7E57 + point_idx as u64);
    let test_set = generate_dataset(&truth.model, test_d, t_len, test_seed, meta.clone())?;
    if let Some(dir) = keep_dir {
        test_set.save(&dir.join(format!("data/point_{point_idx}_seed_{run_seed}_test.bin")))?;
    }

    let needs_training = filters.iter().any(|f| f == "gsp-kalmannet");
    let trained = if needs_training {
        let train_seed = derive_seed(run_seed, 0x7124 + point_idx as u64);
        let train_set = generate_dataset(&truth.model, train_d, t_len, train_seed, meta)?;
        if let Some(dir) = keep_dir {
            train_set
                .save(&dir.join(format!("data/point_{point_idx}_seed_{run_seed}_train.bin")))?;
        }
        Some(train(&train_set, &freq, &train_flags.resolve(overlay, run_seed)?)?)
    } else {
        None
    };

    let mut rows = Vec::new();
    for filter in filters {
        let result = match filter.as_str() {
            "ekf" => evaluate(&Estimator::Ekf(&filter_system.model), &test_set),
            "gsp-ekf" => evaluate(
                &Estimator::GspEkf { model: &freq, config: GspConfig::default() },
                &test_set,
            ),
            _ => {
                let out = trained.as_ref().expect("trained when knet requested");
                evaluate(
                    &Estimator::GspKalmanNet {
                        model: &freq,
                        net: &out.net,
                        lineage: Some(&out.lineage),
                    },
                    &test_set,
                )
            }
        };
        rows.push(match result {
            Ok(report) => Row {
                point_idx,
                noise_param: value,
                filter: filter.clone(),
                seed: run_seed,
                mse_linear: Some(report.mse_linear),
                mse_db: report.mse_db,
                status: "ok".into(),
            },
            Err(err) => Row {
                point_idx,
                noise_param: value,
                filter: filter.clone(),
                seed: run_seed,
                mse_linear: None,
                mse_db: None,
                status: format!("error: {err}").replace(['\n', ','], ";"),
            },
        });
    }
    Ok(rows)
}
