//! `graphtrack simulate`: generate a trajectory dataset.

use crate::common::{self, resolve_noise, resolve_topology, write_json};
use crate::config::{ConfigFile, Overlay};
use anyhow::{Context, Result};
use graphtrack_core::dataset::DatasetMetadata;
use graphtrack_core::dynamics::{
    generate_dataset, DEFAULT_TRAJECTORY_LEN, DEFAULT_TRAIN_TRAJECTORIES,
};
use graphtrack_core::scenarios::{build_system, ScenarioId};
use serde_json::json;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, clap::Args)]
pub struct SimulateArgs {
    /// scenario1 | scenario2 | psse-gauss | psse-exp
    #[arg(long)]
    pub scenario: Option<String>,
    /// Graph JSON file (synthetic scenarios).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Power case JSON file (PSSE scenarios; default: bundled IEEE-14).
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Generate a random regular graph with this many nodes.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub degree: Option<usize>,
    #[arg(long)]
    pub graph_seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long)]
    pub d: Option<usize>,
    /// Trajectory length.
    #[arg(long)]
    pub t: Option<usize>,
    /// gauss | exp
    #[arg(long)]
    pub noise: Option<String>,
    /// 10·log₁₀(q²/r²) (or q²/λ for exponential noise).
    #[arg(long)]
    pub ratio_db: Option<f64>,
    /// Observation noise level as 10·log₁₀(1/r²) (Gaussian).
    #[arg(long)]
    pub inv_r2_db: Option<f64>,
    /// Exponential noise rate λ.
    #[arg(long)]
    pub exp_rate: Option<f64>,
    /// Keep raw exponential draws instead of centering them.
    #[arg(long)]
    pub raw_exponential: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output dataset file.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also export one CSV per trajectory into this directory.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Write the (possibly generated) graph to this JSON file.
    #[arg(long)]
    pub save_graph: Option<PathBuf>,
}

pub fn run(file: &ConfigFile, args: SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let overlay = Overlay::new(file, "simulate");
    let scenario: ScenarioId = overlay
        .string("scenario", args.scenario.clone(), "scenario1")?
        .parse()?;
    let seed = overlay.seed(args.seed)?;
    let noise = resolve_noise(
        &overlay,
        args.noise.clone(),
        args.ratio_db,
        args.inv_r2_db,
        args.exp_rate,
        args.raw_exponential,
    )?;
    let topology = resolve_topology(
        &overlay,
        scenario,
        args.graph.clone(),
        args.case.clone(),
        args.n,
        args.degree,
        args.graph_seed,
    )?;
    let d = overlay.usize("d", args.d, DEFAULT_TRAIN_TRAJECTORIES)?;
    let t = overlay.usize("t", args.t, DEFAULT_TRAJECTORY_LEN)?;
    let out = PathBuf::from(overlay.string(
        "out",
        args.out.map(|p| p.display().to_string()),
        "dataset.bin",
    )?);

    let (process, meas) = noise.processes();
    let system = build_system(
        scenario,
        topology.graph.clone(),
        topology.case.clone(),
        process,
        meas,
    )?;
    let metadata =
        DatasetMetadata::new(scenario.as_str(), &system.model, topology.source.graph_hash.clone(), seed);
    let dataset = generate_dataset(&system.model, d, t, seed, metadata)
        .context("simulating trajectories")?;

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    dataset.save(&out)?;
    if let Some(dir) = &args.csv {
        dataset.export_csv(dir)?;
    }
    if let Some(path) = &args.save_graph {
        system.graph.save(path)?;
    }

    let echo = json!({
        "schema": common::RESULTS_SCHEMA,
        "command": "simulate",
        "config": {
            "scenario": scenario.as_str(),
            "topology": topology.source,
            "noise": noise,
            "d": d,
            "t": t,
            "seed": seed,
        },
        "dataset_hash": dataset.content_hash(),
        "out": out.display().to_string(),
        "timing": { "wall_seconds": started.elapsed().as_secs_f64() },
    });
    let sidecar = out.with_extension("run.json");
    write_json(&sidecar, &echo)?;
    println!(
        "wrote {} trajectories of length {t} to {} (hash {})",
        dataset.len(),
        out.display(),
        &dataset.content_hash()[..16]
    );
    Ok(())
}
