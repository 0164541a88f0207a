//! `graphtrack train`: fit the learned gain on a dataset.

use super::TrainFlags;
use crate::common::{self, resolve_topology, write_json, MismatchArgs};
use crate::config::{ConfigFile, Overlay};
use anyhow::{Context, Result};
use graphtrack_core::dataset::Dataset;
use graphtrack_core::dynamics::NoiseProcess;
use graphtrack_core::filters::classic::to_frequency_model;
use graphtrack_core::knet;
use graphtrack_core::neural::Checkpoint;
use graphtrack_core::scenarios::{apply_mismatch, build_system, ScenarioId, ScenarioSystem};
use serde_json::json;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Training dataset file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Graph JSON file (synthetic scenarios).
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Power case JSON file (PSSE scenarios; default: bundled IEEE-14).
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Override the scenario recorded in the dataset metadata.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Accept a topology whose hash differs from the dataset metadata.
    #[arg(long)]
    pub allow_topology_mismatch: bool,
    #[command(flatten)]
    pub mismatch: MismatchArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoint.bin and results.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

/// Rebuilds the data-generating system a dataset came from, using its
/// embedded metadata, and checks the topology hash unless told not to.
pub fn rebuild_system(
    dataset: &Dataset,
    overlay: &Overlay,
    scenario_flag: Option<String>,
    graph: Option<PathBuf>,
    case: Option<PathBuf>,
    allow_topology_mismatch: bool,
) -> Result<(ScenarioId, ScenarioSystem, common::TopologySource)> {
    let scenario: ScenarioId = overlay
        .string("scenario", scenario_flag, &dataset.metadata.scenario)?
        .parse()?;
    let topology = resolve_topology(overlay, scenario, graph, case, None, None, None)?;
    if !allow_topology_mismatch && topology.source.graph_hash != dataset.metadata.graph_hash {
        crate::usage_bail!(
            "topology hash {} does not match the dataset's generating graph {} \
             (pass --allow-topology-mismatch to override)",
            &topology.source.graph_hash[..16],
            &dataset.metadata.graph_hash[..16.min(dataset.metadata.graph_hash.len())]
        );
    }
    let process = dataset.metadata.process_noise;
    let meas = dataset.metadata.meas_noise;
    let system = build_system(scenario, topology.graph.clone(), topology.case.clone(), process, meas)?;
    Ok((scenario, system, topology.source))
}

/// Assumed measurement variance used by the filter under exponential noise:
/// the noise variance 1/λ² (the filters model the noise as Gaussian).
pub fn assumed_variances(process: NoiseProcess, meas: NoiseProcess) -> (f64, f64) {
    (process.variance(), meas.variance())
}

pub fn run(file: &ConfigFile, args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let overlay = Overlay::new(file, "train");
    let dataset_path = PathBuf::from(
        overlay
            .string_opt("dataset", args.dataset.map(|p| p.display().to_string()))?
            .ok_or_else(|| crate::UsageError("--dataset is required".into()))?,
    );
    let dataset = Dataset::load(&dataset_path)
        .with_context(|| format!("loading dataset {}", dataset_path.display()))?;
    let seed = overlay.seed(args.seed)?;
    let (scenario, system, topo_source) = rebuild_system(
        &dataset,
        &overlay,
        args.scenario.clone(),
        args.graph.clone(),
        args.case.clone(),
        overlay.bool("allow_topology_mismatch", args.allow_topology_mismatch, false)?,
    )?;
    let mismatch = args.mismatch.to_spec(seed, system.s2_rate)?;
    let filter_system = match &mismatch {
        Some(spec) => apply_mismatch(&system, spec)?,
        None => system.clone(),
    };
    let freq = to_frequency_model(&filter_system.model);

    let config = args.train.resolve(&overlay, seed)?;
    let out_dir = PathBuf::from(overlay.string(
        "out_dir",
        args.out_dir.map(|p| p.display().to_string()),
        "train-out",
    )?);
    std::fs::create_dir_all(&out_dir)?;

    let output = knet::train(&dataset, &freq, &config)?;
    let ckpt_path = out_dir.join("checkpoint.bin");
    Checkpoint::new(output.net.clone(), output.lineage.clone()).save(&ckpt_path)?;

    let best = &output.curve[output.best_epoch];
    let results = json!({
        "schema": common::RESULTS_SCHEMA,
        "command": "train",
        "config": {
            "dataset": dataset_path.display().to_string(),
            "scenario": scenario.as_str(),
            "topology": topo_source,
            "mismatch": mismatch,
            "train": config,
            "seed": seed,
        },
        "graph_hash": filter_system.graph.content_hash(),
        "dataset_hash": dataset.content_hash(),
        "curve": output.curve,
        "best_epoch": output.best_epoch,
        "final": {
            "val_mse": best.val_mse,
            "val_mse_db": best.val_mse_db,
        },
        "checkpoint": ckpt_path.display().to_string(),
        "timing": { "wall_seconds": started.elapsed().as_secs_f64() },
    });
    write_json(&out_dir.join("results.json"), &results)?;
    println!(
        "trained {} epochs; best validation MSE {:.6} ({} dB) at epoch {}",
        output.curve.len(),
        best.val_mse,
        best.val_mse_db.map_or("-inf".into(), |d| format!("{d:.2}")),
        output.best_epoch
    );
    Ok(())
}
