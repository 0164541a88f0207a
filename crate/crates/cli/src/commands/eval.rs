//! `graphtrack eval`: score one filter on a dataset.

use crate::common::{self, write_json, MismatchArgs};
use crate::config::{ConfigFile, Overlay};
use anyhow::{Context, Result};
use graphtrack_core::dataset::Dataset;
use graphtrack_core::filters::classic::to_frequency_model;
use graphtrack_core::filters::gsp::GspConfig;
use graphtrack_core::knet::{evaluate, Estimator, EvalReport};
use graphtrack_core::neural::Checkpoint;
use graphtrack_core::scenarios::apply_mismatch;
use serde_json::json;
use std::path::PathBuf;
use std::time::Instant;

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Test dataset file.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub case: Option<PathBuf>,
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub allow_topology_mismatch: bool,
    /// ekf | gsp-ekf | gsp-kalmannet
    #[arg(long)]
    pub filter: Option<String>,
    /// Parameter checkpoint (required for gsp-kalmannet).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Track only the leading N_s graph frequencies (gsp-ekf).
    #[arg(long)]
    pub bandlimit: Option<usize>,
    #[command(flatten)]
    pub mismatch: MismatchArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output report JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// The deterministic half of an [`EvalReport`] (timing lives separately).
pub fn report_json(report: &EvalReport) -> serde_json::Value {
    json!({
        "filter": report.filter,
        "mse_linear": report.mse_linear,
        "mse_db": report.mse_db,
        "per_trajectory_mse": report.per_trajectory_mse,
        "trajectories": report.trajectories,
        "steps_per_trajectory": report.steps_per_trajectory,
    })
}

pub fn run(file: &ConfigFile, args: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let overlay = Overlay::new(file, "eval");
    let dataset_path = PathBuf::from(
        overlay
            .string_opt("dataset", args.dataset.map(|p| p.display().to_string()))?
            .ok_or_else(|| crate::UsageError("--dataset is required".into()))?,
    );
    let dataset = Dataset::load(&dataset_path)
        .with_context(|| format!("loading dataset {}", dataset_path.display()))?;
    let seed = overlay.seed(args.seed)?;
    let (scenario, system, topo_source) = super::train::rebuild_system(
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

    let filter = overlay.string("filter", args.filter.clone(), "gsp-ekf")?;
    let freq = to_frequency_model(&filter_system.model);
    let gsp_config = GspConfig {
        bandlimit: overlay.usize_opt("bandlimit", args.bandlimit)?,
        ..GspConfig::default()
    };
    let checkpoint = match &args.checkpoint {
        Some(path) => Some(Checkpoint::load(path).context("loading checkpoint")?),
        None => None,
    };
    let report = match filter.as_str() {
        "ekf" => evaluate(&Estimator::Ekf(&filter_system.model), &dataset)?,
        "gsp-ekf" => {
            evaluate(&Estimator::GspEkf { model: &freq, config: gsp_config.clone() }, &dataset)?
        }
        "gsp-kalmannet" => {
            let ckpt = checkpoint
                .as_ref()
                .ok_or_else(|| crate::UsageError("gsp-kalmannet needs --checkpoint".into()))?;
            evaluate(
                &Estimator::GspKalmanNet {
                    model: &freq,
                    net: &ckpt.net,
                    lineage: Some(&ckpt.lineage),
                },
                &dataset,
            )?
        }
        other => crate::usage_bail!("unknown filter '{other}'"),
    };

    let out = PathBuf::from(overlay.string(
        "out",
        args.out.map(|p| p.display().to_string()),
        "eval.json",
    )?);
    let payload = json!({
        "schema": common::RESULTS_SCHEMA,
        "command": "eval",
        "config": {
            "dataset": dataset_path.display().to_string(),
            "scenario": scenario.as_str(),
            "topology": topo_source,
            "filter": filter,
            "mismatch": mismatch,
            "bandlimit": gsp_config.bandlimit,
            "checkpoint": args.checkpoint.as_ref().map(|p| p.display().to_string()),
            "seed": seed,
        },
        "dataset_hash": dataset.content_hash(),
        "report": report_json(&report),
        "timing": {
            "step_time_seconds": report.step_time_seconds,
            "wall_seconds": started.elapsed().as_secs_f64(),
        },
    });
    write_json(&out, &payload)?;
    println!(
        "{}: MSE {:.6} ({} dB) over {} trajectories",
        report.filter,
        report.mse_linear,
        report.mse_db.map_or("-inf".into(), |d| format!("{d:.2}")),
        report.trajectories
    );
    Ok(())
}
