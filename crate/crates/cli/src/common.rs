//! Shared plumbing for the subcommands: noise resolution, graph/case
//! sourcing, system construction, and artifact helpers.

use crate::config::Overlay;
use anyhow::{bail, Context, Result};
use graphtrack_core::dynamics::NoiseProcess;
use graphtrack_core::graph::{random_regular_graph, Graph};
use graphtrack_core::scenarios::{
    apply_mismatch, build_system, MismatchSpec, PowerCase, ScenarioId, ScenarioSystem,
};
use graphtrack_core::util::from_db;
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const SWEEP_CSV_SCHEMA: &str = "graphtrack sweep csv v1";
pub const BENCH_CSV_SCHEMA: &str = "graphtrack bench csv v1";
pub const RESULTS_SCHEMA: &str = "graphtrack results json v1";

/// Noise configuration resolved from flags.
#[derive(Debug, Clone, Serialize)]
pub struct NoiseSetup {
    pub kind: String,
    /// Sweep-axis value: 10·log₁₀(1/r²) for Gaussian, the rate λ for
    /// exponential noise.
    pub noise_param: f64,
    pub ratio_db: f64,
    pub q2: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exp_rate: Option<f64>,
    pub raw_exponential: bool,
}

impl NoiseSetup {
    /// Gaussian setup from the inverse observation-noise level in dB and the
    /// fixed q²/r² ratio.
    pub fn gaussian(inv_r2_db: f64, ratio_db: f64) -> Self {
        let r2 = from_db(-inv_r2_db);
        let q2 = r2 * from_db(ratio_db);
        Self {
            kind: "gauss".into(),
            noise_param: inv_r2_db,
            ratio_db,
            q2,
            r2: Some(r2),
            exp_rate: None,
            raw_exponential: false,
        }
    }

    /// Exponential setup from the rate λ and the fixed q²/λ ratio.
    pub fn exponential(rate: f64, ratio_db: f64, raw: bool) -> Self {
        let q2 = rate * from_db(ratio_db);
        Self {
            kind: "exp".into(),
            noise_param: rate,
            ratio_db,
            q2,
            r2: None,
            exp_rate: Some(rate),
            raw_exponential: raw,
        }
    }

    pub fn processes(&self) -> (NoiseProcess, NoiseProcess) {
        let process = NoiseProcess::gaussian(self.q2);
        let meas = match self.kind.as_str() {
            "gauss" => NoiseProcess::gaussian(self.r2.expect("gaussian setup has r2")),
            _ => NoiseProcess::ExponentialIid {
                rate: self.exp_rate.expect("exponential setup has rate"),
                centered: !self.raw_exponential,
            },
        };
        (process, meas)
    }
}

pub fn resolve_noise(
    overlay: &Overlay,
    noise_flag: Option<String>,
    ratio_db_flag: Option<f64>,
    inv_r2_db_flag: Option<f64>,
    exp_rate_flag: Option<f64>,
    raw_exponential: bool,
) -> Result<NoiseSetup> {
    let kind = overlay.string("noise", noise_flag, "gauss")?;
    let ratio_db = overlay.f64("ratio_db", ratio_db_flag, -20.0)?;
    match kind.as_str() {
        "gauss" => {
            let inv = overlay.f64("inv_r2_db", inv_r2_db_flag, 10.0)?;
            Ok(NoiseSetup::gaussian(inv, ratio_db))
        }
        "exp" => {
            let rate = overlay
                .f64_opt("exp_rate", exp_rate_flag)?
                .context("exponential noise needs --exp-rate")?;
            let raw = overlay.bool("raw_exponential", raw_exponential, false)?;
            Ok(NoiseSetup::exponential(rate, ratio_db, raw))
        }
        other => bail!("unknown noise kind '{other}' (expected gauss or exp)"),
    }
}

/// Where the topology comes from, echoed into artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct TopologySource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case_file: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<GeneratedGraph>,
    pub graph_hash: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GeneratedGraph {
    pub n: usize,
    pub degree: usize,
    pub seed: u64,
}

pub struct Topology {
    pub graph: Option<Graph>,
    pub case: Option<PowerCase>,
    pub source: TopologySource,
}

/// Loads or generates the topology for a scenario. PSSE scenarios default to
/// the bundled IEEE 14-bus case when no case file is given.
#[allow(clippy::too_many_arguments)]
pub fn resolve_topology(
    overlay: &Overlay,
    scenario: ScenarioId,
    graph_flag: Option<PathBuf>,
    case_flag: Option<PathBuf>,
    n_flag: Option<usize>,
    degree_flag: Option<usize>,
    graph_seed_flag: Option<u64>,
) -> Result<Topology> {
    if scenario.is_psse() {
        let case_path = overlay
            .string_opt("case", case_flag.map(|p| p.display().to_string()))?;
        let (case, file) = match &case_path {
            Some(p) => (
                PowerCase::load(Path::new(p))
                    .with_context(|| format!("loading power case {p}"))?,
                Some(p.clone()),
            ),
            None => (PowerCase::ieee14(), None),
        };
        let graph = case.graph()?;
        let hash = graph.content_hash();
        Ok(Topology {
            graph: None,
            case: Some(case),
            source: TopologySource {
                graph_file: None,
                case_file: file,
                generated: None,
                graph_hash: hash,
            },
        })
    } else {
        let graph_path =
            overlay.string_opt("graph", graph_flag.map(|p| p.display().to_string()))?;
        if let Some(p) = graph_path {
            let graph = Graph::load(Path::new(&p))
                .with_context(|| format!("loading graph {p}"))?;
            let hash = graph.content_hash();
            Ok(Topology {
                graph: Some(graph),
                case: None,
                source: TopologySource {
                    graph_file: Some(p),
                    case_file: None,
                    generated: None,
                    graph_hash: hash,
                },
            })
        } else {
            let n = overlay
                .usize_opt("n", n_flag)?
                .context("need --graph <file> or --n/--degree to generate one")?;
            let degree = overlay.usize("degree", degree_flag, 4)?;
            let seed = overlay.usize("graph_seed", graph_seed_flag.map(|s| s as usize), 0)? as u64;
            let graph = random_regular_graph(n, degree, seed)?;
            let hash = graph.content_hash();
            Ok(Topology {
                graph: Some(graph),
                case: None,
                source: TopologySource {
                    graph_file: None,
                    case_file: None,
                    generated: Some(GeneratedGraph { n, degree, seed }),
                    graph_hash: hash,
                },
            })
        }
    }
}

/// Mismatch flags shared by train/eval/sweep.
#[derive(Debug, Clone, clap::Args)]
pub struct MismatchArgs {
    /// Drop this many random edges from the filter's assumed topology.
    #[arg(long)]
    pub mismatch_drop_edges: Option<usize>,
    /// Seed for the edge-drop sampling (default: derived from --seed).
    #[arg(long)]
    pub mismatch_seed: Option<u64>,
    /// Assume this evolution rate instead of the true one (scenario2).
    #[arg(long)]
    pub mismatch_rate: Option<f64>,
}

impl MismatchArgs {
    pub fn to_spec(&self, default_seed: u64, true_rate: f64) -> Result<Option<MismatchSpec>> {
        match (self.mismatch_drop_edges, self.mismatch_rate) {
            (Some(_), Some(_)) => bail!("choose one mismatch kind, not both"),
            (Some(k), None) => Ok(Some(MismatchSpec::DropEdges {
                k,
                seed: self.mismatch_seed.unwrap_or(default_seed),
            })),
            (None, Some(rate)) => {
                Ok(Some(MismatchSpec::EvolutionRate { true_rate, assumed_rate: rate }))
            }
            (None, None) => Ok(None),
        }
    }
}

/// Builds the data-generating system and, when a mismatch is requested, the
/// filter-side system.
pub fn build_pair(
    scenario: ScenarioId,
    topology: &Topology,
    noise: &NoiseSetup,
    mismatch: Option<&MismatchSpec>,
) -> Result<(ScenarioSystem, ScenarioSystem)> {
    let (process, meas) = noise.processes();
    let truth = build_system(
        scenario,
        topology.graph.clone(),
        topology.case.clone(),
        process,
        meas,
    )?;
    let filter_side = match mismatch {
        Some(spec) => apply_mismatch(&truth, spec)?,
        None => truth.clone(),
    };
    Ok((truth, filter_side))
}

/// Writes a JSON artifact with sorted keys for reproducible bytes.
pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn parse_f64_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("bad number '{s}'")))
        .collect()
}

pub fn parse_usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad integer '{s}'")))
        .collect()
}
