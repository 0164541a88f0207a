//! Concrete systems: two synthetic nonlinear models over random regular
//! graphs, the AC power-flow phase-estimation model, their analytic
//! Jacobians, and filter-side model mismatch injection.

use crate::dynamics::{NoiseProcess, StateSpaceModel};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::spectral::SpectralBasis;
use crate::util::derive_seed;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

/// The systems this crate ships.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioId {
    /// f = sin(x) + cos(x + Ax), h = 3x, over an unweighted graph.
    Scenario1,
    /// f = x + sin(x/10 + 3), h = 0.5·Vx + 0.5·(Vx)³.
    Scenario2,
    /// Voltage-phase tracking: f = 1 − (x + Wx), h = AC active power flow.
    PsseGauss,
    /// Voltage-phase tracking: f = x + 0.05, h = AC active power flow.
    PsseExp,
}

impl ScenarioId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioId::Scenario1 => "scenario1",
            ScenarioId::Scenario2 => "scenario2",
            ScenarioId::PsseGauss => "psse-gauss",
            ScenarioId::PsseExp => "psse-exp",
        }
    }

    pub fn is_psse(&self) -> bool {
        matches!(self, ScenarioId::PsseGauss | ScenarioId::PsseExp)
    }
}

impl std::str::FromStr for ScenarioId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scenario1" | "1" => Ok(ScenarioId::Scenario1),
            "scenario2" | "2" => Ok(ScenarioId::Scenario2),
            "psse-gauss" => Ok(ScenarioId::PsseGauss),
            "psse-exp" => Ok(ScenarioId::PsseExp),
            other => Err(Error::InvalidInput(format!("unknown scenario '{other}'"))),
        }
    }
}

/// Nonlinear state evolution coupled through the unweighted adjacency:
/// f(A, x) = sin(x) + cos(x + Ax) with the linear measurement h = 3x.
/// Analytic Jacobians: F̂ = diag(cos x) − diag(sin(x+Ax))·(I+A), Ĥ = 3I.
pub fn scenario1(
    graph: &Graph,
    process: NoiseProcess,
    meas: NoiseProcess,
) -> Result<StateSpaceModel> {
    if graph.edges().iter().any(|&(_, _, w)| w != 1.0) {
        return Err(Error::InvalidInput("scenario1 requires an unweighted graph".into()));
    }
    let basis = Arc::new(SpectralBasis::from_graph(graph)?);
    let a = Arc::new(graph.adjacency());
    let a_f = a.clone();
    let a_j = a.clone();
    let n = graph.n_nodes();
    Ok(StateSpaceModel::new(
        basis,
        Arc::new(move |_, x: &DVector<f64>| {
            let coupled = x + &*a_f * x;
            x.map(f64::sin) + coupled.map(f64::cos)
        }),
        Arc::new(|_, x: &DVector<f64>| x * 3.0),
        Arc::new(move |_, x: &DVector<f64>| {
            let coupled = x + &*a_j * x;
            let mut jac = DMatrix::identity(x.len(), x.len()) + &*a_j;
            // −diag(sin(x+Ax))·(I+A)
            for i in 0..x.len() {
                let s = -coupled[i].sin();
                for j in 0..x.len() {
                    jac[(i, j)] *= s;
                }
                jac[(i, i)] += x[i].cos();
            }
            jac
        }),
        Arc::new(move |_, _x: &DVector<f64>| DMatrix::identity(n, n) * 3.0),
        process,
        meas,
    ))
}

pub const SCENARIO2_RATE: f64 = 10.0;

/// Slow sinusoidal drift with a cubic frequency-coupled measurement:
/// f = x + sin(x/rate + 3), h = 0.5·Vx + 0.5·(Vx)³ (elementwise cube).
/// The true system uses rate = 10; a mismatched filter model may assume
/// another rate.
pub fn scenario2_with_rate(
    graph: &Graph,
    rate: f64,
    process: NoiseProcess,
    meas: NoiseProcess,
) -> Result<StateSpaceModel> {
    assert!(rate > 0.0, "evolution rate must be positive");
    let basis = Arc::new(SpectralBasis::from_graph(graph)?);
    let v_h = Arc::new(basis.eigvecs().clone());
    let v_j = v_h.clone();
    Ok(StateSpaceModel::new(
        basis,
        Arc::new(move |_, x: &DVector<f64>| x + x.map(|v| (v / rate + 3.0).sin())),
        Arc::new(move |_, x: &DVector<f64>| {
            let vx = &*v_h * x;
            vx.map(|v| 0.5 * v + 0.5 * v * v * v)
        }),
        Arc::new(move |_, x: &DVector<f64>| {
            DMatrix::from_diagonal(&x.map(|v| 1.0 + (v / rate + 3.0).cos() / rate))
        }),
        Arc::new(move |_, x: &DVector<f64>| {
            let vx = &*v_j * x;
            let mut jac = (*v_j).clone();
            for i in 0..x.len() {
                let d = 0.5 + 1.5 * vx[i] * vx[i];
                for j in 0..x.len() {
                    jac[(i, j)] *= d;
                }
            }
            jac
        }),
        process,
        meas,
    ))
}

pub fn scenario2(
    graph: &Graph,
    process: NoiseProcess,
    meas: NoiseProcess,
) -> Result<StateSpaceModel> {
    scenario2_with_rate(graph, SCENARIO2_RATE, process, meas)
}

/// Transmission-line conductances and susceptances of a power network.
/// `[G]ij` and `[B]ij` are zero wherever the graph has no edge.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerCase {
    n: usize,
    lines: Vec<(usize, usize, f64, f64)>,
    pub bus_labels: Vec<String>,
}

/// On-disk form: `{ "n": int, "lines": [[i, j, g_ij, b_ij], ...] }`.
#[derive(Serialize, Deserialize)]
struct PowerCaseFile {
    n: usize,
    lines: Vec<(usize, usize, f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<String>,
}

impl PowerCase {
    pub fn new(n: usize, lines: Vec<(usize, usize, f64, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        let mut canon = Vec::with_capacity(lines.len());
        for (i, j, g, b) in lines {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidInput(format!("invalid line ({i},{j})")));
            }
            if !g.is_finite() || !b.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite admittance on ({i},{j})")));
            }
            let key = (i.min(j), i.max(j));
            if !seen.insert(key) {
                return Err(Error::InvalidInput(format!("duplicate line ({i},{j})")));
            }
            canon.push((key.0, key.1, g, b));
        }
        canon.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let bus_labels = (1..=n).map(|i| format!("bus{i}")).collect();
        Ok(Self { n, lines: canon, bus_labels })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lines(&self) -> &[(usize, usize, f64, f64)] {
        &self.lines
    }

    pub fn conductance(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(self.n, self.n);
        for &(i, j, gv, _) in &self.lines {
            g[(i, j)] = gv;
            g[(j, i)] = gv;
        }
        g
    }

    pub fn susceptance(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.n, self.n);
        for &(i, j, _, bv) in &self.lines {
            b[(i, j)] = bv;
            b[(j, i)] = bv;
        }
        b
    }

    /// Graph with edge weights |b_ij|, so the spectral basis is built from
    /// the susceptance structure.
    pub fn graph(&self) -> Result<Graph> {
        Graph::new(self.n, self.lines.iter().map(|&(i, j, _, b)| (i, j, b.abs())).collect())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PowerCaseFile = serde_json::from_str(text)?;
        Self::new(file.n, file.lines)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = PowerCaseFile { n: self.n, lines: self.lines.clone(), provenance: None };
        std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
        Ok(())
    }

    /// The bundled IEEE 14-bus case (line admittances derived from the
    /// standard 14-bus branch impedances; see the file's provenance field).
    pub fn ieee14() -> Self {
        Self::from_json(include_str!("data/ieee14.json")).expect("bundled case is valid")
    }
}

/// Active power injected at each bus for voltage phases `x` (radians):
/// [h]_i = Σ_j G_ij·cos(x_i−x_j) + B_ij·sin(x_i−x_j), accumulated over lines.
pub fn psse_measurement(case: &PowerCase, x: &DVector<f64>) -> DVector<f64> {
    let mut h = DVector::zeros(case.n);
    for &(i, j, g, b) in &case.lines {
        let d = x[i] - x[j];
        h[i] += g * d.cos() + b * d.sin();
        h[j] += g * d.cos() - b * d.sin();
    }
    h
}

/// Jacobian of [`psse_measurement`]: off-diagonal (i,j) ∈ ℰ entries
/// G_ij·sin(Δ) − B_ij·cos(Δ), diagonal Σ_m −G_im·sin(Δ) + B_im·cos(Δ),
/// zero elsewhere (the sparsity pattern of the graph).
pub fn psse_jacobian(case: &PowerCase, x: &DVector<f64>) -> DMatrix<f64> {
    let mut jac = DMatrix::zeros(case.n, case.n);
    for &(i, j, g, b) in &case.lines {
        let d = x[i] - x[j];
        jac[(i, j)] = g * d.sin() - b * d.cos();
        jac[(j, i)] = -g * d.sin() - b * d.cos();
        jac[(i, i)] += -g * d.sin() + b * d.cos();
        jac[(j, j)] += g * d.sin() + b * d.cos();
    }
    jac
}

/// Phase-tracking model with the graph-coupled linear evolution
/// f = 1 − (x + Wx) (the Gaussian-noise setup).
pub fn psse_gauss_model(
    case: &PowerCase,
    process: NoiseProcess,
    meas: NoiseProcess,
) -> Result<StateSpaceModel> {
    let graph = case.graph()?;
    let basis = Arc::new(SpectralBasis::from_graph(&graph)?);
    let w = Arc::new(graph.adjacency());
    let w_j = w.clone();
    let case_h = Arc::new(case.clone());
    let case_j = case_h.clone();
    let n = case.n();
    Ok(StateSpaceModel::new(
        basis,
        Arc::new(move |_, x: &DVector<f64>| {
            DVector::from_element(x.len(), 1.0) - (x + &*w * x)
        }),
        Arc::new(move |_, x: &DVector<f64>| psse_measurement(&case_h, x)),
        Arc::new(move |_, _x: &DVector<f64>| {
            -(DMatrix::identity(n, n) + &*w_j)
        }),
        Arc::new(move |_, x: &DVector<f64>| psse_jacobian(&case_j, x)),
        process,
        meas,
    ))
}

/// Phase-tracking model with the drifting linear evolution f = x + 0.05
/// (the exponential-noise setup).
pub fn psse_exp_model(
    case: &PowerCase,
    process: NoiseProcess,
    meas: NoiseProcess,
) -> Result<StateSpaceModel> {
    let graph = case.graph()?;
    let basis = Arc::new(SpectralBasis::from_graph(&graph)?);
    let case_h = Arc::new(case.clone());
    let case_j = case_h.clone();
    let n = case.n();
    Ok(StateSpaceModel::new(
        basis,
        Arc::new(|_, x: &DVector<f64>| x.add_scalar(0.05)),
        Arc::new(move |_, x: &DVector<f64>| psse_measurement(&case_h, x)),
        Arc::new(move |_, _x: &DVector<f64>| DMatrix::identity(n, n)),
        Arc::new(move |_, x: &DVector<f64>| psse_jacobian(&case_j, x)),
        process,
        meas,
    ))
}

/// Both phase-tracking models over one case, sharing the measurement.
pub fn psse_models(
    case: &PowerCase,
    process: NoiseProcess,
    gauss_meas: NoiseProcess,
    exp_meas: NoiseProcess,
) -> Result<(StateSpaceModel, StateSpaceModel)> {
    Ok((
        psse_gauss_model(case, process, gauss_meas)?,
        psse_exp_model(case, process, exp_meas)?,
    ))
}

/// Filter-side model corruption. Applies to the model a filter assumes,
/// never to the data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum MismatchSpec {
    /// Remove k random edges from the assumed topology (PSSE: also zero the
    /// corresponding line admittances), keeping the graph connected.
    DropEdges { k: usize, seed: u64 },
    /// Assume a wrong evolution rate in the scenario-2 drift term.
    EvolutionRate { true_rate: f64, assumed_rate: f64 },
}

/// A scenario bound to its topology, so mismatches can rebuild the model.
#[derive(Clone)]
pub struct ScenarioSystem {
    pub id: ScenarioId,
    pub graph: Graph,
    pub power_case: Option<PowerCase>,
    pub s2_rate: f64,
    pub model: StateSpaceModel,
}

/// Builds a scenario system. Synthetic scenarios need a graph; PSSE
/// scenarios need a power case (their graph derives from it).
pub fn build_system(
    id: ScenarioId,
    graph: Option<Graph>,
    case: Option<PowerCase>,
    process: NoiseProcess,
    meas: NoiseProcess,
) -> Result<ScenarioSystem> {
    match id {
        ScenarioId::Scenario1 | ScenarioId::Scenario2 => {
            let graph = graph.ok_or_else(|| {
                Error::InvalidInput(format!("{} needs a graph", id.as_str()))
            })?;
            let model = match id {
                ScenarioId::Scenario1 => scenario1(&graph, process, meas)?,
                _ => scenario2(&graph, process, meas)?,
            };
            Ok(ScenarioSystem {
                id,
                graph,
                power_case: None,
                s2_rate: SCENARIO2_RATE,
                model,
            })
        }
        ScenarioId::PsseGauss | ScenarioId::PsseExp => {
            let case = case.ok_or_else(|| {
                Error::InvalidInput(format!("{} needs a power case", id.as_str()))
            })?;
            let graph = case.graph()?;
            let model = match id {
                ScenarioId::PsseGauss => psse_gauss_model(&case, process, meas)?,
                _ => psse_exp_model(&case, process, meas)?,
            };
            Ok(ScenarioSystem {
                id,
                graph,
                power_case: Some(case),
                s2_rate: SCENARIO2_RATE,
                model,
            })
        }
    }
}

const DISCONNECT_RETRY_CAP: usize = 1000;

/// Builds the filter-side model under a mismatch. The returned system has
/// its topology/rate corrupted and its spectral basis recomputed; the
/// original (data-generating) system is untouched. Assumed filter
/// covariances and x0 carry over from the original model.
pub fn apply_mismatch(system: &ScenarioSystem, spec: &MismatchSpec) -> Result<ScenarioSystem> {
    let mut out = match spec {
        MismatchSpec::DropEdges { k, seed } => {
            let kept = drop_edges_connected(&system.graph, *k, *seed)?;
            match &system.power_case {
                Some(case) => {
                    let kept_keys: std::collections::HashSet<(usize, usize)> =
                        kept.edges().iter().map(|&(i, j, _)| (i, j)).collect();
                    let lines: Vec<_> = case
                        .lines()
                        .iter()
                        .copied()
                        .filter(|&(i, j, _, _)| kept_keys.contains(&(i, j)))
                        .collect();
                    let new_case = PowerCase::new(case.n(), lines)?;
                    rebuild(system, kept, Some(new_case), system.s2_rate)?
                }
                None => rebuild(system, kept, None, system.s2_rate)?,
            }
        }
        MismatchSpec::EvolutionRate { assumed_rate, .. } => {
            if system.id != ScenarioId::Scenario2 {
                return Err(Error::InvalidInput(
                    "evolution-rate mismatch applies to scenario2 only".into(),
                ));
            }
            rebuild(system, system.graph.clone(), system.power_case.clone(), *assumed_rate)?
        }
    };
    out.model = out
        .model
        .with_x0(system.model.x0.clone())
        .with_assumed_covariances(system.model.q_cov.clone(), system.model.r_cov.clone());
    Ok(out)
}

fn rebuild(
    system: &ScenarioSystem,
    graph: Graph,
    case: Option<PowerCase>,
    rate: f64,
) -> Result<ScenarioSystem> {
    let process = system.model.process_noise;
    let meas = system.model.meas_noise;
    let model = match system.id {
        ScenarioId::Scenario1 => scenario1(&graph, process, meas)?,
        ScenarioId::Scenario2 => scenario2_with_rate(&graph, rate, process, meas)?,
        ScenarioId::PsseGauss => {
            psse_gauss_model(case.as_ref().expect("psse keeps its case"), process, meas)?
        }
        ScenarioId::PsseExp => {
            psse_exp_model(case.as_ref().expect("psse keeps its case"), process, meas)?
        }
    };
    Ok(ScenarioSystem { id: system.id, graph, power_case: case, s2_rate: rate, model })
}

/// Removes k edges chosen at random such that the remainder stays connected.
fn drop_edges_connected(graph: &Graph, k: usize, seed: u64) -> Result<Graph> {
    if k == 0 {
        return Ok(graph.clone());
    }
    let edges = graph.edges();
    if k >= edges.len() {
        return Err(Error::InvalidInput(format!(
            "cannot drop {k} of {} edges",
            edges.len()
        )));
    }
    for attempt in 0..DISCONNECT_RETRY_CAP {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
        let drop: std::collections::HashSet<usize> =
            sample(&mut rng, edges.len(), k).into_iter().collect();
        let kept: Vec<(usize, usize, f64)> = edges
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop.contains(i))
            .map(|(_, &e)| e)
            .collect();
        let candidate = Graph::new(graph.n_nodes(), kept)?;
        if candidate.is_connected() {
            return Ok(candidate);
        }
    }
    Err(Error::DisconnectRetryExceeded { k, attempts: DISCONNECT_RETRY_CAP })
}
