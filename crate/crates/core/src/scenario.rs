//! Scenario documents, parameter resolution, packaged demos and run pipelines.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{analyze, AnalysisError, AnalysisReport, GraphAnalysis};
use crate::dynamics::{
    DisturbanceSpec, DynamicsError, ProtocolParams, SlidingGains, Timing, Waveform, DEFAULT_BOUNDARY_LAYER,
};
use crate::gain::DEFAULT_GUARD_REL;
use crate::signed_graph::{GraphDocument, GraphError, SignedDigraph};
use crate::simulator::{simulate, Scenario, SimError, Trajectory};
use crate::verify::{default_tolerance, verdict_suite, Verdict, VerifyError};

pub const DEFAULT_H: f64 = 1e-3;
pub const DEFAULT_STRIDE: usize = 10;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("field `{field}`: {message}")]
    Field { field: &'static str, message: String },
    #[error("graph: {0}")]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Simulation(SimError),
    #[error("unknown demo `{0}`")]
    UnknownDemo(String),
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse { line: e.line(), column: e.column(), message: e.to_string() }
    }
}

fn field(field: &'static str, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Field { field, message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Nominal,
    Sliding,
}

/// Inline graph document or a path relative to the scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSource {
    File(String),
    Inline(GraphDocument),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    pub graph: GraphSource,
    #[serde(default)]
    pub mode: Mode,
    pub rho1: f64,
    pub rho2: f64,
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_layer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub guard_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceSpec>,
    pub x0: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0: Option<Vec<f64>>,
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol_enabled: Option<bool>,
}

pub fn parse_scenario(text: &str) -> Result<ScenarioDocument, ScenarioError> {
    Ok(serde_json::from_str(text)?)
}

pub fn load_scenario(path: &Path) -> Result<(ScenarioDocument, PathBuf), ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((parse_scenario(&text)?, base))
}

/// A validated scenario plus the resolved run settings.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub scenario: Scenario,
    pub seed: u64,
    pub tol: f64,
    /// Fully explicit document (inline graph, all defaults filled in).
    pub echo: ScenarioDocument,
}

fn required(value: Option<f64>, name: &'static str) -> Result<f64, ScenarioError> {
    value.ok_or_else(|| field(name, "required for this mode"))
}

fn dynamics_error(e: DynamicsError) -> ScenarioError {
    let name = match &e {
        DynamicsError::NonPositive { name, .. } => name,
        DynamicsError::Delta(_) | DynamicsError::Mu1NotAboveDelta { .. } => "mu1",
        DynamicsError::AmplitudeAboveDelta { .. } => "disturbance",
        DynamicsError::BoundaryLayer(_) => "boundary_layer",
        DynamicsError::Gain(_) => "guard_rel",
        DynamicsError::Dimension { .. } | DynamicsError::NotSliding => "mode",
    };
    field(name, e.to_string())
}

pub fn resolve(
    doc: &ScenarioDocument,
    base_dir: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<ResolvedScenario, ScenarioError> {
    let graph_doc = match &doc.graph {
        GraphSource::Inline(g) => g.clone(),
        GraphSource::File(p) => {
            let path = base_dir.map_or_else(|| PathBuf::from(p), |b| b.join(p));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
            serde_json::from_str(&text)?
        }
    };
    let graph = SignedDigraph::from_document(graph_doc)?;

    let disturbance = doc.disturbance.unwrap_or_else(DisturbanceSpec::zero);
    let guard_rel = doc.guard_rel.unwrap_or(DEFAULT_GUARD_REL);
    let timing = match doc.mode {
        Mode::Nominal => {
            for (name, v) in [("tr", doc.tr), ("ts", doc.ts), ("mu1", doc.mu1), ("mu2", doc.mu2), ("mu3", doc.mu3)] {
                if v.is_some() {
                    return Err(field(name, "only valid in sliding mode"));
                }
            }
            if doc.sigma0.is_some() {
                return Err(field("sigma0", "only valid in sliding mode"));
            }
            Timing::Nominal { t1: required(doc.t1, "t1")? }
        }
        Mode::Sliding => {
            if doc.t1.is_some() {
                return Err(field("t1", "sliding mode uses tr and ts"));
            }
            if doc.sigma0.is_none() {
                return Err(field("sigma0", "required in sliding mode"));
            }
            Timing::Sliding(SlidingGains {
                tr: required(doc.tr, "tr")?,
                ts: required(doc.ts, "ts")?,
                mu1: required(doc.mu1, "mu1")?,
                mu2: required(doc.mu2, "mu2")?,
                mu3: required(doc.mu3, "mu3")?,
                delta: doc.delta.unwrap_or(disturbance.bound()),
                boundary_layer: doc.boundary_layer.unwrap_or(DEFAULT_BOUNDARY_LAYER),
            })
        }
    };
    let params = ProtocolParams { rho1: doc.rho1, rho2: doc.rho2, kappa: doc.kappa, guard_rel, timing };
    params.validate().map_err(dynamics_error)?;

    let scenario = Scenario {
        graph,
        params,
        disturbance,
        x0: doc.x0.clone(),
        sigma0: doc.sigma0.clone(),
        t_end: doc.t_end,
        h: doc.h.unwrap_or(DEFAULT_H),
        stride: doc.stride.unwrap_or(DEFAULT_STRIDE),
        protocol_enabled: doc.protocol_enabled.unwrap_or(true),
    };
    scenario.validate().map_err(|e| match e {
        SimError::Invalid(m) if m.contains("t_end") => field("t_end", m),
        SimError::Invalid(m) if m.starts_with("x0") => field("x0", m),
        SimError::Invalid(m) if m.starts_with("sigma0") => field("sigma0", m),
        SimError::Invalid(m) if m.starts_with("h ") => field("h", m),
        SimError::Invalid(m) if m.starts_with("stride") => field("stride", m),
        SimError::Dynamics(d) => dynamics_error(d),
        other => ScenarioError::Simulation(other),
    })?;

    let tol = doc.tol.unwrap_or_else(|| default_tolerance(&doc.x0));
    if !(tol.is_finite() && tol > 0.0) {
        return Err(field("tol", format!("must be positive, got {tol}")));
    }
    let seed = seed_override.or(doc.seed).unwrap_or(0);

    let sliding = scenario.params.sliding_gains().copied();
    let echo = ScenarioDocument {
        graph: GraphSource::Inline(scenario.graph.to_document()),
        mode: doc.mode,
        rho1: doc.rho1,
        rho2: doc.rho2,
        kappa: doc.kappa,
        t1: doc.t1,
        tr: sliding.map(|s| s.tr),
        ts: sliding.map(|s| s.ts),
        mu1: sliding.map(|s| s.mu1),
        mu2: sliding.map(|s| s.mu2),
        mu3: sliding.map(|s| s.mu3),
        delta: sliding.map(|s| s.delta),
        boundary_layer: sliding.map(|s| s.boundary_layer),
        guard_rel: Some(guard_rel),
        disturbance: Some(disturbance),
        x0: doc.x0.clone(),
        sigma0: doc.sigma0.clone(),
        t_end: doc.t_end,
        h: Some(scenario.h),
        stride: Some(scenario.stride),
        seed: Some(seed),
        tol: Some(tol),
        protocol_enabled: Some(scenario.protocol_enabled),
    };
    Ok(ResolvedScenario { scenario, seed, tol, echo })
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("analysis failed: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] SimError),
    #[error("verification failed: {0}")]
    Verify(#[from] VerifyError),
}

impl RunError {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, RunError::Simulation(SimError::NonFinite { .. }) | RunError::Analysis(AnalysisError::Spectral(_)))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub analysis: GraphAnalysis,
    pub trajectory: Trajectory,
    pub verdicts: Vec<Verdict>,
    pub notices: Vec<String>,
}

impl RunOutput {
    pub fn all_pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn report(&self) -> AnalysisReport {
        self.analysis.report()
    }
}

pub fn run(resolved: &ResolvedScenario) -> Result<RunOutput, RunError> {
    let scn = &resolved.scenario;
    let analysis = analyze(&scn.graph, resolved.seed)?;
    let trajectory = simulate(scn)?;
    let verdicts = verdict_suite(scn, &analysis, &trajectory, resolved.tol)?;
    let mut notices = Vec::new();
    if let Ok(s) = scn.params.nominal_schedule() {
        notices.extend(s.notice());
    }
    Ok(RunOutput { analysis, trajectory, verdicts, notices })
}

/// Independent runs, optionally on `jobs` threads; output order follows input order.
pub fn run_batch(items: &[ResolvedScenario], jobs: Option<usize>) -> Vec<Result<RunOutput, RunError>> {
    let work = || items.par_iter().map(run).collect::<Vec<_>>();
    match jobs.map(|j| rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build()) {
        Some(Ok(pool)) => pool.install(work),
        Some(Err(_)) => items.iter().map(run).collect(),
        None => work(),
    }
}

/// Writes `trajectory.csv`, `verdicts.json`, `params.json` and `analysis.json` into `dir`.
pub fn write_outputs(dir: &Path, resolved: &ResolvedScenario, out: &RunOutput) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join("trajectory.csv"))?;
    out.trajectory.write_csv(std::io::BufWriter::new(csv))?;
    write_json(&dir.join("verdicts.json"), &out.verdicts)?;
    write_json(&dir.join("params.json"), &resolved.echo)?;
    write_json(&dir.join("analysis.json"), &out.report())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(std::io::Error::other)?;
    std::fs::write(path, text + "\n")
}

const GRAPH_STRONG_UNBALANCED: &str = include_str!("../demos/strong_unbalanced.json");
const GRAPH_STRONG_BALANCED: &str = include_str!("../demos/strong_balanced.json");
const GRAPH_QUASI_BALANCED: &str = include_str!("../demos/quasi_strong_balanced_leaders.json");
const GRAPH_QUASI_UNBALANCED: &str = include_str!("../demos/quasi_strong_unbalanced_leaders.json");
const GRAPH_WEAK_BALANCED: &str = include_str!("../demos/weak_balanced_csc.json");
const GRAPH_WEAK_UNBALANCED: &str = include_str!("../demos/weak_unbalanced_cscs.json");

pub const DEMO_NAMES: [&str; 12] = [
    "ex1a", "ex1b", "ex2a", "ex2b", "ex3a", "ex3b", "ex4a", "ex4b", "ex5a", "ex5b", "ex6a", "ex6b",
];

const X0_SIX_A: [f64; 6] = [5.0, 2.0, -4.0, 3.0, -2.0, 1.0];
const X0_SIX_B: [f64; 6] = [-4.0, 3.0, -1.0, 2.0, -2.0, 5.0];
const X0_EX3: [f64; 16] = [-6.0, 4.0, 5.0, -7.0, 8.0, -5.0, -3.0, 7.0, -5.0, 6.0, 4.0, 2.0, -5.0, 3.0, -8.0, 1.0];
const X0_EX5: [f64; 6] = [-4.0, 4.0, 5.0, -7.0, 8.0, 1.0];
const X0_EX6: [f64; 16] = [
    2.6, -1.2, -1.2, -1.0, -0.2, 0.9, -2.9, 2.0, 0.3, 2.1, -1.0, -0.3, -2.7, -2.0, 1.0, -1.0,
];
const SIGMA0_EX4: [f64; 6] = [-9.0, 1.0, -5.0, 8.0, -4.0, 6.0];
const SIGMA0_EX5: [f64; 6] = [-10.0, 10.0, 9.0, -5.0, 5.0, 4.0];
const SIGMA0_EX6: [f64; 16] = [
    2.9, -3.0, 0.5, 0.0, 0.75, -0.8, -1.5, 3.8, 2.3, 3.6, 0.2, -0.27, -4.0, -2.3, -0.5, -2.9,
];

fn nominal_demo(graph: &str, rho: (f64, f64), t1: f64, x0: &[f64]) -> ScenarioDocument {
    ScenarioDocument {
        graph: GraphSource::Inline(serde_json::from_str(graph).expect("packaged graph")),
        mode: Mode::Nominal,
        rho1: rho.0,
        rho2: rho.1,
        kappa: 1.0,
        t1: Some(t1),
        tr: None,
        ts: None,
        mu1: None,
        mu2: None,
        mu3: None,
        delta: None,
        boundary_layer: None,
        guard_rel: None,
        disturbance: None,
        x0: x0.to_vec(),
        sigma0: None,
        t_end: t1 + 0.4,
        h: None,
        stride: None,
        seed: None,
        tol: None,
        protocol_enabled: None,
    }
}

#[allow(clippy::too_many_arguments)]
fn sliding_demo(
    graph: &str,
    rho: (f64, f64),
    kappa: f64,
    (tr, ts): (f64, f64),
    (mu1, mu2, mu3): (f64, f64, f64),
    disturbance: DisturbanceSpec,
    x0: &[f64],
    sigma0: &[f64],
) -> ScenarioDocument {
    let mut doc = nominal_demo(graph, rho, tr + ts, x0);
    doc.kappa = kappa;
    doc.mode = Mode::Sliding;
    doc.t1 = None;
    doc.tr = Some(tr);
    doc.ts = Some(ts);
    doc.mu1 = Some(mu1);
    doc.mu2 = Some(mu2);
    doc.mu3 = Some(mu3);
    doc.delta = Some(1.0);
    doc.disturbance = Some(disturbance);
    doc.sigma0 = Some(sigma0.to_vec());
    doc
}

fn wave(waveform: Waveform, omega: f64, phase: f64) -> DisturbanceSpec {
    DisturbanceSpec { waveform, amplitude: 1.0, omega, index_scaled: true, phase }
}

/// Packaged scenario. The `a` variants use the structurally unbalanced strong graph
/// (ex1, ex4) or the balanced leader/CSC graph (ex2, ex3, ex5, ex6); `b` the other one.
pub fn demo(name: &str) -> Result<ScenarioDocument, ScenarioError> {
    use std::f64::consts::PI;
    let ex4 = |g| {
        sliding_demo(g, (0.1, 0.3), 2.0, (0.5, 1.0), (1.2, 0.6, 0.9), wave(Waveform::Sin, 2.0, PI / 3.0), &X0_SIX_B, &SIGMA0_EX4)
    };
    let ex5 = |g| {
        sliding_demo(g, (0.25, 0.3), 3.0, (1.0, 0.5), (2.0, 0.4, 0.5), wave(Waveform::Sin, 2.0, PI / 2.0), &X0_EX5, &SIGMA0_EX5)
    };
    let ex6 = |g| {
        sliding_demo(g, (0.2, 0.1), 3.0, (0.4, 0.6), (2.0, 0.1, 0.5), wave(Waveform::Cos, 1.0, -PI / 3.0), &X0_EX6, &SIGMA0_EX6)
    };
    Ok(match name {
        "ex1a" => nominal_demo(GRAPH_STRONG_UNBALANCED, (0.1, 0.3), 0.6, &X0_SIX_A),
        "ex1b" => nominal_demo(GRAPH_STRONG_BALANCED, (0.1, 0.3), 0.6, &X0_SIX_A),
        "ex2a" => nominal_demo(GRAPH_QUASI_BALANCED, (0.2, 0.5), 0.6, &X0_SIX_B),
        "ex2b" => nominal_demo(GRAPH_QUASI_UNBALANCED, (0.2, 0.5), 0.6, &X0_SIX_B),
        "ex3a" => nominal_demo(GRAPH_WEAK_BALANCED, (0.1, 0.3), 0.2, &X0_EX3),
        "ex3b" => nominal_demo(GRAPH_WEAK_UNBALANCED, (0.1, 0.3), 0.2, &X0_EX3),
        "ex4a" => ex4(GRAPH_STRONG_UNBALANCED),
        "ex4b" => ex4(GRAPH_STRONG_BALANCED),
        "ex5a" => ex5(GRAPH_QUASI_BALANCED),
        "ex5b" => ex5(GRAPH_QUASI_UNBALANCED),
        "ex6a" => ex6(GRAPH_WEAK_BALANCED),
        "ex6b" => ex6(GRAPH_WEAK_UNBALANCED),
        other => return Err(ScenarioError::UnknownDemo(other.to_string())),
    })
}
