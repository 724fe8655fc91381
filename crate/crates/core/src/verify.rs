//! Convergence verdicts on trajectories and the algebraic limit-state oracle.

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::GraphAnalysis;
use crate::gain::GainSchedule;
use crate::signed_graph::Connectivity;
use crate::simulator::{Scenario, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error("evaluation time {t} is beyond the end of the trajectory ({t_end})")]
    BeyondEnd { t: f64, t_end: f64 },
    #[error("check requires a {required} graph, got {got}")]
    WrongClass { required: &'static str, got: Connectivity },
    #[error("trajectory has no sigma samples")]
    NoSigma,
    #[error("limit prediction is only defined for undisturbed nominal runs")]
    Disturbed,
    #[error("x0 has {got} entries, graph has {expected} nodes")]
    Dimension { expected: usize, got: usize },
    #[error("follower block is singular")]
    SingularFollowerBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LimitKind {
    Stability,
    BipartiteConsensus { c: f64, gauge: Vec<i8> },
    /// `leader_value` is `c` (balanced leaders) or the frozen single leader state.
    IntervalBipartite { leader_value: f64, followers: Vec<f64> },
    Containment { leader_limits: Vec<f64>, followers: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictedLimit {
    #[serde(flatten)]
    pub kind: LimitKind,
    /// Limit for every agent, original node order.
    pub limit: Vec<f64>,
}

/// Limit state of the undisturbed nominal protocol from `x0`.
pub fn predicted_limits(analysis: &GraphAnalysis, x0: &[f64]) -> Result<PredictedLimit, VerifyError> {
    let n = analysis.n();
    if x0.len() != n {
        return Err(VerifyError::Dimension { expected: n, got: x0.len() });
    }
    let mut limit = vec![0.0; n];
    let mut csc_values = Vec::with_capacity(analysis.cscs.len());
    let mut gauges = Vec::with_capacity(analysis.cscs.len());
    for c in &analysis.cscs {
        let gauge = c.balance.gauge_f64().filter(|_| c.balance.balanced);
        let value = match &gauge {
            Some(g) if c.members.len() == 1 => x0[c.members[0]] * g[0],
            Some(g) => c.members.iter().enumerate().map(|(i, &v)| c.perron.p[i] * g[i] * x0[v]).sum(),
            None => 0.0,
        };
        let g = gauge.unwrap_or_else(|| vec![1.0; c.members.len()]);
        for (i, &v) in c.members.iter().enumerate() {
            limit[v] = g[i] * value;
        }
        csc_values.push(value);
        gauges.push(g);
    }

    let followers = &analysis.partition.followers;
    let mut follower_values = Vec::new();
    if !followers.is_empty() {
        let blocks = &analysis.blocks;
        let mut rhs = DVector::zeros(followers.len());
        for (k, g) in gauges.iter().enumerate() {
            let leader_limit = DVector::from_iterator(g.len(), g.iter().map(|s| s * csc_values[k]));
            rhs += &blocks.l_flk[k] * leader_limit;
        }
        let xf = blocks.l_f.clone().lu().solve(&(-rhs)).ok_or(VerifyError::SingularFollowerBlock)?;
        for (i, &v) in blocks.order[blocks.leader_count()..].iter().enumerate() {
            limit[v] = xf[i];
        }
        follower_values = followers.iter().map(|&v| limit[v]).collect();
    }

    let kind = match analysis.cscs.len() {
        1 if followers.is_empty() => match &analysis.cscs[0].balance.gauge {
            Some(g) if analysis.cscs[0].balance.balanced => {
                LimitKind::BipartiteConsensus { c: csc_values[0], gauge: g.clone() }
            }
            _ => LimitKind::Stability,
        },
        1 if analysis.cscs[0].balance.balanced => {
            LimitKind::IntervalBipartite { leader_value: csc_values[0], followers: follower_values }
        }
        1 => LimitKind::Stability,
        _ => LimitKind::Containment { leader_limits: csc_values, followers: follower_values },
    };
    Ok(PredictedLimit { kind, limit })
}

/// `predicted_limits` restricted to scenarios where it applies.
pub fn predicted_limits_for(
    scn: &Scenario,
    analysis: &GraphAnalysis,
) -> Result<PredictedLimit, VerifyError> {
    if scn.is_sliding() || scn.disturbance.bound() > 0.0 || !scn.protocol_enabled {
        return Err(VerifyError::Disturbed);
    }
    predicted_limits(analysis, &scn.x0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub property: String,
    pub pass: bool,
    pub residual: f64,
    pub tol: f64,
    pub t_eval: f64,
    pub details: Value,
}

impl Verdict {
    fn new(property: &str, residual: f64, tol: f64, t_eval: f64, details: Value) -> Self {
        Self { property: property.into(), pass: residual <= tol, residual, tol, t_eval, details }
    }

    pub fn line(&self) -> String {
        format!(
            "{}: {} at t = {} (residual {:.3e}, tol {:.3e})",
            self.property,
            if self.pass { "pass" } else { "fail" },
            self.t_eval,
            self.residual,
            self.tol
        )
    }
}

/// `1e-3 * max(1, |x0|_inf)`.
pub fn default_tolerance(x0: &[f64]) -> f64 {
    1e-3 * x0.iter().fold(1.0f64, |m, v| m.max(v.abs()))
}

fn start_index(traj: &Trajectory, t: f64) -> Result<usize, VerifyError> {
    traj.index_at(t).ok_or(VerifyError::BeyondEnd { t, t_end: traj.t_end() })
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn check_stability(traj: &Trajectory, t: f64, tol: f64) -> Result<Verdict, VerifyError> {
    check_stability_on(traj, t, tol, &(0..traj.n()).collect::<Vec<_>>(), "stability")
}

fn check_stability_on(
    traj: &Trajectory,
    t: f64,
    tol: f64,
    agents: &[usize],
    property: &str,
) -> Result<Verdict, VerifyError> {
    let i0 = start_index(traj, t)?;
    let residual = traj.x[i0..]
        .iter()
        .flat_map(|x| agents.iter().map(move |&k| x[k].abs()))
        .fold(0.0, f64::max);
    Ok(Verdict::new(property, residual, tol, traj.t[i0], json!({})))
}

/// `(x*, max_{t >= T, k} ||x_k(t)| - x*|)` over `agents`.
fn consensus_residual(traj: &Trajectory, i0: usize, agents: &[usize]) -> (f64, f64) {
    let x_star = median(agents.iter().map(|&k| traj.x[i0][k].abs()).collect());
    let residual = traj.x[i0..]
        .iter()
        .flat_map(|x| agents.iter().map(move |&k| (x[k].abs() - x_star).abs()))
        .fold(0.0, f64::max);
    (x_star, residual)
}

pub fn check_bipartite_consensus(traj: &Trajectory, t: f64, tol: f64) -> Result<Verdict, VerifyError> {
    let i0 = start_index(traj, t)?;
    let agents: Vec<usize> = (0..traj.n()).collect();
    let (x_star, residual) = consensus_residual(traj, i0, &agents);
    let mut v = Verdict::new("bipartite_consensus", residual, tol, traj.t[i0], json!({ "x_star": x_star }));
    if x_star <= tol {
        v.pass = false;
        v.details["note"] = json!("degenerate: stability instead");
    }
    Ok(v)
}

fn require_connected(analysis: &GraphAnalysis, required: &'static str) -> Result<(), VerifyError> {
    if analysis.connectivity == Connectivity::Disconnected {
        return Err(VerifyError::WrongClass { required, got: analysis.connectivity });
    }
    Ok(())
}

/// Leaders reach bipartite consensus with common `x_f`; followers stay within `x_f`.
pub fn check_interval_bipartite(
    traj: &Trajectory,
    analysis: &GraphAnalysis,
    t: f64,
    tol: f64,
) -> Result<Verdict, VerifyError> {
    require_connected(analysis, "quasi-strongly connected")?;
    let i0 = start_index(traj, t)?;
    let leaders = &analysis.partition.leaders;
    let followers = &analysis.partition.followers;
    let (x_f, leader_res) = consensus_residual(traj, i0, leaders);
    let follower_excess = traj.x[i0..]
        .iter()
        .flat_map(|x| followers.iter().map(move |&k| x[k].abs() - x_f))
        .fold(0.0, f64::max);
    let residual = leader_res.max(follower_excess);
    let mut v = Verdict::new(
        "interval_bipartite",
        residual,
        tol,
        traj.t[i0],
        json!({ "x_f": x_f, "leader_residual": leader_res, "follower_excess": follower_excess }),
    );
    if x_f <= tol {
        v.pass = false;
        v.details["note"] = json!("degenerate: stability instead");
    }
    Ok(v)
}

/// Balanced components reach bipartite consensus, unbalanced ones zero, and
/// followers stay inside the leaders' symmetric hull.
pub fn check_bipartite_containment(
    traj: &Trajectory,
    analysis: &GraphAnalysis,
    t: f64,
    tol: f64,
) -> Result<Verdict, VerifyError> {
    require_connected(analysis, "weakly connected")?;
    let i0 = start_index(traj, t)?;
    let mut per_csc = Vec::new();
    let mut residual = 0.0f64;
    for c in &analysis.cscs {
        let (x_star, r) = if c.balance.balanced {
            consensus_residual(traj, i0, &c.members)
        } else {
            let r = traj.x[i0..]
                .iter()
                .flat_map(|x| c.members.iter().map(move |&k| x[k].abs()))
                .fold(0.0, f64::max);
            (0.0, r)
        };
        residual = residual.max(r);
        per_csc.push(json!({ "balanced": c.balance.balanced, "x_star": x_star, "residual": r }));
    }
    let leaders = &analysis.partition.leaders;
    let followers = &analysis.partition.followers;
    let hull_excess = traj.x[i0..]
        .iter()
        .map(|x| {
            let hull = leaders.iter().map(|&k| x[k].abs()).fold(0.0, f64::max);
            followers.iter().map(|&k| x[k].abs() - hull).fold(0.0, f64::max)
        })
        .fold(0.0, f64::max);
    residual = residual.max(hull_excess);
    Ok(Verdict::new(
        "bipartite_containment",
        residual,
        tol,
        traj.t[i0],
        json!({ "components": per_csc, "hull_excess": hull_excess }),
    ))
}

pub fn check_sliding_reach(
    traj: &Trajectory,
    tr: f64,
    tol: f64,
    boundary_layer: f64,
) -> Result<Verdict, VerifyError> {
    let sigma = traj.sigma.as_ref().ok_or(VerifyError::NoSigma)?;
    let i0 = start_index(traj, tr)?;
    let residual = sigma[i0..].iter().flat_map(|s| s.iter().map(|v| v.abs())).fold(0.0, f64::max);
    let mut v = Verdict::new(
        "sliding_reach",
        residual,
        tol + boundary_layer,
        traj.t[i0],
        json!({ "tol": tol, "boundary_layer": boundary_layer }),
    );
    v.pass = residual <= tol + boundary_layer;
    Ok(v)
}

/// `V(t) <= phi(t)^{-b} exp(-a t) V(0) (1 + slack) + floor` for samples before the guard.
///
/// `floor` absorbs the terminal band of boundary-layer runs (`0` for the plain bound);
/// the number of samples that only pass thanks to it is reported.
pub fn check_envelope(
    times: &[f64],
    values: &[f64],
    a: f64,
    b: f64,
    sched: &GainSchedule,
    slack: f64,
    floor: f64,
) -> Verdict {
    let v0 = values.first().copied().unwrap_or(0.0);
    let cutoff = sched.horizon() - sched.guard();
    let mut worst = f64::NEG_INFINITY;
    let mut floor_only = 0usize;
    let mut checked = 0usize;
    for (&t, &v) in times.iter().zip(values) {
        if t >= cutoff {
            continue;
        }
        checked += 1;
        let bound = crate::gain::phi_neg_pow(t, sched, b) * (-a * t).exp() * v0 * (1.0 + slack);
        if v > bound {
            floor_only += 1;
        }
        worst = worst.max(v - bound - floor);
    }
    let residual = worst.max(0.0);
    let mut verdict = Verdict::new(
        "lyapunov_envelope",
        residual,
        0.0,
        times.first().copied().unwrap_or(0.0),
        json!({ "a": a, "b": b, "slack": slack, "floor": floor, "samples": checked, "above_multiplicative_bound": floor_only }),
    );
    verdict.pass = v0 > 0.0 && worst <= 0.0;
    verdict
}

pub fn check_predicted(traj: &Trajectory, predicted: &PredictedLimit, t: f64, tol: f64) -> Result<Verdict, VerifyError> {
    let i0 = start_index(traj, t)?;
    let residual = traj.x[i0..]
        .iter()
        .flat_map(|x| x.iter().zip(&predicted.limit).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    Ok(Verdict::new(
        "predicted_limit",
        residual,
        tol,
        traj.t[i0],
        json!({ "limit": predicted.limit, "kind": predicted.kind }),
    ))
}

/// Structural property expected for the graph class.
pub fn expected_property(analysis: &GraphAnalysis) -> &'static str {
    match analysis.connectivity {
        Connectivity::Strong if analysis.leaders_balanced() => "bipartite_consensus",
        Connectivity::QuasiStrong if analysis.leaders_balanced() => "interval_bipartite",
        Connectivity::Weak | Connectivity::Disconnected if analysis.any_csc_balanced() => "bipartite_containment",
        _ => "stability",
    }
}

/// Verdict suite for a run: the structural verdict at the settling time, the
/// oracle comparison for undisturbed nominal runs, and the reaching-phase
/// checks for sliding runs.
pub fn verdict_suite(
    scn: &Scenario,
    analysis: &GraphAnalysis,
    traj: &Trajectory,
    tol: f64,
) -> Result<Vec<Verdict>, VerifyError> {
    let settle = scn.params.settling_time();
    let mut out = Vec::new();
    if let Some(g) = scn.params.sliding_gains() {
        out.push(check_sliding_reach(traj, g.tr, tol, g.boundary_layer)?);
        let sigma = traj.sigma.as_ref().ok_or(VerifyError::NoSigma)?;
        let values: Vec<f64> = sigma.iter().map(|s| 0.5 * s.iter().map(|v| v * v).sum::<f64>()).collect();
        let sched = scn.params.reaching_schedule().expect("sliding").expect("validated");
        let floor = 0.5 * traj.n() as f64 * g.boundary_layer * g.boundary_layer;
        if values[0] > 0.0 {
            out.push(check_envelope(&traj.t, &values, 2.0 * g.mu2, 2.0 * g.mu3, &sched, 1e-2, floor));
        }
    }
    let structural = match expected_property(analysis) {
        "bipartite_consensus" => check_bipartite_consensus(traj, settle, tol)?,
        "interval_bipartite" => check_interval_bipartite(traj, analysis, settle, tol)?,
        "bipartite_containment" => check_bipartite_containment(traj, analysis, settle, tol)?,
        _ => check_stability(traj, settle, tol)?,
    };
    out.push(structural);
    if let Ok(pred) = predicted_limits_for(scn, analysis) {
        out.push(check_predicted(traj, &pred, settle, tol)?);
    }
    Ok(out)
}
