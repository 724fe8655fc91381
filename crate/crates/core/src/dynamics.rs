//! Control laws: neighbourhood errors, the nominal prescribed-time protocol,
//! disturbance signals and the sliding-mode protocol.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gain::{GainError, GainSchedule, DEFAULT_GUARD_REL};
use crate::signed_graph::SignedDigraph;

pub const DEFAULT_BOUNDARY_LAYER: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("delta must be non-negative and finite, got {0}")]
    Delta(f64),
    #[error("boundary_layer must be non-negative and finite, got {0}")]
    BoundaryLayer(f64),
    #[error("mu1 = {mu1} must exceed the disturbance bound delta = {delta}")]
    Mu1NotAboveDelta { mu1: f64, delta: f64 },
    #[error("disturbance amplitude {amplitude} exceeds delta = {delta}")]
    AmplitudeAboveDelta { amplitude: f64, delta: f64 },
    #[error("parameters do not describe a sliding-mode run")]
    NotSliding,
    #[error(transparent)]
    Gain(#[from] GainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlidingGains {
    pub tr: f64,
    pub ts: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub delta: f64,
    pub boundary_layer: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum Timing {
    Nominal { t1: f64 },
    Sliding(SlidingGains),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub rho1: f64,
    pub rho2: f64,
    pub kappa: f64,
    /// Singularity guard relative to each clock's horizon.
    pub guard_rel: f64,
    pub timing: Timing,
}

fn positive(name: &'static str, value: f64) -> Result<(), DynamicsError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DynamicsError::NonPositive { name, value })
    }
}

impl ProtocolParams {
    pub fn nominal(rho1: f64, rho2: f64, kappa: f64, t1: f64) -> Result<Self, DynamicsError> {
        let p = Self { rho1, rho2, kappa, guard_rel: DEFAULT_GUARD_REL, timing: Timing::Nominal { t1 } };
        p.validate()?;
        Ok(p)
    }

    pub fn sliding(rho1: f64, rho2: f64, kappa: f64, gains: SlidingGains) -> Result<Self, DynamicsError> {
        let p = Self { rho1, rho2, kappa, guard_rel: DEFAULT_GUARD_REL, timing: Timing::Sliding(gains) };
        p.validate()?;
        Ok(p)
    }

    pub fn with_guard_rel(mut self, guard_rel: f64) -> Result<Self, DynamicsError> {
        self.guard_rel = guard_rel;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        positive("rho1", self.rho1)?;
        positive("rho2", self.rho2)?;
        positive("kappa", self.kappa)?;
        positive("guard_rel", self.guard_rel)?;
        match self.timing {
            Timing::Nominal { t1 } => positive("t1", t1)?,
            Timing::Sliding(s) => {
                positive("tr", s.tr)?;
                positive("ts", s.ts)?;
                positive("mu1", s.mu1)?;
                positive("mu2", s.mu2)?;
                positive("mu3", s.mu3)?;
                if !(s.delta.is_finite() && s.delta >= 0.0) {
                    return Err(DynamicsError::Delta(s.delta));
                }
                if !(s.boundary_layer.is_finite() && s.boundary_layer >= 0.0) {
                    return Err(DynamicsError::BoundaryLayer(s.boundary_layer));
                }
                if s.mu1 <= s.delta {
                    return Err(DynamicsError::Mu1NotAboveDelta { mu1: s.mu1, delta: s.delta });
                }
            }
        }
        self.nominal_schedule()?;
        self.reaching_schedule().transpose()?;
        Ok(())
    }

    pub fn sliding_gains(&self) -> Option<&SlidingGains> {
        match &self.timing {
            Timing::Sliding(s) => Some(s),
            Timing::Nominal { .. } => None,
        }
    }

    /// `T1` for nominal runs, `Tr + Ts` for sliding runs.
    pub fn settling_time(&self) -> f64 {
        match self.timing {
            Timing::Nominal { t1 } => t1,
            Timing::Sliding(s) => s.tr + s.ts,
        }
    }

    fn schedule(&self, horizon: f64) -> Result<GainSchedule, GainError> {
        GainSchedule::with_guard(horizon, self.kappa, self.guard_rel * horizon)
    }

    /// Clock of the nominal term.
    pub fn nominal_schedule(&self) -> Result<GainSchedule, GainError> {
        self.schedule(self.settling_time())
    }

    /// Clock of the disturbance-rejecting term (sliding runs only).
    pub fn reaching_schedule(&self) -> Option<Result<GainSchedule, GainError>> {
        self.sliding_gains().map(|s| self.schedule(s.tr))
    }

    pub fn nominal_factor(&self, ratio: f64) -> f64 {
        self.rho1 + self.rho2 * ratio
    }
}

/// `e_k = sum_l w_kl (x_l - sign(w_kl) x_k)`, evaluated edge by edge.
pub fn neighborhood_error(x: &DVector<f64>, g: &SignedDigraph) -> Result<DVector<f64>, DynamicsError> {
    if x.len() != g.n() {
        return Err(DynamicsError::Dimension { expected: g.n(), got: x.len() });
    }
    let mut e = DVector::zeros(g.n());
    for edge in g.edges() {
        let (k, l, w) = (edge.to, edge.from, edge.weight);
        e[k] += w * (x[l] - w.signum() * x[k]);
    }
    Ok(e)
}

pub fn nominal_control(
    x: &DVector<f64>,
    t: f64,
    g: &SignedDigraph,
    params: &ProtocolParams,
    schedule: &GainSchedule,
) -> Result<DVector<f64>, DynamicsError> {
    let e = neighborhood_error(x, g)?;
    Ok(e * params.nominal_factor(crate::gain::gain_ratio(t, schedule)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Sin,
    Cos,
    Constant,
    Zero,
}

/// Per-agent disturbance `d_k(t) = A wave(omega_k t + phase)` with
/// `omega_k = omega * k` (1-based `k`) when `index_scaled`, else `omega`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub waveform: Waveform,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub omega: f64,
    #[serde(default)]
    pub index_scaled: bool,
    #[serde(default)]
    pub phase: f64,
}

impl DisturbanceSpec {
    pub fn zero() -> Self {
        Self { waveform: Waveform::Zero, amplitude: 0.0, omega: 0.0, index_scaled: false, phase: 0.0 }
    }

    pub fn bound(&self) -> f64 {
        match self.waveform {
            Waveform::Zero => 0.0,
            _ => self.amplitude.abs(),
        }
    }

    fn omega_k(&self, k: usize) -> f64 {
        if self.index_scaled {
            self.omega * (k + 1) as f64
        } else {
            self.omega
        }
    }

    pub fn value(&self, k: usize, t: f64) -> f64 {
        let arg = self.omega_k(k) * t + self.phase;
        match self.waveform {
            Waveform::Sin => self.amplitude * arg.sin(),
            Waveform::Cos => self.amplitude * arg.cos(),
            Waveform::Constant => self.amplitude,
            Waveform::Zero => 0.0,
        }
    }

    /// `int_0^t d_k(s) ds` in closed form.
    pub fn integral(&self, k: usize, t: f64) -> f64 {
        let w = self.omega_k(k);
        let a = self.amplitude;
        match self.waveform {
            Waveform::Zero => 0.0,
            Waveform::Constant => a * t,
            Waveform::Sin if w == 0.0 => a * self.phase.sin() * t,
            Waveform::Cos if w == 0.0 => a * self.phase.cos() * t,
            Waveform::Sin => a / w * (self.phase.cos() - (w * t + self.phase).cos()),
            Waveform::Cos => a / w * ((w * t + self.phase).sin() - self.phase.sin()),
        }
    }
}

pub fn disturbance(t: f64, n: usize, spec: &DisturbanceSpec) -> DVector<f64> {
    DVector::from_fn(n, |k, _| spec.value(k, t))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingState {
    pub varsigma: DVector<f64>,
}

impl SlidingState {
    /// `varsigma(0) = sigma(0) - x(0)`.
    pub fn from_sigma(sigma0: &DVector<f64>, x0: &DVector<f64>) -> Self {
        Self { varsigma: sigma0 - x0 }
    }

    pub fn sigma(&self, x: &DVector<f64>) -> DVector<f64> {
        x + &self.varsigma
    }
}

/// Exact sign (with `sign(0) = 0`) when `layer == 0`, else `clamp(s / layer, -1, 1)`.
pub fn sgn_bl(s: f64, layer: f64) -> f64 {
    if layer > 0.0 {
        (s / layer).clamp(-1.0, 1.0)
    } else if s > 0.0 {
        1.0
    } else if s < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `u_dis = -mu1 sgn(sigma) - (mu2 + mu3 ratio_r) sigma` for a given reaching-clock ratio.
pub fn rejection_term(sigma: &DVector<f64>, gains: &SlidingGains, ratio_r: f64) -> DVector<f64> {
    let lin = gains.mu2 + gains.mu3 * ratio_r;
    sigma.map(|s| -gains.mu1 * sgn_bl(s, gains.boundary_layer) - lin * s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlidingOutput {
    pub u: DVector<f64>,
    pub u_nom: DVector<f64>,
    pub u_dis: DVector<f64>,
    pub varsigma_dot: DVector<f64>,
}

/// Sliding-mode protocol. The nominal term runs on the `Tr + Ts` clock, the
/// rejection term on the `Tr` clock.
pub fn sliding_control(
    x: &DVector<f64>,
    state: &SlidingState,
    t: f64,
    g: &SignedDigraph,
    params: &ProtocolParams,
) -> Result<SlidingOutput, DynamicsError> {
    let gains = params.sliding_gains().ok_or(DynamicsError::NotSliding)?;
    let nom = params.nominal_schedule()?;
    let reach = params.reaching_schedule().ok_or(DynamicsError::NotSliding)??;
    let u_nom = nominal_control(x, t, g, params, &nom)?;
    let u_dis = rejection_term(&state.sigma(x), gains, crate::gain::gain_ratio(t, &reach));
    Ok(SlidingOutput { u: &u_dis + &u_nom, varsigma_dot: -&u_nom, u_nom, u_dis })
}

/// Dense `-L` cached for repeated evaluation.
#[derive(Debug, Clone)]
pub struct ErrorOperator {
    neg_l: DMatrix<f64>,
}

impl ErrorOperator {
    pub fn new(g: &SignedDigraph) -> Self {
        Self { neg_l: -g.laplacian().laplacian }
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.neg_l * x
    }
}
