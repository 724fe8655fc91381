//! Prescribed-time gain `phi(t, T) = T^k / (T - t)^k` on `[0, T)`, `1` afterwards.
//!
//! The gain diverges at `T`. Evaluation is regularised by a guard interval
//! `[T - guard, T)` on which the gain is held at its value at `T - guard`.
//! Callers that track the time-to-go `T - t` directly (the simulator does, so
//! that it can approach `T` far below the resolution of `t` itself) should use
//! the `*_remaining` variants.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default guard, relative to the horizon.
///
/// The decay produced by the gain is only polynomial in the time-to-go, with
/// exponent `rho2 * kappa * lambda`. A guard of `1e-6 T` leaves residuals of
/// order `1e-2` for slow modes, so the default reaches far closer to `T`.
pub const DEFAULT_GUARD_REL: f64 = 1e-300;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainError {
    #[error("settling time must be positive and finite, got {0}")]
    Horizon(f64),
    #[error("kappa must be positive and finite, got {0}")]
    Kappa(f64),
    #[error("guard must satisfy 0 < guard < T, got {guard} for T = {horizon}")]
    Guard { guard: f64, horizon: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    horizon: f64,
    kappa: f64,
    guard: f64,
}

impl GainSchedule {
    pub fn new(horizon: f64, kappa: f64) -> Result<Self, GainError> {
        Self::with_guard(horizon, kappa, DEFAULT_GUARD_REL * horizon)
    }

    pub fn with_guard(horizon: f64, kappa: f64, guard: f64) -> Result<Self, GainError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(GainError::Horizon(horizon));
        }
        if !(kappa.is_finite() && kappa > 0.0) {
            return Err(GainError::Kappa(kappa));
        }
        if !(guard.is_normal() && guard > 0.0 && guard < horizon) {
            return Err(GainError::Guard { guard, horizon });
        }
        Ok(Self { horizon, kappa, guard })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn guard(&self) -> f64 {
        self.guard
    }

    /// Decay proofs for this gain family assume `kappa > 2`; smaller values
    /// are accepted but flagged.
    pub fn notice(&self) -> Option<String> {
        (self.kappa <= 2.0).then(|| {
            format!("kappa = {} <= 2: outside the classical range kappa > 2", self.kappa)
        })
    }

    fn clamped_remaining(&self, remaining: f64) -> f64 {
        remaining.max(self.guard)
    }

    /// `phi` given the time-to-go `T - t`.
    pub fn phi_remaining(&self, remaining: f64) -> f64 {
        if remaining <= 0.0 {
            return 1.0;
        }
        (self.horizon / self.clamped_remaining(remaining)).powf(self.kappa)
    }

    /// `phi^(-b)`, computed without forming `phi` (which may overflow).
    pub fn phi_neg_pow_remaining(&self, remaining: f64, b: f64) -> f64 {
        if remaining <= 0.0 {
            return 1.0;
        }
        (self.clamped_remaining(remaining) / self.horizon).powf(self.kappa * b)
    }

    /// `phi_dot / phi = kappa / (T - t)` given the time-to-go.
    pub fn ratio_remaining(&self, remaining: f64) -> f64 {
        if remaining <= 0.0 {
            return 0.0;
        }
        self.kappa / self.clamped_remaining(remaining)
    }
}

pub fn phi(t: f64, sched: &GainSchedule) -> f64 {
    sched.phi_remaining(sched.horizon - t)
}

/// `phi_dot / phi` in closed form; zero for `t >= T`.
pub fn gain_ratio(t: f64, sched: &GainSchedule) -> f64 {
    sched.ratio_remaining(sched.horizon - t)
}

pub fn phi_neg_pow(t: f64, sched: &GainSchedule, b: f64) -> f64 {
    sched.phi_neg_pow_remaining(sched.horizon - t, b)
}
