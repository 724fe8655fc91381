//! Fixed-step RK4 integration of the closed loop with geometric step
//! refinement towards every gain singularity.
//!
//! Within a segment ending at a singular time `A` the integrator tracks the
//! time-to-go `r = A - t` instead of `t`, so it can approach `A` down to the
//! guard interval (far below the spacing of `f64` values near `A`). The guard
//! interval itself is crossed in a fixed number of substeps at the clamped gain.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dynamics::{rejection_term, sgn_bl, DisturbanceSpec, DynamicsError, ProtocolParams, SlidingGains};
use crate::gain::GainSchedule;
use crate::signed_graph::SignedDigraph;

const SHRINK: f64 = 20.0;
const CLAMP_SUBSTEPS: usize = 20;
const STRICT_SIGN_FLOOR: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("non-finite state at t = {t}; try a smaller step h or a larger guard")]
    NonFinite { t: f64 },
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub graph: SignedDigraph,
    pub params: ProtocolParams,
    pub disturbance: DisturbanceSpec,
    pub x0: Vec<f64>,
    /// Required for sliding runs.
    pub sigma0: Option<Vec<f64>>,
    pub t_end: f64,
    pub h: f64,
    /// Record every `stride` base steps (plus every event).
    pub stride: usize,
    /// When false, `u = 0` and only the disturbance drives the state.
    pub protocol_enabled: bool,
}

impl Scenario {
    pub fn nominal(graph: SignedDigraph, params: ProtocolParams, x0: Vec<f64>, t_end: f64, h: f64) -> Self {
        Self {
            graph,
            params,
            disturbance: DisturbanceSpec::zero(),
            x0,
            sigma0: None,
            t_end,
            h,
            stride: 1,
            protocol_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.params.validate()?;
        let n = self.graph.n();
        if self.x0.len() != n {
            return Err(SimError::Invalid(format!("x0 has {} entries, graph has {n} nodes", self.x0.len())));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Invalid("x0 contains non-finite values".into()));
        }
        if !(self.h.is_finite() && self.h > 0.0) {
            return Err(SimError::Invalid(format!("h must be positive, got {}", self.h)));
        }
        if !(self.t_end.is_finite() && self.t_end > 0.0) {
            return Err(SimError::Invalid(format!("t_end must be positive, got {}", self.t_end)));
        }
        if self.t_end < self.params.settling_time() {
            return Err(SimError::Invalid(format!(
                "t_end before settling time ({} < {})",
                self.t_end,
                self.params.settling_time()
            )));
        }
        if self.stride == 0 {
            return Err(SimError::Invalid("stride must be at least 1".into()));
        }
        if let Some(s) = self.params.sliding_gains() {
            match &self.sigma0 {
                None => return Err(SimError::Invalid("sliding runs require sigma0".into())),
                Some(v) if v.len() != n => {
                    return Err(SimError::Invalid(format!("sigma0 has {} entries, graph has {n} nodes", v.len())))
                }
                Some(v) if v.iter().any(|x| !x.is_finite()) => {
                    return Err(SimError::Invalid("sigma0 contains non-finite values".into()))
                }
                _ => {}
            }
            if self.disturbance.bound() > s.delta {
                return Err(DynamicsError::AmplitudeAboveDelta { amplitude: self.disturbance.bound(), delta: s.delta }.into());
            }
        }
        Ok(())
    }

    pub fn is_sliding(&self) -> bool {
        self.params.sliding_gains().is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub label: String,
    pub t: f64,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub sigma: Option<Vec<Vec<f64>>>,
    pub u: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub events: Vec<Event>,
    /// Number of RK4 steps taken.
    pub steps: usize,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.x.first().map_or(0, |x| x.len())
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn t_end(&self) -> f64 {
        self.t.last().copied().unwrap_or(0.0)
    }

    /// First sample at or after `t` (with a relative slack of `1e-12`).
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let slack = 1e-12 * t.abs().max(1.0);
        self.t.iter().position(|&s| s >= t - slack)
    }

    pub fn event(&self, label: &str) -> Option<&Event> {
        self.events.iter().find(|e| e.label == label)
    }

    /// A trajectory from explicit samples; mainly for tests of verdict logic.
    pub fn from_samples(t: Vec<f64>, x: Vec<Vec<f64>>) -> Self {
        let n = x.first().map_or(0, |v| v.len());
        let zeros = vec![vec![0.0; n]; t.len()];
        Self { t, x, sigma: None, u: zeros.clone(), d: zeros, events: Vec::new(), steps: 0 }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.n();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        if self.sigma.is_some() {
            header.extend((1..=n).map(|i| format!("sigma_{i}")));
        }
        header.extend((1..=n).map(|i| format!("u_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let mut row = vec![fmt17(self.t[i])];
            row.extend(self.x[i].iter().map(|&v| fmt17(v)));
            if let Some(s) = &self.sigma {
                row.extend(s[i].iter().map(|&v| fmt17(v)));
            }
            row.extend(self.u[i].iter().map(|&v| fmt17(v)));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Clock horizons and per-stage time-to-go, relative to the current segment anchor.
struct Clocks {
    nominal: GainSchedule,
    reaching: Option<GainSchedule>,
}

struct Model<'a> {
    scn: &'a Scenario,
    neg_l: DMatrix<f64>,
    max_degree: f64,
    clocks: Clocks,
    sliding: Option<SlidingGains>,
    n: usize,
}

struct Eval {
    dy: DVector<f64>,
    u: DVector<f64>,
    d: DVector<f64>,
}

impl<'a> Model<'a> {
    fn new(scn: &'a Scenario) -> Result<Self, SimError> {
        let bundle = scn.graph.laplacian();
        let nominal = scn.params.nominal_schedule().map_err(DynamicsError::from)?;
        let reaching = scn.params.reaching_schedule().transpose().map_err(DynamicsError::from)?;
        Ok(Self {
            scn,
            neg_l: -bundle.laplacian,
            max_degree: bundle.degrees.iter().copied().fold(0.0, f64::max),
            clocks: Clocks { nominal, reaching },
            sliding: scn.params.sliding_gains().copied(),
            n: scn.graph.n(),
        })
    }

    /// `(nominal ratio, reaching ratio)` at a point `r` before anchor `a`.
    fn ratios(&self, anchor: f64, r: f64) -> (f64, f64) {
        let rem = |s: &GainSchedule| (s.horizon() - anchor) + r;
        let nom = self.clocks.nominal.ratio_remaining(rem(&self.clocks.nominal));
        let reach = self.clocks.reaching.as_ref().map_or(0.0, |s| s.ratio_remaining(rem(s)));
        (nom, reach)
    }

    fn eval(&self, anchor: f64, r: f64, y: &DVector<f64>) -> Eval {
        let n = self.n;
        let t = anchor - r;
        let (ratio_nom, ratio_reach) = self.ratios(anchor, r);
        let d = DVector::from_fn(n, |k, _| self.scn.disturbance.value(k, t));
        let x = y.rows(0, n).into_owned();
        let mut dy = DVector::zeros(y.len());
        if !self.scn.protocol_enabled {
            dy.rows_mut(0, n).copy_from(&d);
            return Eval { dy, u: DVector::zeros(n), d };
        }
        let u_nom = (&self.neg_l * &x) * self.scn.params.nominal_factor(ratio_nom);
        match &self.sliding {
            None => {
                dy.rows_mut(0, n).copy_from(&(&u_nom + &d));
                Eval { dy, u: u_nom, d }
            }
            Some(gains) => {
                let sigma = &x + y.rows(n, n);
                let u = rejection_term(&sigma, gains, ratio_reach) + &u_nom;
                dy.rows_mut(0, n).copy_from(&(&u + &d));
                dy.rows_mut(n, n).copy_from(&(-&u_nom));
                Eval { dy, u, d }
            }
        }
    }

    /// Largest stable step at the current point.
    fn step_cap(&self, anchor: f64, r: f64, y: &DVector<f64>) -> f64 {
        let h = self.scn.h;
        if !self.scn.protocol_enabled {
            return h;
        }
        let (ratio_nom, ratio_reach) = self.ratios(anchor, r);
        let mut stiffness = 2.0 * self.max_degree * self.scn.params.nominal_factor(ratio_nom);
        let mut cap = h;
        if let Some(g) = &self.sliding {
            stiffness += g.mu2 + g.mu3 * ratio_reach;
            if g.boundary_layer > 0.0 {
                stiffness += g.mu1 / g.boundary_layer;
            } else {
                // Strict sign: limit the overshoot across sigma = 0.
                let n = self.n;
                let e = self.eval(anchor, r, y);
                let sigma_dot = e.dy.rows(0, n) + e.dy.rows(n, n);
                let mut crossing = f64::INFINITY;
                for k in 0..n {
                    let s = y[k] + y[n + k];
                    if sigma_dot[k] != 0.0 && sgn_bl(s, 0.0) != 0.0 {
                        crossing = crossing.min(s.abs() / sigma_dot[k].abs());
                    }
                }
                cap = cap.min(crossing.max(STRICT_SIGN_FLOOR * h));
            }
        }
        if stiffness > 0.0 {
            cap = cap.min(1.0 / stiffness);
        }
        cap
    }

    fn rk4(&self, anchor: f64, r: f64, h: f64, y: &DVector<f64>, floor: f64) -> DVector<f64> {
        let at = |c: f64| (r - c * h).max(floor);
        let k1 = self.eval(anchor, at(0.0), y).dy;
        let k2 = self.eval(anchor, at(0.5), &(y + &k1 * (0.5 * h))).dy;
        let k3 = self.eval(anchor, at(0.5), &(y + &k2 * (0.5 * h))).dy;
        let k4 = self.eval(anchor, at(1.0), &(y + &k3 * h)).dy;
        y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
    }
}

struct Recorder {
    traj: Trajectory,
    n: usize,
}

impl Recorder {
    fn push(&mut self, t: f64, y: &DVector<f64>, e: &Eval) {
        let n = self.n;
        if let Some(&last) = self.traj.t.last() {
            if t <= last {
                return;
            }
        }
        self.traj.t.push(t);
        self.traj.x.push(y.rows(0, n).iter().copied().collect());
        if let Some(s) = &mut self.traj.sigma {
            s.push((0..n).map(|k| y[k] + y[n + k]).collect());
        }
        self.traj.u.push(e.u.iter().copied().collect());
        self.traj.d.push(e.d.iter().copied().collect());
    }

    fn mark(&mut self, label: &str, t: f64) {
        let index = self.traj.t.len() - 1;
        self.traj.events.push(Event { label: label.to_string(), t, index });
    }
}

fn check_finite(y: &DVector<f64>, t: f64) -> Result<(), SimError> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SimError::NonFinite { t })
    }
}

pub fn simulate(scn: &Scenario) -> Result<Trajectory, SimError> {
    scn.validate()?;
    let model = Model::new(scn)?;
    let n = model.n;
    let sliding = scn.is_sliding();

    let x0 = DVector::from_column_slice(&scn.x0);
    let mut y = if sliding {
        let sigma0 = DVector::from_column_slice(scn.sigma0.as_ref().expect("validated"));
        let mut y = DVector::zeros(2 * n);
        y.rows_mut(0, n).copy_from(&x0);
        y.rows_mut(n, n).copy_from(&(sigma0 - &x0));
        y
    } else {
        x0
    };

    // Singular times, ascending.
    let mut singular: Vec<(f64, &str)> = Vec::new();
    if let Some(reach) = &model.clocks.reaching {
        singular.push((reach.horizon(), "reaching"));
    }
    singular.push((model.clocks.nominal.horizon(), "settling"));

    let dt_rec = scn.h * scn.stride as f64;
    let mut rec = Recorder {
        traj: Trajectory {
            t: Vec::new(),
            x: Vec::new(),
            sigma: sliding.then(Vec::new),
            u: Vec::new(),
            d: Vec::new(),
            events: Vec::new(),
            steps: 0,
        },
        n,
    };
    let first_anchor = singular[0].0;
    rec.push(0.0, &y, &model.eval(first_anchor, first_anchor, &y));

    let mut segments: Vec<(f64, Option<&str>)> = singular.iter().map(|&(a, l)| (a, Some(l))).collect();
    if scn.t_end > segments.last().expect("non-empty").0 {
        segments.push((scn.t_end, None));
    }

    let mut t0 = 0.0;
    let mut j = 1usize;
    for (anchor, label) in segments {
        // Record grid strictly inside (t0, anchor), kept clear of the anchor.
        let mut stops = Vec::new();
        loop {
            let g = j as f64 * dt_rec;
            if g >= anchor - 1e-9 * dt_rec {
                break;
            }
            if g > t0 + 1e-9 * dt_rec {
                stops.push(g);
            }
            j += 1;
        }
        let floor = if label.is_some() {
            model.clocks_guard(anchor)
        } else {
            0.0
        };

        let mut r = anchor - t0;
        let mut next = 0;
        loop {
            let (target_r, target_t) = match stops.get(next) {
                Some(&g) => (anchor - g, Some(g)),
                None => (floor, None),
            };
            let mut h = model.step_cap(anchor, r, &y);
            if label.is_some() {
                h = h.min(r / SHRINK);
            }
            let hit = r - h <= target_r;
            if hit {
                h = r - target_r;
            }
            if h > 0.0 {
                y = model.rk4(anchor, r, h, &y, 0.0);
                rec.traj.steps += 1;
            }
            r = if hit { target_r } else { r - h };
            check_finite(&y, anchor - r)?;
            if hit {
                match target_t {
                    Some(g) => {
                        rec.push(g, &y, &model.eval(anchor, r, &y));
                        next += 1;
                    }
                    None => break,
                }
            }
        }

        if label.is_some() {
            // Cross the guard interval at the clamped gain.
            let hs = r / CLAMP_SUBSTEPS as f64;
            for _ in 0..CLAMP_SUBSTEPS {
                y = model.rk4(anchor, r, hs, &y, f64::MIN_POSITIVE);
                r -= hs;
                rec.traj.steps += 1;
            }
            check_finite(&y, anchor)?;
        }
        rec.push(anchor, &y, &model.eval(anchor, 0.0, &y));
        if let Some(l) = label {
            rec.mark(l, anchor);
        }
        t0 = anchor;
    }
    rec.mark("end", scn.t_end);
    Ok(rec.traj)
}

impl Model<'_> {
    fn clocks_guard(&self, anchor: f64) -> f64 {
        if anchor == self.clocks.nominal.horizon() {
            return self.clocks.nominal.guard();
        }
        self.clocks
            .reaching
            .as_ref()
            .filter(|s| s.horizon() == anchor)
            .map_or(0.0, |s| s.guard())
    }
}

/// Runs scenarios independently, optionally on a pool of `jobs` threads.
/// Results keep the input order.
pub fn batch(scenarios: &[Scenario], jobs: Option<usize>) -> Vec<Result<Trajectory, SimError>> {
    let run = || scenarios.par_iter().map(simulate).collect::<Vec<_>>();
    match jobs {
        Some(j) => match rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build() {
            Ok(pool) => pool.install(run),
            Err(_) => scenarios.iter().map(simulate).collect(),
        },
        None => run(),
    }
}
