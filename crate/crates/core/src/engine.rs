//! Deterministic event-driven co-simulation of plant, sensors and
//! controller.
//!
//! The continuous state advances by fixed RK4 steps under the input held by
//! the controller. Steps are cut at check ticks, message deliveries and
//! delayed threshold activations. Trigger crossings inside a step are
//! located on a cubic Hermite interpolant and the step is redone up to the
//! located time.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::certificate::{
    self, compute_rho, norm, CertificateError, GainSummary, DEFAULT_RHO_GRID, RHO_SAFETY_FACTOR,
};
use crate::plant::{preset, DisturbanceSignal, DisturbanceSpec, PlantError, PlantModel};
use crate::protocol::{fmt_f64, initial_eta, log_line, ControllerState, ProtocolError, WireMessage};
use crate::triggering::{check_trigger, uniform_theta, SensorState, ThresholdSchedule, TriggerDecision, TriggerError};

pub const DEFAULT_EVENT_TOL: f64 = 1e-10;
pub const MAX_STEP: f64 = 1e-3;
pub const STEP_DIVISOR: f64 = 20.0;
/// Events tolerated in any unit-length time window before giving up.
pub const ZENO_LIMIT: usize = 1_000_000;
/// Interpolant samples per step scanned before bisecting.
pub const CROSSING_SUBSAMPLES: usize = 8;
/// Fallback initial threshold when the state starts at the origin.
pub const ETA0_FLOOR: f64 = 1e-6;
const DEFAULT_SAMPLES: f64 = 20_000.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("more than {events} events within one time unit ending at t = {t}; Zeno behaviour suspected")]
    ZenoSuspected { t: f64, events: usize },
    #[error("delay {delay} exceeds the configured budget {max}")]
    DelayBudgetExceeded { delay: f64, max: f64 },
    #[error("rho = {rho} is not above the admissible minimum {minimum}")]
    RhoNotAdmissible { rho: f64, minimum: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
    #[error(transparent)]
    Trigger(#[from] TriggerError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum DelayModel {
    None,
    Constant(f64),
    /// Independent per-message delays drawn uniformly from `[0, max]`.
    Uniform { max: f64 },
}

impl DelayModel {
    pub fn max_delay(&self) -> f64 {
        match *self {
            DelayModel::None => 0.0,
            DelayModel::Constant(d) => d,
            DelayModel::Uniform { max } => max,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub plant: String,
    pub x0: Vec<f64>,
    /// Split weights; uniform `1/√n` when absent.
    pub theta: Option<Vec<f64>>,
    pub mu: f64,
    /// Shrink gain; computed from the certificate when absent.
    pub rho: Option<f64>,
    pub tau_c: f64,
    /// Initial threshold; the smallest admissible value when absent.
    pub eta0: Option<f64>,
    /// Threshold floor. Setting it at or above `eta0` freezes the threshold.
    pub eta_min: f64,
    pub t0: f64,
    pub horizon: f64,
    /// Integrator step; derived from the transmission-time bounds when absent.
    pub step: Option<f64>,
    /// Crossing tolerance, relative to the local threshold.
    pub event_tol: f64,
    pub sample_interval: Option<f64>,
    pub delay: DelayModel,
    /// Shrinks trigger thresholds so that the plant-side error respects the
    /// unreduced threshold despite delivery delays.
    pub delay_compensation: bool,
    pub disturbance: Option<DisturbanceSignal>,
    pub seed: u64,
    /// Delay each sensor's threshold switch after a shrink.
    pub shift: bool,
    pub rho_grid: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            plant: "example1".into(),
            x0: vec![0.0],
            theta: None,
            mu: 0.82,
            rho: None,
            tau_c: 1.0,
            eta0: None,
            eta_min: 0.0,
            t0: 0.0,
            horizon: 10.0,
            step: None,
            event_tol: DEFAULT_EVENT_TOL,
            sample_interval: None,
            delay: DelayModel::None,
            delay_compensation: true,
            disturbance: None,
            seed: 0,
            shift: true,
            rho_grid: DEFAULT_RHO_GRID,
        }
    }
}

impl SimConfig {
    /// Scalar saturated integrator starting at −10.
    pub fn example1() -> Self {
        Self {
            plant: "example1".into(),
            x0: vec![-10.0],
            mu: 0.82,
            rho: Some(4.1),
            tau_c: 1.0,
            horizon: 30.0,
            delay: DelayModel::Constant(0.002),
            ..Self::default()
        }
    }

    /// Four-state plant with matched nonlinearity.
    pub fn example2() -> Self {
        Self {
            plant: "example2".into(),
            x0: vec![0.0, 0.8, 0.7, 0.75],
            mu: 0.85,
            rho: Some(253.0),
            tau_c: 0.25,
            horizon: 20.0,
            delay: DelayModel::Constant(2e-5),
            sample_interval: Some(1e-3),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if self.x0.is_empty() || self.x0.iter().any(|v| !v.is_finite()) {
            return bad("x0 must be a non-empty finite vector".into());
        }
        certificate::check_mu(self.mu)?;
        if !(self.tau_c > 0.0) || !self.tau_c.is_finite() {
            return bad(format!("tau_c must be positive, got {}", self.tau_c));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        if !(self.eta_min >= 0.0) || !self.eta_min.is_finite() {
            return bad(format!("eta_min must be non-negative, got {}", self.eta_min));
        }
        if !(self.event_tol > 0.0) {
            return bad(format!("event_tol must be positive, got {}", self.event_tol));
        }
        for (name, v) in [("rho", self.rho), ("eta0", self.eta0), ("step", self.step), ("sample_interval", self.sample_interval)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        let d = self.delay.max_delay();
        if !(d >= 0.0) || !d.is_finite() {
            return bad(format!("delay must be non-negative, got {d}"));
        }
        if self.rho_grid < 100 {
            return bad(format!("rho_grid must be at least 100, got {}", self.rho_grid));
        }
        Ok(())
    }
}

/// Every analytic quantity a run is designed and checked against.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub n: usize,
    pub rho: f64,
    pub rho_auto: bool,
    /// Grid supremum of the growth ratio, without the safety inflation.
    pub rho_min: Option<f64>,
    pub mu: f64,
    pub kappa: f64,
    pub v0: f64,
    pub eta0: f64,
    pub eta0_min: f64,
    pub eta0_auto: bool,
    pub eta_min: f64,
    /// False when the floor prevents any shrink.
    pub shrinking: bool,
    pub theta: Vec<f64>,
    pub lipschitz: Vec<f64>,
    pub n_d: f64,
    pub delay_max: f64,
    pub delay_ceiling: Vec<f64>,
    /// `1 − L(κ+1)Δτ`, or 1 without compensation.
    pub delay_factor: Vec<f64>,
    /// Within-epoch bound, disturbed when a disturbance is configured.
    pub tau_star: Vec<f64>,
    /// Bound across a shrink.
    pub tau_tilde: Vec<f64>,
    /// Constant-threshold bound at `eta0`.
    pub tau_constant: Vec<f64>,
    /// Within-epoch bound after the delay reduction.
    pub guaranteed_within_epoch: Vec<f64>,
    /// Bound on every gap of the run.
    pub guaranteed_gap: Vec<f64>,
    pub shift_delays: Vec<f64>,
    pub step: f64,
    pub sample_interval: f64,
}

impl Design {
    pub fn new(model: &PlantModel, cfg: &SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let n = model.n();
        if cfg.x0.len() != n {
            return Err(SimError::InvalidConfig(format!(
                "x0 has {} entries but plant `{}` has {n} states",
                cfg.x0.len(),
                model.name()
            )));
        }
        let cert = model.certificate();
        let theta = cfg.theta.clone().unwrap_or_else(|| uniform_theta(n));
        if theta.len() != n {
            return Err(SimError::InvalidConfig(format!("theta needs {n} entries, got {}", theta.len())));
        }
        let v0 = cert.lyapunov(&cfg.x0);
        let reach0 = cert.alpha_lower.invert(v0)?;
        let mu = cfg.mu;

        let grid_top = cfg.eta0.unwrap_or(if reach0 > 0.0 { reach0 } else { 1.0 });
        let rho_grid = compute_rho(cert, grid_top, cfg.rho_grid);
        let rho_min = rho_grid.as_ref().ok().map(|r| r / RHO_SAFETY_FACTOR);
        let (rho, rho_auto) = match cfg.rho {
            Some(r) => (r, false),
            None => (rho_grid.clone()?, true),
        };

        let eta0_min = initial_eta(v0, rho, mu, cert)?;
        let (eta0, eta0_auto) = match cfg.eta0 {
            Some(e) => (e, false),
            None => {
                let floor = if cfg.eta_min > 0.0 { cfg.eta_min } else { ETA0_FLOOR };
                let e = if eta0_min > 0.0 { eta0_min } else { floor };
                (e.max(cfg.eta_min), true)
            }
        };
        let shrinking = mu * eta0 >= cfg.eta_min && cfg.eta_min < eta0;
        if shrinking {
            if let Some(minimum) = rho_min {
                if rho <= minimum {
                    return Err(SimError::RhoNotAdmissible { rho, minimum });
                }
            }
            GainSummary::new(cert, rho, mu, eta0, v0)?;
        }
        let kappa = rho / mu;

        let spec = cfg.disturbance.clone().map(|s| DisturbanceSpec::new(s, cfg.eta_min));
        let n_d = spec.as_ref().map_or(0.0, |s| s.n_d);
        let delay_max = cfg.delay.max_delay();

        let mut out = Design {
            n,
            rho,
            rho_auto,
            rho_min,
            mu,
            kappa,
            v0,
            eta0,
            eta0_min,
            eta0_auto,
            eta_min: cfg.eta_min,
            shrinking,
            theta: theta.clone(),
            lipschitz: cert.lipschitz_per_coord().to_vec(),
            n_d,
            delay_max,
            delay_ceiling: vec![0.0; n],
            delay_factor: vec![1.0; n],
            tau_star: vec![0.0; n],
            tau_tilde: vec![0.0; n],
            tau_constant: vec![0.0; n],
            guaranteed_within_epoch: vec![0.0; n],
            guaranteed_gap: vec![0.0; n],
            shift_delays: vec![0.0; n],
            step: 0.0,
            sample_interval: 0.0,
        };
        let mut undisturbed_step = f64::INFINITY;
        for i in 0..n {
            let l = cert.lipschitz(i);
            out.delay_ceiling[i] = certificate::delay_ceiling(l, kappa);
            if cfg.delay_compensation && delay_max > 0.0 {
                out.delay_factor[i] = certificate::delay_adjusted_threshold(1.0, l, kappa, delay_max)?;
            }
            let f = out.delay_factor[i];
            let steady = certificate::steady_intertransmission_time(cert, theta[i], kappa, i)?;
            out.tau_star[i] = if n_d > 0.0 {
                certificate::disturbed_intertransmission_time(cert, theta[i], kappa, n_d, i)?
            } else {
                steady
            };
            out.tau_tilde[i] = if out.tau_star[i] > 0.0 {
                certificate::shifted_intertransmission_time(out.tau_star[i], mu)?
            } else {
                0.0
            };
            out.tau_constant[i] = certificate::min_intertransmission_time(cert, theta[i], eta0, v0, i)?;
            out.guaranteed_within_epoch[i] = f * out.tau_star[i];
            out.guaranteed_gap[i] = if !shrinking {
                f * out.tau_constant[i]
            } else if cfg.shift {
                f * out.tau_tilde[i]
            } else {
                0.0
            };
            if shrinking && cfg.shift {
                out.shift_delays[i] = f * out.tau_tilde[i];
            }
            let base = if shrinking {
                certificate::shifted_intertransmission_time(steady, mu)?
            } else {
                out.tau_constant[i]
            };
            undisturbed_step = undisturbed_step.min(f * base);
        }
        let gap_min = out.guaranteed_gap.iter().copied().fold(f64::INFINITY, f64::min);
        let derived = if gap_min > 0.0 { gap_min } else { undisturbed_step };
        out.step = cfg.step.unwrap_or((derived / STEP_DIVISOR).min(MAX_STEP));
        out.sample_interval = cfg
            .sample_interval
            .unwrap_or_else(|| (cfg.horizon / DEFAULT_SAMPLES).max(out.step));
        Ok(out)
    }

    /// Flat `key = value` report of the bound chain.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let opt = |v: Option<f64>| v.map_or_else(|| "unbounded".to_string(), fmt_f64);
        let _ = writeln!(s, "rho = {}", fmt_f64(self.rho));
        let _ = writeln!(s, "rho_source = {}", if self.rho_auto { "auto" } else { "config" });
        let _ = writeln!(s, "rho_min = {}", opt(self.rho_min));
        let _ = writeln!(s, "rho_admissible = {}", self.rho_min.map_or(true, |m| self.rho > m));
        let _ = writeln!(s, "mu = {}", fmt_f64(self.mu));
        let _ = writeln!(s, "kappa = {}", fmt_f64(self.kappa));
        let _ = writeln!(s, "v0 = {}", fmt_f64(self.v0));
        let _ = writeln!(s, "eta0 = {}", fmt_f64(self.eta0));
        let _ = writeln!(s, "eta0_min = {}", fmt_f64(self.eta0_min));
        let _ = writeln!(s, "eta_min = {}", fmt_f64(self.eta_min));
        let _ = writeln!(s, "mode = {}", if self.shrinking { "shrinking" } else { "fixed" });
        let _ = writeln!(s, "n_d = {}", fmt_f64(self.n_d));
        let _ = writeln!(s, "delay_max = {}", fmt_f64(self.delay_max));
        for i in 0..self.n {
            let k = i + 1;
            let _ = writeln!(s, "sensor{k}.lipschitz = {}", fmt_f64(self.lipschitz[i]));
            let _ = writeln!(s, "sensor{k}.tau_star = {}", fmt_f64(self.tau_star[i]));
            let _ = writeln!(s, "sensor{k}.tau_tilde = {}", fmt_f64(self.tau_tilde[i]));
            let _ = writeln!(s, "sensor{k}.tau_constant = {}", fmt_f64(self.tau_constant[i]));
            let _ = writeln!(s, "sensor{k}.delay_ceiling = {}", fmt_f64(self.delay_ceiling[i]));
            let _ = writeln!(s, "sensor{k}.eta_bar_factor = {}", fmt_f64(self.delay_factor[i]));
            let _ = writeln!(s, "sensor{k}.guaranteed_gap = {}", fmt_f64(self.guaranteed_gap[i]));
        }
        let _ = writeln!(s, "step = {}", fmt_f64(self.step));
        s
    }
}

/// One classical RK4 step of `ẋ = F(t, x)` with a precomputed first stage.
fn rk4_with_k1<F>(f: &F, t: f64, x: &[f64], k1: &[f64], h: f64, s: &mut Scratch, out: &mut [f64])
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = x.len();
    let half = 0.5 * h;
    for j in 0..n {
        s.tmp[j] = x[j] + half * k1[j];
    }
    f(t + half, &s.tmp, &mut s.k2);
    for j in 0..n {
        s.tmp[j] = x[j] + half * s.k2[j];
    }
    f(t + half, &s.tmp, &mut s.k3);
    for j in 0..n {
        s.tmp[j] = x[j] + h * s.k3[j];
    }
    f(t + h, &s.tmp, &mut s.k4);
    for j in 0..n {
        out[j] = x[j] + h / 6.0 * (k1[j] + 2.0 * s.k2[j] + 2.0 * s.k3[j] + s.k4[j]);
    }
}

#[derive(Debug, Clone)]
struct Scratch {
    tmp: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Self {
            tmp: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
        }
    }
}

/// One RK4 step of `ẋ = f(x, k(x_held)) + d` with the input held fixed.
pub fn integrate_step(
    model: &PlantModel,
    x: &[f64],
    x_held: &[f64],
    d: Option<&[f64]>,
    h: f64,
) -> Result<Vec<f64>, SimError> {
    let mut u = vec![0.0; model.m()];
    model.dynamics().control(x_held, &mut u);
    let field = |_t: f64, y: &[f64], out: &mut [f64]| {
        model.dynamics().field(y, &u, out);
        if let Some(d) = d {
            out.iter_mut().zip(d).for_each(|(o, di)| *o += di);
        }
    };
    let n = x.len();
    let mut k1 = vec![0.0; n];
    field(0.0, x, &mut k1);
    let mut out = vec![0.0; n];
    rk4_with_k1(&field, 0.0, x, &k1, h, &mut Scratch::new(n), &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFiniteState { t: h });
    }
    Ok(out)
}

/// Cubic Hermite interpolant of one integration step.
#[derive(Debug, Clone, Copy)]
pub struct HermiteSegment<'a> {
    pub t0: f64,
    pub t1: f64,
    pub x0: &'a [f64],
    pub x1: &'a [f64],
    pub f0: &'a [f64],
    pub f1: &'a [f64],
}

impl HermiteSegment<'_> {
    /// Coordinate `i` at time `t ∈ [t0, t1]`; exact at both ends.
    pub fn eval(&self, i: usize, t: f64) -> f64 {
        if t >= self.t1 {
            return self.x1[i];
        }
        if t <= self.t0 {
            return self.x0[i];
        }
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.x0[i] + h10 * h * self.f0[i] + h01 * self.x1[i] + h11 * h * self.f1[i]
    }
}

/// Earliest `t* ∈ (t0, t1]` at which `(held − xᵢ(t))² ≥ ηᵢ` on the
/// interpolant, refined until the squared error is within `tol·ηᵢ` of the
/// threshold. The returned time always lies on the triggered side.
pub fn locate_crossing(seg: &HermiteSegment<'_>, i: usize, held: f64, eta_i: f64, tol: f64) -> Option<f64> {
    let g = |t: f64| {
        let e = held - seg.eval(i, t);
        e * e - eta_i
    };
    if g(seg.t0) >= 0.0 {
        return Some(seg.t0);
    }
    let h = seg.t1 - seg.t0;
    let mut lo = seg.t0;
    let mut hi = None;
    for k in 1..=CROSSING_SUBSAMPLES {
        let t = if k == CROSSING_SUBSAMPLES {
            seg.t1
        } else {
            seg.t0 + h * k as f64 / CROSSING_SUBSAMPLES as f64
        };
        if g(t) >= 0.0 {
            hi = Some(t);
            break;
        }
        lo = t;
    }
    let mut hi = hi?;
    let stop = tol * eta_i;
    for _ in 0..200 {
        if g(hi) <= stop {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Delivery time of a message sent at `t_sent` with the given delay.
pub fn apply_delay(t_sent: f64, delay: f64, budget: f64) -> Result<f64, SimError> {
    if !(delay >= 0.0) || delay > budget {
        return Err(SimError::DelayBudgetExceeded { delay, max: budget });
    }
    Ok(t_sent + delay)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventCause {
    /// The error reached the threshold while the threshold was constant.
    Crossing,
    /// A smaller threshold became active and the error already exceeded it.
    Activation,
}

/// Where a located crossing's integration step started, enough to replay it.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingSegment {
    pub t0: f64,
    pub x0: Vec<f64>,
    /// Controller-held state driving the input over the step.
    pub x_hat: Vec<f64>,
    pub step: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub sensor: usize,
    pub t: f64,
    pub bit: u8,
    /// Held value after the event.
    pub value: f64,
    pub held_before: f64,
    pub threshold: f64,
    /// Epoch whose threshold the sensor enforced.
    pub threshold_epoch: usize,
    pub delivered_at: f64,
    pub cause: EventCause,
    pub segment: Option<CrossingSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShrinkRecord {
    pub t: f64,
    pub epoch: usize,
    pub eta_before: f64,
    pub eta_after: f64,
    pub v_at_command: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub v: f64,
    /// Controller threshold `η`.
    pub eta: f64,
    /// Plant-side error `|ξ̂ − ξ|`.
    pub eps_hat_norm: f64,
    /// `√(Σᵢ ηᵢ(t))` over the unreduced local thresholds the sensors
    /// enforce; lags `eta` by the shift after a shrink.
    pub eta_enforced: f64,
    pub x_hat: Vec<f64>,
    pub held: Vec<f64>,
    pub in_flight: usize,
    /// Whether messages were processed at this instant.
    pub after_messages: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub msg: WireMessage,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorSummary {
    pub events: usize,
    pub min_gap: Option<f64>,
    pub mean_gap: Option<f64>,
    pub min_gap_within_epoch: Option<f64>,
    pub min_gap_across_epochs: Option<f64>,
    pub guaranteed_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub sensors: Vec<SensorSummary>,
    pub epochs: usize,
    pub shrink_times: Vec<f64>,
    pub final_time: f64,
    pub final_norm: f64,
    pub final_v: f64,
    pub min_gap: Option<f64>,
    pub steps: u64,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub n: usize,
    pub design: Design,
    pub samples: Vec<Sample>,
    pub events: Vec<EventRecord>,
    pub shrinks: Vec<ShrinkRecord>,
    pub log: Vec<LogEntry>,
    pub steps: u64,
}

fn fold_min(acc: Option<f64>, v: f64) -> Option<f64> {
    Some(acc.map_or(v, |a| a.min(v)))
}

impl Trace {
    pub fn final_sample(&self) -> &Sample {
        self.samples.last().expect("trace always holds the initial sample")
    }

    /// Event times of sensor `i`.
    pub fn event_times(&self, i: usize) -> Vec<f64> {
        self.events.iter().filter(|e| e.sensor == i).map(|e| e.t).collect()
    }

    /// Consecutive inter-event gaps of sensor `i`, each flagged with whether
    /// both events enforced the same epoch's threshold.
    pub fn gaps(&self, i: usize) -> Vec<(f64, bool)> {
        let ev: Vec<&EventRecord> = self.events.iter().filter(|e| e.sensor == i).collect();
        ev.windows(2)
            .map(|w| (w[1].t - w[0].t, w[0].threshold_epoch == w[1].threshold_epoch))
            .collect()
    }

    pub fn summary(&self) -> Summary {
        let mut sensors = Vec::with_capacity(self.n);
        let mut overall = None;
        for i in 0..self.n {
            let gaps = self.gaps(i);
            let mut s = SensorSummary {
                events: self.events.iter().filter(|e| e.sensor == i).count(),
                min_gap: None,
                mean_gap: None,
                min_gap_within_epoch: None,
                min_gap_across_epochs: None,
                guaranteed_gap: self.design.guaranteed_gap[i],
            };
            for &(g, same) in &gaps {
                s.min_gap = fold_min(s.min_gap, g);
                if same {
                    s.min_gap_within_epoch = fold_min(s.min_gap_within_epoch, g);
                } else {
                    s.min_gap_across_epochs = fold_min(s.min_gap_across_epochs, g);
                }
            }
            if !gaps.is_empty() {
                s.mean_gap = Some(gaps.iter().map(|g| g.0).sum::<f64>() / gaps.len() as f64);
            }
            if let Some(g) = s.min_gap {
                overall = fold_min(overall, g);
            }
            sensors.push(s);
        }
        let last = self.final_sample();
        Summary {
            sensors,
            epochs: self.shrinks.len(),
            shrink_times: self.shrinks.iter().map(|s| s.t).collect(),
            final_time: last.t,
            final_norm: norm(&last.x),
            final_v: last.v,
            min_gap: overall,
            steps: self.steps,
        }
    }

    /// `t,x_1..x_n,V,eta,eps_hat_norm`, 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.samples.len() * (self.n + 4) * 25);
        s.push('t');
        for i in 1..=self.n {
            let _ = write!(s, ",x_{i}");
        }
        s.push_str(",V,eta,eps_hat_norm\n");
        for smp in &self.samples {
            s.push_str(&fmt_f64(smp.t));
            for v in &smp.x {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            let _ = writeln!(s, ",{},{},{}", fmt_f64(smp.v), fmt_f64(smp.eta), fmt_f64(smp.eps_hat_norm));
        }
        s
    }

    pub fn event_log(&self) -> String {
        let mut s = String::with_capacity(self.log.len() * 100);
        for e in &self.log {
            s.push_str(&log_line(&e.msg, e.value));
            s.push('\n');
        }
        s
    }

    pub fn summary_text(&self) -> String {
        let sum = self.summary();
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), fmt_f64);
        let mut s = String::new();
        let _ = writeln!(s, "final_time = {}", fmt_f64(sum.final_time));
        let _ = writeln!(s, "final_norm = {}", fmt_f64(sum.final_norm));
        let _ = writeln!(s, "final_v = {}", fmt_f64(sum.final_v));
        let _ = writeln!(s, "epochs = {}", sum.epochs);
        let times: Vec<String> = sum.shrink_times.iter().map(|t| fmt_f64(*t)).collect();
        let _ = writeln!(s, "shrink_times = {}", times.join(","));
        let _ = writeln!(s, "events = {}", self.events.len());
        let _ = writeln!(s, "min_gap = {}", opt(sum.min_gap));
        for (i, ss) in sum.sensors.iter().enumerate() {
            let k = i + 1;
            let _ = writeln!(s, "sensor{k}.events = {}", ss.events);
            let _ = writeln!(s, "sensor{k}.min_gap = {}", opt(ss.min_gap));
            let _ = writeln!(s, "sensor{k}.mean_gap = {}", opt(ss.mean_gap));
            let _ = writeln!(s, "sensor{k}.min_gap_within_epoch = {}", opt(ss.min_gap_within_epoch));
            let _ = writeln!(s, "sensor{k}.min_gap_across_epochs = {}", opt(ss.min_gap_across_epochs));
            let _ = writeln!(s, "sensor{k}.guaranteed_gap = {}", fmt_f64(ss.guaranteed_gap));
        }
        let _ = writeln!(s, "steps = {}", sum.steps);
        s
    }
}

/// Runs a bundled preset.
pub fn run(cfg: &SimConfig) -> Result<Trace, SimError> {
    let model = preset(&cfg.plant)?;
    run_with_plant(&model, cfg)
}

pub fn run_with_plant(model: &PlantModel, cfg: &SimConfig) -> Result<Trace, SimError> {
    let design = Design::new(model, cfg)?;
    run_with_design(model, cfg, design)
}

/// Simulates with a design computed beforehand by [`Design::new`].
pub fn run_with_design(model: &PlantModel, cfg: &SimConfig, design: Design) -> Result<Trace, SimError> {
    Simulator::new(model, cfg, design)?.run()
}

fn make_field<'b>(
    model: &'b PlantModel,
    u: &'b [f64],
    dist: Option<&'b DisturbanceSpec>,
) -> impl Fn(f64, &[f64], &mut [f64]) + 'b {
    let dynamics = model.dynamics();
    move |t: f64, y: &[f64], out: &mut [f64]| {
        dynamics.field(y, u, out);
        if let Some(d) = dist {
            let mut buf = [0.0; 16];
            let n = out.len();
            if n <= buf.len() {
                d.eval(t, &mut buf[..n]);
                out.iter_mut().zip(&buf[..n]).for_each(|(o, di)| *o += di);
            } else {
                let mut v = vec![0.0; n];
                d.eval(t, &mut v);
                out.iter_mut().zip(&v).for_each(|(o, di)| *o += di);
            }
        }
    }
}

struct Pending {
    deliver: f64,
    seq: u64,
    sensor: usize,
    frame: Vec<u8>,
}

struct Simulator<'a> {
    model: &'a PlantModel,
    cfg: &'a SimConfig,
    n: usize,
    t: f64,
    t_end: f64,
    x: Vec<f64>,
    u: Vec<f64>,
    disturbance: Option<DisturbanceSpec>,
    sensors: Vec<SensorState>,
    sensor_sched: ThresholdSchedule,
    ctrl: ControllerState,
    pending: Vec<Pending>,
    seq: u64,
    last_delivery: Vec<f64>,
    in_flight: Vec<usize>,
    rng: ChaCha8Rng,
    tick_r: u64,
    next_tick: f64,
    next_sample: u64,
    zeno: VecDeque<f64>,
    crossing: Option<CrossingSegment>,
    k1: Vec<f64>,
    k1_valid: bool,
    x1: Vec<f64>,
    f1: Vec<f64>,
    scratch: Scratch,
    trace: Trace,
}

impl<'a> Simulator<'a> {
    fn new(model: &'a PlantModel, cfg: &'a SimConfig, design: Design) -> Result<Self, SimError> {
        let n = model.n();
        let sched = ThresholdSchedule::new(design.eta0, design.mu, design.theta.clone(), cfg.tau_c, cfg.t0)?
            .with_shift_delays(design.shift_delays.clone())?
            .with_trigger_scale(design.delay_factor.clone())?
            .with_eta_min(cfg.eta_min)?;
        let ctrl = ControllerState::new(sched.clone(), design.rho, model.certificate().clone());
        let sensors = (0..n).map(|i| SensorState::new(i, cfg.x0[i], cfg.t0, &sched)).collect();
        let next_tick = if sched.can_shrink() { sched.check_tick(1) } else { f64::INFINITY };
        let disturbance = cfg.disturbance.clone().map(|s| DisturbanceSpec::new(s, cfg.eta_min));
        Ok(Self {
            model,
            cfg,
            n,
            t: cfg.t0,
            t_end: cfg.t0 + cfg.horizon,
            x: cfg.x0.clone(),
            u: vec![0.0; model.m()],
            disturbance,
            sensors,
            sensor_sched: sched,
            ctrl,
            pending: Vec::new(),
            seq: 0,
            last_delivery: vec![f64::NEG_INFINITY; n],
            in_flight: vec![0; n],
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            tick_r: 1,
            next_tick,
            next_sample: 0,
            zeno: VecDeque::new(),
            crossing: None,
            k1: vec![0.0; n],
            k1_valid: false,
            x1: vec![0.0; n],
            f1: vec![0.0; n],
            scratch: Scratch::new(n),
            trace: Trace {
                n,
                design,
                samples: Vec::new(),
                events: Vec::new(),
                shrinks: Vec::new(),
                log: Vec::new(),
                steps: 0,
            },
        })
    }

    fn refresh_input(&mut self) {
        self.model.dynamics().control(self.ctrl.x_hat(), &mut self.u);
        self.k1_valid = false;
    }

    fn run(mut self) -> Result<Trace, SimError> {
        // synchronized initial round, transmitted in full
        for i in 0..self.n {
            let msg = WireMessage::Init {
                index: i,
                value: self.x[i],
                t: self.t,
            };
            let frame = msg.encode()?;
            let decoded = WireMessage::decode(&frame)?;
            self.ctrl.apply(&decoded)?;
            self.trace.log.push(LogEntry { msg: decoded, value: None });
        }
        self.refresh_input();
        let worked = self.process_instant(None)?;
        self.record_sample(worked);

        let step = self.trace.design.step;
        while self.t < self.t_end {
            let brk = self.next_breakpoint();
            let remaining = brk - self.t;
            let (h, t1) = if step >= remaining { (remaining, brk) } else { (step, self.t + step) };

            if !self.k1_valid {
                let f = make_field(self.model, &self.u, self.disturbance.as_ref());
                f(self.t, &self.x, &mut self.k1);
            }
            {
                let f = make_field(self.model, &self.u, self.disturbance.as_ref());
                rk4_with_k1(&f, self.t, &self.x, &self.k1, h, &mut self.scratch, &mut self.x1);
                f(t1, &self.x1, &mut self.f1);
            }
            self.trace.steps += 1;

            let seg = HermiteSegment {
                t0: self.t,
                t1,
                x0: &self.x,
                x1: &self.x1,
                f0: &self.k1,
                f1: &self.f1,
            };
            let mut earliest: Option<(usize, f64)> = None;
            for (i, s) in self.sensors.iter().enumerate() {
                if let Some(tc) = locate_crossing(&seg, i, s.last_sent_value, s.active_eta_i, self.cfg.event_tol) {
                    if earliest.map_or(true, |(_, te)| tc < te) {
                        earliest = Some((i, tc));
                    }
                }
            }

            let forced = earliest.map(|(i, _)| i);
            if forced.is_some() {
                self.crossing = Some(CrossingSegment {
                    t0: self.t,
                    x0: self.x.clone(),
                    x_hat: self.ctrl.x_hat().to_vec(),
                    step: h,
                });
            }
            match earliest {
                Some((_, tc)) if tc < t1 => {
                    // redo the step up to the located time
                    let f = make_field(self.model, &self.u, self.disturbance.as_ref());
                    rk4_with_k1(&f, self.t, &self.x, &self.k1, tc - self.t, &mut self.scratch, &mut self.x1);
                    std::mem::swap(&mut self.x, &mut self.x1);
                    self.t = tc;
                    self.k1_valid = false;
                }
                _ => {
                    std::mem::swap(&mut self.x, &mut self.x1);
                    std::mem::swap(&mut self.k1, &mut self.f1);
                    self.t = t1;
                    self.k1_valid = true;
                }
            }
            if self.x.iter().any(|v| !v.is_finite()) {
                return Err(SimError::NonFiniteState { t: self.t });
            }
            let worked = self.process_instant(forced)?;
            self.crossing = None;
            self.record_sample(worked);
        }
        Ok(self.trace)
    }

    fn next_breakpoint(&self) -> f64 {
        let mut b = self.t_end.min(self.next_tick);
        for p in &self.pending {
            b = b.min(p.deliver);
        }
        for i in 0..self.n {
            if let Some(a) = self.sensor_sched.next_activation(i, self.t) {
                b = b.min(a);
            }
        }
        b
    }

    /// Handles everything due at the current instant; returns whether any
    /// message was sent or delivered.
    fn process_instant(&mut self, mut forced: Option<usize>) -> Result<bool, SimError> {
        let mut any = false;
        loop {
            let mut work = false;
            while let Some(k) = self.due_delivery() {
                let p = self.pending.remove(k);
                self.deliver(p)?;
                work = true;
            }
            if self.t >= self.next_tick {
                self.check_tick()?;
                work = true;
            }
            for i in 0..self.n {
                let activated = self.sensors[i].refresh(&self.sensor_sched, self.t);
                let decision = check_trigger(&self.sensors[i], self.x[i]);
                let sign = match decision {
                    TriggerDecision::Fire(s) => Some(s),
                    TriggerDecision::None if forced == Some(i) => {
                        Some(if self.sensors[i].error(self.x[i]) >= 0.0 { 1 } else { -1 })
                    }
                    TriggerDecision::None => None,
                };
                if let Some(s) = sign {
                    let cause = if activated { EventCause::Activation } else { EventCause::Crossing };
                    self.fire(i, s, cause)?;
                    work = true;
                }
            }
            forced = None;
            if !work {
                break;
            }
            any = true;
        }
        Ok(any)
    }

    fn due_delivery(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, p) in self.pending.iter().enumerate() {
            if p.deliver <= self.t {
                let better = match best {
                    None => true,
                    Some(b) => {
                        let q = &self.pending[b];
                        (p.deliver, p.seq) < (q.deliver, q.seq)
                    }
                };
                if better {
                    best = Some(k);
                }
            }
        }
        best
    }

    fn deliver(&mut self, p: Pending) -> Result<(), SimError> {
        let msg = WireMessage::decode(&p.frame)?;
        self.ctrl.apply(&msg)?;
        self.in_flight[p.sensor] -= 1;
        self.refresh_input();
        Ok(())
    }

    fn check_tick(&mut self) -> Result<(), SimError> {
        let t = self.t;
        if self.ctrl.sched_view.can_shrink() && self.ctrl.check_shrink(t)? {
            let eta_before = self.ctrl.sched_view.eta_current();
            self.ctrl.sched_view.shrink(t)?;
            // single broadcast, applied by every sensor at the same instant
            let frame = WireMessage::Shrink { t }.encode()?;
            let msg = WireMessage::decode(&frame)?;
            self.sensor_sched.shrink(msg.t())?;
            self.trace.log.push(LogEntry { msg, value: None });
            self.trace.shrinks.push(ShrinkRecord {
                t,
                epoch: self.ctrl.epoch_count(),
                eta_before,
                eta_after: self.ctrl.sched_view.eta_current(),
                v_at_command: self.model.lyapunov_value(&self.x),
            });
            self.tick_r = 1;
        } else {
            self.tick_r += 1;
        }
        let s = &self.ctrl.sched_view;
        self.next_tick = if s.can_shrink() { s.check_tick(self.tick_r) } else { f64::INFINITY };
        Ok(())
    }

    fn fire(&mut self, i: usize, sign: i8, cause: EventCause) -> Result<(), SimError> {
        let t = self.t;
        let sensor = &mut self.sensors[i];
        let held_before = sensor.last_sent_value;
        let threshold = sensor.active_eta_i;
        let threshold_epoch = sensor.active_epoch;
        let bit = sensor.fire(sign, t);
        let value = sensor.last_sent_value;

        let budget = self.cfg.delay.max_delay();
        let delay = match self.cfg.delay {
            DelayModel::None => 0.0,
            DelayModel::Constant(d) => d,
            DelayModel::Uniform { max } => self.rng.gen_range(0.0..=max),
        };
        // per-sensor FIFO keeps both ends applying the recursion in order
        let deliver = apply_delay(t, delay, budget)?.max(self.last_delivery[i]);
        self.last_delivery[i] = deliver;
        let msg = WireMessage::Event { index: i, bit, t };
        self.pending.push(Pending {
            deliver,
            seq: self.seq,
            sensor: i,
            frame: msg.encode()?,
        });
        self.seq += 1;
        self.in_flight[i] += 1;

        let segment = match cause {
            EventCause::Crossing => self.crossing.clone(),
            EventCause::Activation => None,
        };
        self.trace.events.push(EventRecord {
            sensor: i,
            t,
            bit,
            value,
            held_before,
            threshold,
            threshold_epoch,
            delivered_at: deliver,
            cause,
            segment,
        });
        self.trace.log.push(LogEntry { msg, value: Some(value) });

        self.zeno.push_back(t);
        while let Some(&front) = self.zeno.front() {
            if t - front > 1.0 {
                self.zeno.pop_front();
            } else {
                break;
            }
        }
        if self.zeno.len() > ZENO_LIMIT {
            return Err(SimError::ZenoSuspected {
                t,
                events: ZENO_LIMIT,
            });
        }
        Ok(())
    }

    fn record_sample(&mut self, after_messages: bool) {
        let interval = self.trace.design.sample_interval;
        let due = self.cfg.t0 + self.next_sample as f64 * interval;
        let periodic = self.t >= due;
        if !(periodic || after_messages || self.t >= self.t_end || self.trace.samples.is_empty()) {
            return;
        }
        if periodic {
            self.next_sample = ((self.t - self.cfg.t0) / interval).floor() as u64 + 1;
        }
        let x_hat = self.ctrl.x_hat().to_vec();
        let eps: Vec<f64> = x_hat.iter().zip(&self.x).map(|(a, b)| a - b).collect();
        self.trace.samples.push(Sample {
            t: self.t,
            x: self.x.clone(),
            v: self.model.lyapunov_value(&self.x),
            eta: self.ctrl.sched_view.eta_current(),
            eps_hat_norm: norm(&eps),
            eta_enforced: (0..self.n)
                .map(|i| self.sensor_sched.local_threshold(i, self.t))
                .sum::<f64>()
                .sqrt(),
            x_hat,
            held: self.sensors.iter().map(|s| s.last_sent_value).collect(),
            in_flight: self.in_flight.iter().sum(),
            after_messages,
        });
    }
}
