//! Local trigger rules: the geometric threshold schedule, its per-sensor
//! split, delayed activation after a shrink, and per-sensor error tracking.

use thiserror::Error;

use crate::certificate::{check_mu, CertificateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TriggerError {
    #[error("squared error {eps_sq} after a shrink is outside [0, {bound})")]
    ResidualOutOfRange { eps_sq: f64, bound: f64 },
    #[error("time {t} is not a controller check tick of the epoch starting at {epoch_start}")]
    NotCheckTick { t: f64, epoch_start: f64 },
    #[error("split weights must have unit norm, got |theta| = {0}")]
    ThetaNotUnit(f64),
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

/// One constant-threshold interval of the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Epoch {
    pub index: usize,
    pub start: f64,
    pub eta: f64,
}

/// Geometric threshold schedule shared by the controller and its sensors.
///
/// All epochs are kept so that the threshold in force for sensor `i` at any
/// past time can be recovered: the local threshold only switches `shift_i`
/// after the controller commands a shrink.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSchedule {
    epochs: Vec<Epoch>,
    mu: f64,
    theta: Vec<f64>,
    tau_c: f64,
    shift_delays: Vec<f64>,
    /// Multiplies `θᵢ·η` before squaring; below one when deliveries lag.
    trigger_scale: Vec<f64>,
    eta_min: f64,
}

/// Uniform split `θᵢ = 1/√n`.
pub fn uniform_theta(n: usize) -> Vec<f64> {
    vec![1.0 / (n as f64).sqrt(); n]
}

impl ThresholdSchedule {
    pub fn new(
        eta0: f64,
        mu: f64,
        theta: Vec<f64>,
        tau_c: f64,
        t0: f64,
    ) -> Result<Self, TriggerError> {
        check_mu(mu)?;
        if !(eta0 > 0.0) || !eta0.is_finite() {
            return Err(TriggerError::InvalidParameter(format!("eta0 must be positive, got {eta0}")));
        }
        if !(tau_c > 0.0) || !tau_c.is_finite() {
            return Err(TriggerError::InvalidParameter(format!("tau_c must be positive, got {tau_c}")));
        }
        if theta.is_empty() || theta.iter().any(|w| !(*w > 0.0)) {
            return Err(TriggerError::InvalidParameter(
                "split weights must be positive".into(),
            ));
        }
        let len = theta.iter().map(|w| w * w).sum::<f64>().sqrt();
        if (len - 1.0).abs() > 1e-12 {
            return Err(TriggerError::ThetaNotUnit(len));
        }
        let n = theta.len();
        Ok(Self {
            epochs: vec![Epoch {
                index: 0,
                start: t0,
                eta: eta0,
            }],
            mu,
            theta,
            tau_c,
            shift_delays: vec![0.0; n],
            trigger_scale: vec![1.0; n],
            eta_min: 0.0,
        })
    }

    pub fn with_shift_delays(mut self, shifts: Vec<f64>) -> Result<Self, TriggerError> {
        if shifts.len() != self.n() || shifts.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(TriggerError::InvalidParameter(
                "need one non-negative shift delay per sensor".into(),
            ));
        }
        self.shift_delays = shifts;
        Ok(self)
    }

    pub fn with_trigger_scale(mut self, scale: Vec<f64>) -> Result<Self, TriggerError> {
        if scale.len() != self.n() || scale.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(TriggerError::InvalidParameter(
                "trigger scale factors must lie in (0, 1]".into(),
            ));
        }
        self.trigger_scale = scale;
        Ok(self)
    }

    /// Floor below which no further shrink is commanded.
    pub fn with_eta_min(mut self, eta_min: f64) -> Result<Self, TriggerError> {
        if !(eta_min >= 0.0) || !eta_min.is_finite() {
            return Err(TriggerError::InvalidParameter(format!(
                "eta_min must be non-negative, got {eta_min}"
            )));
        }
        self.eta_min = eta_min;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.theta.len()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn tau_c(&self) -> f64 {
        self.tau_c
    }

    pub fn shift_delays(&self) -> &[f64] {
        &self.shift_delays
    }

    pub fn trigger_scale(&self) -> &[f64] {
        &self.trigger_scale
    }

    pub fn eta_min(&self) -> f64 {
        self.eta_min
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn current(&self) -> &Epoch {
        self.epochs.last().expect("schedule always holds an epoch")
    }

    pub fn eta_current(&self) -> f64 {
        self.current().eta
    }

    pub fn epoch_start(&self) -> f64 {
        self.current().start
    }

    pub fn epoch_count(&self) -> usize {
        self.epochs.len() - 1
    }

    /// Whether another shrink would stay at or above the floor.
    pub fn can_shrink(&self) -> bool {
        self.mu * self.eta_current() >= self.eta_min
    }

    /// `r`-th check tick of the current epoch.
    pub fn check_tick(&self, r: u64) -> f64 {
        self.epoch_start() + r as f64 * self.tau_c
    }

    /// Time at which epoch `k` becomes active for sensor `i`.
    pub fn activation_time(&self, i: usize, k: usize) -> f64 {
        self.epochs[k].start + self.shift_delays[i]
    }

    /// Index of the epoch whose threshold sensor `i` enforces at `t`.
    pub fn active_epoch(&self, i: usize, t: f64) -> usize {
        let shift = self.shift_delays[i];
        let p = self.epochs.partition_point(|e| e.start + shift <= t);
        p.saturating_sub(1)
    }

    /// Earliest activation for sensor `i` strictly after `t`, if any.
    pub fn next_activation(&self, i: usize, t: f64) -> Option<f64> {
        let k = self.active_epoch(i, t);
        (k + 1 < self.epochs.len()).then(|| self.activation_time(i, k + 1))
    }

    /// `θᵢ²·η²(t − τ̃ᵢ)`.
    pub fn local_threshold(&self, i: usize, t: f64) -> f64 {
        let eta = self.epochs[self.active_epoch(i, t)].eta;
        let w = self.theta[i];
        w * w * eta * eta
    }

    /// Threshold actually compared against `εᵢ²`: the local threshold with
    /// the delay reduction applied to `θᵢ·η`.
    pub fn trigger_threshold(&self, i: usize, t: f64) -> f64 {
        let eta = self.epochs[self.active_epoch(i, t)].eta;
        let w = self.theta[i] * self.trigger_scale[i] * eta;
        w * w
    }

    /// Commands `η ← μ·η` at `t_command`, which must be a check tick.
    pub fn shrink(&mut self, t_command: f64) -> Result<&Epoch, TriggerError> {
        let start = self.epoch_start();
        let r = ((t_command - start) / self.tau_c).round();
        let tick = start + r * self.tau_c;
        if r < 1.0 || (tick - t_command).abs() > 1e-9 * self.tau_c.max(t_command.abs()) {
            return Err(TriggerError::NotCheckTick {
                t: t_command,
                epoch_start: start,
            });
        }
        let prev = *self.current();
        self.epochs.push(Epoch {
            index: prev.index + 1,
            start: t_command,
            eta: self.mu * prev.eta,
        });
        Ok(self.current())
    }
}

/// Free-function form of [`ThresholdSchedule::local_threshold`].
pub fn local_threshold(sched: &ThresholdSchedule, i: usize, t: f64) -> f64 {
    sched.local_threshold(i, t)
}

/// Free-function form of [`ThresholdSchedule::shrink`], returning the new
/// schedule.
pub fn epoch_shrink(sched: &ThresholdSchedule, t_command: f64) -> Result<ThresholdSchedule, TriggerError> {
    let mut next = sched.clone();
    next.shrink(t_command)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerDecision {
    None,
    /// Carries `sign(εᵢ)`.
    Fire(i8),
}

/// Sensor-side record of the last transmitted value.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorState {
    pub index: usize,
    pub last_sent_value: f64,
    pub last_event_time: f64,
    pub active_eta_i: f64,
    pub active_epoch: usize,
}

impl SensorState {
    pub fn new(index: usize, value: f64, t: f64, sched: &ThresholdSchedule) -> Self {
        Self {
            index,
            last_sent_value: value,
            last_event_time: t,
            active_eta_i: sched.trigger_threshold(index, t),
            active_epoch: sched.active_epoch(index, t),
        }
    }

    /// Re-reads the enforced threshold; returns true if it changed epoch.
    pub fn refresh(&mut self, sched: &ThresholdSchedule, t: f64) -> bool {
        let k = sched.active_epoch(self.index, t);
        let changed = k != self.active_epoch;
        self.active_epoch = k;
        self.active_eta_i = sched.trigger_threshold(self.index, t);
        changed
    }

    pub fn error(&self, x_i: f64) -> f64 {
        self.last_sent_value - x_i
    }

    /// Snaps the held value one threshold step toward the state and returns
    /// the transmitted bit: 1 when the state moved above the held value.
    pub fn fire(&mut self, sign: i8, t: f64) -> u8 {
        let bit = u8::from(sign < 0);
        self.last_sent_value = step_held(self.last_sent_value, bit, self.active_eta_i);
        self.last_event_time = t;
        bit
    }
}

/// Shared one-bit recursion `held + (2d − 1)·√ηᵢ`.
#[inline]
pub fn step_held(held: f64, bit: u8, eta_i: f64) -> f64 {
    let step = eta_i.sqrt();
    if bit == 1 {
        held + step
    } else {
        held - step
    }
}

/// Fires iff `εᵢ² ≥ ηᵢ` with `εᵢ = held − xᵢ`.
pub fn check_trigger(state: &SensorState, x_i: f64) -> TriggerDecision {
    let e = state.error(x_i);
    if e * e >= state.active_eta_i {
        TriggerDecision::Fire(if e >= 0.0 { 1 } else { -1 })
    } else {
        TriggerDecision::None
    }
}

/// Squared error left after the immediate correction that fires when a
/// smaller threshold activates.
pub fn residual_error_after_shrink(eps_sq: f64, eta_i_new: f64, mu: f64) -> Result<f64, TriggerError> {
    check_mu(mu)?;
    if !(eta_i_new > 0.0) || !(eps_sq >= 0.0) {
        return Err(TriggerError::InvalidParameter(format!(
            "need eps_sq >= 0 and eta_i > 0, got {eps_sq}, {eta_i_new}"
        )));
    }
    let previous = eta_i_new / (mu * mu);
    if eps_sq > previous * (1.0 + 1e-12) {
        return Err(TriggerError::ResidualOutOfRange {
            eps_sq,
            bound: previous,
        });
    }
    if eps_sq < eta_i_new {
        return Ok(eps_sq);
    }
    let r = eps_sq.sqrt() - eta_i_new.sqrt();
    let residual = r * r;
    let bound = (1.0 / (mu * mu) - 1.0) * eta_i_new;
    if residual >= bound {
        return Err(TriggerError::ResidualOutOfRange {
            eps_sq: residual,
            bound,
        });
    }
    Ok(residual)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sched(eta0: f64, mu: f64) -> ThresholdSchedule {
        ThresholdSchedule::new(eta0, mu, vec![1.0], 1.0, 0.0).unwrap()
    }

    #[test]
    fn unshifted_threshold_switches_at_command() {
        let mut s = sched(1.0, 0.82);
        s.shrink(1.0).unwrap();
        assert_eq!(s.local_threshold(0, 1.0), 0.82 * 0.82);
        assert_eq!(s.local_threshold(0, 0.999), 1.0);
    }

    #[test]
    fn shifted_threshold_switches_late() {
        let mut s = sched(1.0, 0.82).with_shift_delays(vec![0.05]).unwrap();
        s.shrink(5.0).unwrap();
        assert_eq!(local_threshold(&s, 0, 5.02), 1.0);
        assert_relative_eq!(local_threshold(&s, 0, 5.06), 0.6724, max_relative = 1e-15);
        assert_eq!(s.next_activation(0, 5.02), Some(5.05));
        assert_eq!(s.next_activation(0, 5.06), None);
    }

    #[test]
    fn split_sums_to_square() {
        let s = ThresholdSchedule::new(1.0, 0.82, vec![0.6, 0.8], 1.0, 0.0).unwrap();
        let a = s.local_threshold(0, 0.0);
        let b = s.local_threshold(1, 0.0);
        assert_relative_eq!(a, 0.36, max_relative = 1e-15);
        assert_relative_eq!(b, 0.64, max_relative = 1e-15);
        assert_relative_eq!(a + b, 1.0, max_relative = 1e-15);
        assert!(matches!(
            ThresholdSchedule::new(1.0, 0.82, vec![0.6, 0.6], 1.0, 0.0),
            Err(TriggerError::ThetaNotUnit(_))
        ));
    }

    #[test]
    fn trigger_examples() {
        let s = ThresholdSchedule::new(0.5, 0.82, vec![1.0], 1.0, 0.0).unwrap();
        let st = SensorState::new(0, 1.0, 0.0, &s);
        assert_eq!(st.active_eta_i, 0.25);
        assert_eq!(check_trigger(&st, 1.0), TriggerDecision::None);
        assert_eq!(check_trigger(&st, 0.4), TriggerDecision::Fire(1));
        assert_eq!(check_trigger(&st, 1.6), TriggerDecision::Fire(-1));
    }

    #[test]
    fn fire_moves_held_toward_state() {
        let s = ThresholdSchedule::new(0.5, 0.82, vec![1.0], 1.0, 0.0).unwrap();
        let mut st = SensorState::new(0, 1.0, 0.0, &s);
        assert_eq!(st.fire(1, 0.3), 0);
        assert_eq!(st.last_sent_value, 0.5);
        assert_eq!(st.fire(-1, 0.4), 1);
        assert_eq!(st.last_sent_value, 1.0);
        assert_eq!(st.last_event_time, 0.4);
    }

    #[test]
    fn shrink_is_geometric() {
        let mut s = sched(1.0, 0.82);
        s.shrink(1.0).unwrap();
        assert_eq!(s.eta_current(), 0.82);
        let mut e = ThresholdSchedule::new(2.0, 0.85, vec![1.0], 0.25, 0.0).unwrap();
        for k in 1..=3 {
            let t = e.check_tick(1);
            e = epoch_shrink(&e, t).unwrap();
            assert_eq!(e.epoch_count(), k);
        }
        assert_relative_eq!(e.eta_current(), 0.614125 * 2.0, max_relative = 1e-15);
        assert_eq!(e.epoch_start(), 0.75);
    }

    #[test]
    fn shrink_rejects_off_tick() {
        let mut s = sched(1.0, 0.82);
        assert!(matches!(s.shrink(0.5), Err(TriggerError::NotCheckTick { .. })));
        assert!(matches!(s.shrink(0.0), Err(TriggerError::NotCheckTick { .. })));
        assert!(s.shrink(3.0).is_ok());
    }

    #[test]
    fn floor_blocks_shrinking() {
        let s = sched(0.5, 0.82).with_eta_min(0.5).unwrap();
        assert!(!s.can_shrink());
        let s = sched(1.0, 0.82).with_eta_min(0.5).unwrap();
        assert!(s.can_shrink());
    }

    #[test]
    fn residual_examples() {
        // at the worst case the residual sits just inside the bound
        let mu: f64 = 0.82;
        let eta_new = 0.6724;
        let worst = eta_new / (mu * mu) * (1.0 - 1e-12);
        let r = residual_error_after_shrink(worst, eta_new, mu).unwrap();
        assert!(r < (1.0 / (mu * mu) - 1.0) * eta_new);
        assert_eq!(residual_error_after_shrink(0.5, eta_new, mu).unwrap(), 0.5);
        let r = residual_error_after_shrink(0.9, eta_new, mu).unwrap();
        assert_relative_eq!(r, (0.9f64.sqrt() - 0.82).powi(2), max_relative = 1e-14);
        assert!((r - 0.0165594).abs() < 1e-6);
        assert!(r < 0.3276);
        assert!(matches!(
            residual_error_after_shrink(1.2, eta_new, mu),
            Err(TriggerError::ResidualOutOfRange { .. })
        ));
    }
}
