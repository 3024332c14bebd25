//! One-bit sensor/controller protocol.
//!
//! Frames are little-endian: a one-byte tag, a `u16` coordinate index
//! (`0xFFFF` for the shrink broadcast), an `f64` timestamp, then the
//! payload. `Init` carries the full `f64` measurement; `Event` and `Shrink`
//! carry a single bit stored in one byte.

use std::fmt::Write as _;

use thiserror::Error;

use crate::certificate::{norm, CertificateError, IssCertificate};
use crate::triggering::{step_held, ThresholdSchedule};

pub const TAG_INIT: u8 = 0x01;
pub const TAG_EVENT: u8 = 0x02;
pub const TAG_SHRINK: u8 = 0x03;
pub const BROADCAST_INDEX: u16 = 0xFFFF;
const HEADER_LEN: usize = 1 + 2 + 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("frame truncated: need {needed} bytes, got {got}")]
    Truncated { needed: usize, got: usize },
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("payload bit must be 0 or 1, got {0}")]
    InvalidBit(u8),
    #[error("{0} trailing bytes after frame")]
    TrailingBytes(usize),
    #[error("coordinate index {0} is not addressable")]
    IndexOutOfRange(usize),
    #[error("event for coordinate {0} arrived before its initial value")]
    UninitializedCoordinate(usize),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WireMessage {
    Init { index: usize, value: f64, t: f64 },
    Event { index: usize, bit: u8, t: f64 },
    Shrink { t: f64 },
}

impl WireMessage {
    pub fn t(&self) -> f64 {
        match *self {
            WireMessage::Init { t, .. } | WireMessage::Event { t, .. } | WireMessage::Shrink { t } => t,
        }
    }

    pub fn index(&self) -> Option<usize> {
        match *self {
            WireMessage::Init { index, .. } | WireMessage::Event { index, .. } => Some(index),
            WireMessage::Shrink { .. } => None,
        }
    }

    /// Information bits carried beyond addressing and timestamp.
    pub fn payload_bits(&self) -> usize {
        match self {
            WireMessage::Init { .. } => 64,
            WireMessage::Event { .. } | WireMessage::Shrink { .. } => 1,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, ProtocolError> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8);
        let (tag, index) = match *self {
            WireMessage::Init { index, .. } => (TAG_INIT, wire_index(index)?),
            WireMessage::Event { index, bit, .. } => {
                if bit > 1 {
                    return Err(ProtocolError::InvalidBit(bit));
                }
                (TAG_EVENT, wire_index(index)?)
            }
            WireMessage::Shrink { .. } => (TAG_SHRINK, BROADCAST_INDEX),
        };
        out.push(tag);
        out.extend_from_slice(&index.to_le_bytes());
        out.extend_from_slice(&self.t().to_le_bytes());
        match *self {
            WireMessage::Init { value, .. } => out.extend_from_slice(&value.to_le_bytes()),
            WireMessage::Event { bit, .. } => out.push(bit),
            WireMessage::Shrink { .. } => out.push(1),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < HEADER_LEN {
            return Err(ProtocolError::Truncated {
                needed: HEADER_LEN,
                got: bytes.len(),
            });
        }
        let tag = bytes[0];
        let index = u16::from_le_bytes([bytes[1], bytes[2]]);
        let t = f64::from_le_bytes(bytes[3..11].try_into().expect("8-byte slice"));
        let payload_len = match tag {
            TAG_INIT => 8,
            TAG_EVENT | TAG_SHRINK => 1,
            other => return Err(ProtocolError::UnknownTag(other)),
        };
        let needed = HEADER_LEN + payload_len;
        if bytes.len() < needed {
            return Err(ProtocolError::Truncated {
                needed,
                got: bytes.len(),
            });
        }
        if bytes.len() > needed {
            return Err(ProtocolError::TrailingBytes(bytes.len() - needed));
        }
        let payload = &bytes[HEADER_LEN..];
        let addressed = |index: u16| {
            if index == BROADCAST_INDEX {
                Err(ProtocolError::IndexOutOfRange(index as usize))
            } else {
                Ok(index as usize)
            }
        };
        match tag {
            TAG_INIT => Ok(WireMessage::Init {
                index: addressed(index)?,
                value: f64::from_le_bytes(payload.try_into().expect("8-byte payload")),
                t,
            }),
            TAG_EVENT => {
                let bit = payload[0];
                if bit > 1 {
                    return Err(ProtocolError::InvalidBit(bit));
                }
                Ok(WireMessage::Event {
                    index: addressed(index)?,
                    bit,
                    t,
                })
            }
            _ => {
                if index != BROADCAST_INDEX {
                    return Err(ProtocolError::IndexOutOfRange(index as usize));
                }
                if payload[0] != 1 {
                    return Err(ProtocolError::InvalidBit(payload[0]));
                }
                Ok(WireMessage::Shrink { t })
            }
        }
    }
}

fn wire_index(index: usize) -> Result<u16, ProtocolError> {
    match u16::try_from(index) {
        Ok(i) if i != BROADCAST_INDEX => Ok(i),
        _ => Err(ProtocolError::IndexOutOfRange(index)),
    }
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One human-readable log line. `value` is the reconstructed held value for
/// events and the measurement for inits.
pub fn log_line(msg: &WireMessage, value: Option<f64>) -> String {
    let mut s = String::with_capacity(96);
    let _ = write!(s, "t={} ", fmt_f64(msg.t()));
    match *msg {
        WireMessage::Init { index, value: v, .. } => {
            let _ = write!(s, "src=sensor{} kind=init bit=- value={}", index + 1, fmt_f64(value.unwrap_or(v)));
        }
        WireMessage::Event { index, bit, .. } => {
            let shown = value.map_or_else(|| "-".to_string(), fmt_f64);
            let _ = write!(s, "src=sensor{} kind=event bit={bit} value={shown}", index + 1);
        }
        WireMessage::Shrink { .. } => s.push_str("src=ctrl kind=shrink bit=1 value=-"),
    }
    s
}

/// Controller-side reconstruction and shrink logic.
#[derive(Debug, Clone)]
pub struct ControllerState {
    x_hat: Vec<f64>,
    initialized: Vec<bool>,
    pub sched_view: ThresholdSchedule,
    pub rho: f64,
    pub last_check_time: f64,
    certificate: IssCertificate,
}

impl ControllerState {
    pub fn new(sched: ThresholdSchedule, rho: f64, certificate: IssCertificate) -> Self {
        let n = sched.n();
        let t0 = sched.epoch_start();
        Self {
            x_hat: vec![0.0; n],
            initialized: vec![false; n],
            sched_view: sched,
            rho,
            last_check_time: t0,
            certificate,
        }
    }

    pub fn x_hat(&self) -> &[f64] {
        &self.x_hat
    }

    pub fn epoch_count(&self) -> usize {
        self.sched_view.epoch_count()
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized.iter().all(|b| *b)
    }

    pub fn apply_init(&mut self, index: usize, value: f64) -> Result<(), ProtocolError> {
        if index >= self.x_hat.len() {
            return Err(ProtocolError::IndexOutOfRange(index));
        }
        self.x_hat[index] = value;
        self.initialized[index] = true;
        Ok(())
    }

    /// Applies the one-bit recursion with the threshold in force at the
    /// event's timestamp, and returns the new reconstructed value.
    pub fn apply_event(&mut self, index: usize, bit: u8, t: f64) -> Result<f64, ProtocolError> {
        if index >= self.x_hat.len() {
            return Err(ProtocolError::IndexOutOfRange(index));
        }
        if bit > 1 {
            return Err(ProtocolError::InvalidBit(bit));
        }
        if !self.initialized[index] {
            return Err(ProtocolError::UninitializedCoordinate(index));
        }
        let eta_i = self.sched_view.trigger_threshold(index, t);
        self.x_hat[index] = step_held(self.x_hat[index], bit, eta_i);
        Ok(self.x_hat[index])
    }

    /// Dispatches a decoded message.
    pub fn apply(&mut self, msg: &WireMessage) -> Result<Option<f64>, ProtocolError> {
        match *msg {
            WireMessage::Init { index, value, .. } => self.apply_init(index, value).map(|_| Some(value)),
            WireMessage::Event { index, bit, t } => self.apply_event(index, bit, t).map(Some),
            WireMessage::Shrink { .. } => Ok(None),
        }
    }

    /// `|ξ̂| + η`, an upper bound on `|ξ|` while the trigger rule holds.
    pub fn state_norm_upper_bound(&self) -> f64 {
        norm(&self.x_hat) + self.sched_view.eta_current()
    }

    /// Radius `ᾱ⁻¹(α̲(ρ·η))` the bound must fall under before a shrink.
    pub fn shrink_radius(&self) -> Result<f64, ProtocolError> {
        let level = self.certificate.alpha_lower.eval(self.rho * self.sched_view.eta_current());
        Ok(self.certificate.alpha_upper.invert(level)?)
    }

    /// Evaluates the shrink condition at check tick `t`.
    pub fn check_shrink(&mut self, t: f64) -> Result<bool, ProtocolError> {
        self.last_check_time = t;
        Ok(self.state_norm_upper_bound() <= self.shrink_radius()?)
    }
}

/// Smallest admissible initial threshold, `(μ/ρ)·α̲⁻¹(V0)`.
pub fn initial_eta(v0: f64, rho: f64, mu: f64, cert: &IssCertificate) -> Result<f64, ProtocolError> {
    if !(rho > 0.0) {
        return Err(CertificateError::InvalidArgument(format!("rho must be positive, got {rho}")).into());
    }
    crate::certificate::check_mu(mu)?;
    Ok(mu / rho * cert.alpha_lower.invert(v0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificate::KInfFn;
    use crate::plant::build_example1;
    use approx::assert_relative_eq;

    fn linear_cert() -> IssCertificate {
        IssCertificate::new(
            KInfFn::linear(1.0),
            KInfFn::linear(1.0),
            KInfFn::linear(1.0),
            KInfFn::linear(2.0),
            |x: &[f64]| norm(x),
            |_: &[f64], _: &mut [f64]| {},
            vec![1.0],
            10.0,
        )
        .unwrap()
    }

    fn controller(eta: f64, rho: f64, n: usize) -> ControllerState {
        let theta = crate::triggering::uniform_theta(n);
        let s = ThresholdSchedule::new(eta, 0.82, theta, 1.0, 0.0).unwrap();
        let mut c = ControllerState::new(s, rho, linear_cert());
        for i in 0..n {
            c.apply_init(i, 0.0).unwrap();
        }
        c
    }

    #[test]
    fn recursion_arithmetic() {
        let mut c = controller(0.5, 4.1, 1);
        c.apply_init(0, 2.0).unwrap();
        assert_eq!(c.apply_event(0, 1, 0.1).unwrap(), 2.5);
        c.apply_init(0, 2.0).unwrap();
        assert_eq!(c.apply_event(0, 0, 0.1).unwrap(), 1.5);

        let mut c = controller(1.0, 4.1, 1);
        for bit in [1, 1, 0] {
            c.apply_event(0, bit, 0.1).unwrap();
        }
        assert_eq!(c.x_hat()[0], 1.0);
    }

    #[test]
    fn event_before_init_is_rejected() {
        let s = ThresholdSchedule::new(1.0, 0.82, vec![1.0], 1.0, 0.0).unwrap();
        let mut c = ControllerState::new(s, 4.1, linear_cert());
        assert_eq!(
            c.apply_event(0, 1, 0.0),
            Err(ProtocolError::UninitializedCoordinate(0))
        );
    }

    #[test]
    fn norm_bound_and_shrink_check() {
        let c = controller(0.5, 4.1, 1);
        assert_eq!(c.state_norm_upper_bound(), 0.5);
        let mut c = controller(0.5, 4.1, 2);
        c.apply_init(0, 3.0 * 0.6).unwrap();
        c.apply_init(1, 3.0 * 0.8).unwrap();
        assert_relative_eq!(c.state_norm_upper_bound(), 3.5, max_relative = 1e-15);

        // linear case: |x̄| <= ρ·η
        let mut c = controller(1.0, 4.1, 1);
        c.apply_init(0, 3.0).unwrap();
        assert!(c.check_shrink(1.0).unwrap());
        c.apply_init(0, 1e6).unwrap();
        assert!(!c.check_shrink(2.0).unwrap());
    }

    #[test]
    fn identical_comparison_functions_give_rho_eta() {
        let m = build_example1().unwrap();
        let s = ThresholdSchedule::new(0.7, 0.82, vec![1.0], 1.0, 0.0).unwrap();
        let c = ControllerState::new(s, 4.1, m.certificate().clone());
        assert_relative_eq!(c.shrink_radius().unwrap(), 4.1 * 0.7, max_relative = 1e-12);
    }

    #[test]
    fn initial_threshold() {
        let m = build_example1().unwrap();
        let v0 = m.lyapunov_value(&[-10.0]);
        assert_relative_eq!(initial_eta(v0, 4.1, 0.82, m.certificate()).unwrap(), 2.0, max_relative = 1e-12);
        assert_relative_eq!(initial_eta(5.0, 4.1, 0.82, &linear_cert()).unwrap(), 1.0, max_relative = 1e-12);
        assert_eq!(initial_eta(0.0, 4.1, 0.82, &linear_cert()).unwrap(), 0.0);
    }

    #[test]
    fn wire_round_trip_and_sizes() {
        let msgs = [
            WireMessage::Init { index: 3, value: -0.1, t: 0.0 },
            WireMessage::Event { index: 0, bit: 1, t: 1.25 },
            WireMessage::Event { index: 2, bit: 0, t: 7.5e-5 },
            WireMessage::Shrink { t: 4.0 },
        ];
        for m in msgs {
            let b = m.encode().unwrap();
            assert_eq!(WireMessage::decode(&b).unwrap(), m);
        }
        assert_eq!(msgs[0].encode().unwrap().len(), 19);
        assert_eq!(msgs[1].encode().unwrap().len(), 12);
        assert_eq!(msgs[3].encode().unwrap().len(), 12);
        assert_eq!(msgs[1].payload_bits(), 1);
        assert_eq!(msgs[3].payload_bits(), 1);
        assert_eq!(msgs[0].payload_bits(), 64);
    }

    #[test]
    fn malformed_frames() {
        let mut b = WireMessage::Event { index: 0, bit: 1, t: 1.0 }.encode().unwrap();
        assert!(matches!(WireMessage::decode(&b[..5]), Err(ProtocolError::Truncated { .. })));
        b[11] = 2;
        assert_eq!(WireMessage::decode(&b), Err(ProtocolError::InvalidBit(2)));
        b[0] = 9;
        assert_eq!(WireMessage::decode(&b), Err(ProtocolError::UnknownTag(9)));
        let mut long = WireMessage::Shrink { t: 0.0 }.encode().unwrap();
        long.push(0);
        assert_eq!(WireMessage::decode(&long), Err(ProtocolError::TrailingBytes(1)));
        assert!(WireMessage::Event { index: 0, bit: 3, t: 0.0 }.encode().is_err());
        assert!(WireMessage::Event { index: 70_000, bit: 0, t: 0.0 }.encode().is_err());
    }

    #[test]
    fn log_format() {
        let l = log_line(&WireMessage::Event { index: 0, bit: 1, t: 0.5 }, Some(-9.5));
        assert_eq!(
            l,
            "t=5.0000000000000000e-1 src=sensor1 kind=event bit=1 value=-9.5000000000000000e0"
        );
        assert_eq!(
            log_line(&WireMessage::Shrink { t: 1.0 }, None),
            "t=1.0000000000000000e0 src=ctrl kind=shrink bit=1 value=-"
        );
    }
}
