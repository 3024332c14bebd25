//! C ABI over the `adetc` simulator.
//!
//! Fallible functions return an [`AdetcStatus`]; on failure the message is
//! available from [`adetc_last_error`] on the same thread. Handles are
//! opaque and owned by the caller once returned, and must be released with
//! the matching `*_free` function. Strings returned through `out` pointers
//! are released with [`adetc_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use adetc::certificate;
use adetc::config::ExperimentConfig;
use adetc::engine::{run_with_design, Design, Trace};
use adetc::plant::preset;
use adetc::protocol::WireMessage;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdetcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Simulation = 4,
    Protocol = 5,
    Certificate = 6,
    BufferTooSmall = 7,
    OutOfRange = 8,
    Panic = 9,
}

/// Parsed experiment configuration.
pub struct AdetcConfig {
    inner: ExperimentConfig,
}

/// Result of one simulation.
pub struct AdetcTrace {
    inner: Trace,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdetcEvent {
    pub sensor: u32,
    pub bit: u8,
    /// 1 when fired because a smaller threshold became active.
    pub activation: u8,
    pub t: f64,
    pub value: f64,
    pub delivered_at: f64,
}

pub const ADETC_MESSAGE_INIT: u8 = 0x01;
pub const ADETC_MESSAGE_EVENT: u8 = 0x02;
pub const ADETC_MESSAGE_SHRINK: u8 = 0x03;

/// Wire frame contents. `kind` is one of the `ADETC_MESSAGE_*` tags;
/// `index` is unused for shrink frames, `bit` only for events and `value`
/// only for init frames.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdetcMessage {
    pub kind: u8,
    pub index: u32,
    pub bit: u8,
    pub t: f64,
    pub value: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(AdetcStatus, String);

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard<F>(f: F) -> AdetcStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            AdetcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdetcStatus::Panic
        }
    }
}

fn fail(status: AdetcStatus, e: impl ToString) -> Failure {
    Failure(status, e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(AdetcStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(AdetcStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(AdetcStatus::NullPointer, format!("{what} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(AdetcStatus::NullPointer, format!("{what} is null")))
}

fn owned_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|e| fail(AdetcStatus::Panic, e))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn adetc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn adetc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn adetc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses configuration text in the flat `key = value` format.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_config_parse(text: *const c_char, out: *mut *mut AdetcConfig) -> AdetcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let text = str_arg(text, "text")?;
        let inner = ExperimentConfig::parse(text).map_err(|e| fail(AdetcStatus::Config, e))?;
        *out = Box::into_raw(Box::new(AdetcConfig { inner }));
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_config_load(path: *const c_char, out: *mut *mut AdetcConfig) -> AdetcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let inner = ExperimentConfig::from_file(Path::new(path)).map_err(|e| fail(AdetcStatus::Config, e))?;
        *out = Box::into_raw(Box::new(AdetcConfig { inner }));
        Ok(())
    })
}

/// Overrides one key. The configuration is left unchanged on failure.
///
/// # Safety
/// `config` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn adetc_config_set(
    config: *mut AdetcConfig,
    key: *const c_char,
    value: *const c_char,
) -> AdetcStatus {
    guard(|| {
        let config = out_arg(config, "config")?;
        let key = str_arg(key, "key")?;
        let value = str_arg(value, "value")?;
        let mut next = config.inner.clone();
        next.set(key, value).map_err(|m| fail(AdetcStatus::Config, format!("{key}: {m}")))?;
        next.finish().map_err(|e| fail(AdetcStatus::Config, e))?;
        config.inner = next;
        Ok(())
    })
}

/// # Safety
/// `config` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn adetc_config_free(config: *mut AdetcConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

fn design_for(cfg: &ExperimentConfig) -> Result<(adetc::plant::PlantModel, Design), Failure> {
    let model = preset(&cfg.sim.plant).map_err(|e| fail(AdetcStatus::Config, e))?;
    let design = Design::new(&model, &cfg.sim).map_err(|e| fail(AdetcStatus::Config, e))?;
    Ok((model, design))
}

/// Bound chain report as `key = value` lines, without simulating.
///
/// # Safety
/// `config` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_bounds_report(config: *const AdetcConfig, out: *mut *mut c_char) -> AdetcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let config = ref_arg(config, "config")?;
        let (_, design) = design_for(&config.inner)?;
        *out = owned_string(design.report())?;
        Ok(())
    })
}

/// Simulates the configuration. Invalid designs report `Config`, failures
/// during the run report `Simulation`.
///
/// # Safety
/// `config` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_run(config: *const AdetcConfig, out: *mut *mut AdetcTrace) -> AdetcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let config = ref_arg(config, "config")?;
        let (model, design) = design_for(&config.inner)?;
        let inner =
            run_with_design(&model, &config.inner.sim, design).map_err(|e| fail(AdetcStatus::Simulation, e))?;
        *out = Box::into_raw(Box::new(AdetcTrace { inner }));
        Ok(())
    })
}

/// # Safety
/// `trace` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_free(trace: *mut AdetcTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}

/// State dimension; 0 for a null handle.
///
/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_state_dim(trace: *const AdetcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.n)
}

/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_event_count(trace: *const AdetcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.events.len())
}

/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_sample_count(trace: *const AdetcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.samples.len())
}

/// Number of threshold shrinks.
///
/// # Safety
/// `trace` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_epoch_count(trace: *const AdetcTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.inner.shrinks.len())
}

/// # Safety
/// `trace` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_event(trace: *const AdetcTrace, k: usize, out: *mut AdetcEvent) -> AdetcStatus {
    guard(|| {
        let trace = ref_arg(trace, "trace")?;
        let out = out_arg(out, "out")?;
        let e = trace.inner.events.get(k).ok_or_else(|| {
            fail(AdetcStatus::OutOfRange, format!("event {k} of {}", trace.inner.events.len()))
        })?;
        *out = AdetcEvent {
            sensor: e.sensor as u32,
            bit: e.bit,
            activation: u8::from(e.cause == adetc::engine::EventCause::Activation),
            t: e.t,
            value: e.value,
            delivered_at: e.delivered_at,
        };
        Ok(())
    })
}

/// Smallest gap between consecutive events of any sensor; `OutOfRange` if
/// no sensor fired twice.
///
/// # Safety
/// `trace` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_min_gap(trace: *const AdetcTrace, out: *mut f64) -> AdetcStatus {
    guard(|| {
        let trace = ref_arg(trace, "trace")?;
        let out = out_arg(out, "out")?;
        *out = trace
            .inner
            .summary()
            .min_gap
            .ok_or_else(|| fail(AdetcStatus::OutOfRange, "no sensor transmitted twice"))?;
        Ok(())
    })
}

/// Copies the final state into `buf`, which must hold `state_dim` values.
///
/// # Safety
/// `trace` must come from this library and `buf` point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_final_state(trace: *const AdetcTrace, buf: *mut f64, len: usize) -> AdetcStatus {
    guard(|| {
        let trace = ref_arg(trace, "trace")?;
        if buf.is_null() {
            return Err(fail(AdetcStatus::NullPointer, "buf is null"));
        }
        let x = &trace.inner.final_sample().x;
        if len < x.len() {
            return Err(fail(AdetcStatus::BufferTooSmall, format!("need {} values, got {len}", x.len())));
        }
        std::slice::from_raw_parts_mut(buf, x.len()).copy_from_slice(x);
        Ok(())
    })
}

#[derive(Clone, Copy)]
enum TraceText {
    Csv,
    EventLog,
    Summary,
}

unsafe fn trace_text(trace: *const AdetcTrace, out: *mut *mut c_char, which: TraceText) -> AdetcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let t = &ref_arg(trace, "trace")?.inner;
        let s = match which {
            TraceText::Csv => t.to_csv(),
            TraceText::EventLog => t.event_log(),
            TraceText::Summary => t.summary_text(),
        };
        *out = owned_string(s)?;
        Ok(())
    })
}

/// Trace as CSV text; release with [`adetc_string_free`].
///
/// # Safety
/// `trace` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_csv(trace: *const AdetcTrace, out: *mut *mut c_char) -> AdetcStatus {
    trace_text(trace, out, TraceText::Csv)
}

/// # Safety
/// `trace` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_event_log(trace: *const AdetcTrace, out: *mut *mut c_char) -> AdetcStatus {
    trace_text(trace, out, TraceText::EventLog)
}

/// # Safety
/// `trace` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_trace_summary(trace: *const AdetcTrace, out: *mut *mut c_char) -> AdetcStatus {
    trace_text(trace, out, TraceText::Summary)
}

/// Encodes `msg` into `buf`; `written` receives the frame length, also
/// when the buffer is too small.
///
/// # Safety
/// `msg` and `written` must be valid; `buf` must point to `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn adetc_wire_encode(
    msg: *const AdetcMessage,
    buf: *mut u8,
    cap: usize,
    written: *mut usize,
) -> AdetcStatus {
    guard(|| {
        let m = ref_arg(msg, "msg")?;
        let written = out_arg(written, "written")?;
        *written = 0;
        let index = m.index as usize;
        let wire = match m.kind {
            ADETC_MESSAGE_INIT => WireMessage::Init { index, value: m.value, t: m.t },
            ADETC_MESSAGE_EVENT => WireMessage::Event { index, bit: m.bit, t: m.t },
            ADETC_MESSAGE_SHRINK => WireMessage::Shrink { t: m.t },
            other => return Err(fail(AdetcStatus::Protocol, format!("unknown message kind {other}"))),
        };
        let bytes = wire.encode().map_err(|e| fail(AdetcStatus::Protocol, e))?;
        *written = bytes.len();
        if buf.is_null() {
            return Err(fail(AdetcStatus::NullPointer, "buf is null"));
        }
        if cap < bytes.len() {
            return Err(fail(AdetcStatus::BufferTooSmall, format!("need {} bytes, got {cap}", bytes.len())));
        }
        std::slice::from_raw_parts_mut(buf, bytes.len()).copy_from_slice(&bytes);
        Ok(())
    })
}

/// # Safety
/// `buf` must point to `len` bytes and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_wire_decode(buf: *const u8, len: usize, out: *mut AdetcMessage) -> AdetcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if buf.is_null() {
            return Err(fail(AdetcStatus::NullPointer, "buf is null"));
        }
        let bytes = std::slice::from_raw_parts(buf, len);
        let m = WireMessage::decode(bytes).map_err(|e| fail(AdetcStatus::Protocol, e))?;
        *out = match m {
            WireMessage::Init { index, value, t } => AdetcMessage {
                kind: ADETC_MESSAGE_INIT,
                index: index as u32,
                bit: 0,
                t,
                value,
            },
            WireMessage::Event { index, bit, t } => AdetcMessage {
                kind: ADETC_MESSAGE_EVENT,
                index: index as u32,
                bit,
                t,
                value: 0.0,
            },
            WireMessage::Shrink { t } => AdetcMessage {
                kind: ADETC_MESSAGE_SHRINK,
                index: u32::from(adetc::protocol::BROADCAST_INDEX),
                bit: 1,
                t,
                value: 0.0,
            },
        };
        Ok(())
    })
}

fn scalar(out: *mut f64, f: impl FnOnce() -> certificate::Result<f64>) -> AdetcStatus {
    guard(|| {
        // SAFETY: checked for null; the caller guarantees validity otherwise
        let out = unsafe { out_arg(out, "out")? };
        *out = f().map_err(|e| fail(AdetcStatus::Certificate, e))?;
        Ok(())
    })
}

/// Inter-transmission bound across a shrink for ratio `mu`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_shifted_intertransmission_time(tau_star: f64, mu: f64, out: *mut f64) -> AdetcStatus {
    scalar(out, || certificate::shifted_intertransmission_time(tau_star, mu))
}

/// Trigger threshold keeping the plant-side error below `eta` under delays
/// of at most `delay_max`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_delay_adjusted_threshold(
    eta: f64,
    lipschitz: f64,
    kappa: f64,
    delay_max: f64,
    out: *mut f64,
) -> AdetcStatus {
    scalar(out, || certificate::delay_adjusted_threshold(eta, lipschitz, kappa, delay_max))
}

/// Shrink gain from linear comparison-function gains.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn adetc_rho_from_linear_gains(k_upper: f64, k_lower: f64, k_ve: f64, out: *mut f64) -> AdetcStatus {
    scalar(out, || certificate::rho_from_linear_gains(k_upper, k_lower, k_ve))
}
