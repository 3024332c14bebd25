use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use adetc_ffi::*;

const EXAMPLE1: &str = "plant = example1\nx0 = -10\nmu = 0.82\nrho = 4.1\ntau_c = 1\nhorizon = 30\ndelay_mode = constant\ndelta_tau = 0.002\n";

fn last_error() -> String {
    unsafe { CStr::from_ptr(adetc_last_error()) }.to_str().unwrap().to_string()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    adetc_string_free(s);
    out
}

fn parse(text: &str) -> *mut AdetcConfig {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { adetc_config_parse(text.as_ptr(), &mut cfg) }, AdetcStatus::Ok);
    cfg
}

#[test]
fn run_example1_through_the_abi() {
    unsafe {
        let cfg = parse(EXAMPLE1);
        let mut trace = ptr::null_mut();
        assert_eq!(adetc_run(cfg, &mut trace), AdetcStatus::Ok);
        assert_eq!(adetc_trace_state_dim(trace), 1);
        assert!(adetc_trace_epoch_count(trace) >= 5);
        let n = adetc_trace_event_count(trace);
        assert!(n > 0 && adetc_trace_sample_count(trace) > 0);

        let mut gap = 0.0;
        assert_eq!(adetc_trace_min_gap(trace, &mut gap), AdetcStatus::Ok);
        assert!(gap >= 0.04);

        let mut ev = std::mem::zeroed::<AdetcEvent>();
        assert_eq!(adetc_trace_event(trace, 0, &mut ev), AdetcStatus::Ok);
        assert!(ev.t > 0.0 && ev.delivered_at >= ev.t && ev.bit <= 1);
        assert_eq!(adetc_trace_event(trace, n, &mut ev), AdetcStatus::OutOfRange);
        assert!(last_error().contains("event"));

        let mut x = [0.0f64; 1];
        assert_eq!(adetc_trace_final_state(trace, x.as_mut_ptr(), 1), AdetcStatus::Ok);
        assert!(x[0].abs() <= 1e-2);
        assert_eq!(adetc_trace_final_state(trace, x.as_mut_ptr(), 0), AdetcStatus::BufferTooSmall);

        let mut s = ptr::null_mut();
        assert_eq!(adetc_trace_csv(trace, &mut s), AdetcStatus::Ok);
        let csv = take(s);
        assert!(csv.starts_with("t,x_1,V,eta,eps_hat_norm\n"));
        assert_eq!(adetc_trace_event_log(trace, &mut s), AdetcStatus::Ok);
        assert!(take(s).starts_with("t=0.0000000000000000e0 src=sensor1 kind=init"));
        assert_eq!(adetc_trace_summary(trace, &mut s), AdetcStatus::Ok);
        assert!(take(s).contains("epochs = "));

        // same config, same bytes
        let mut again = ptr::null_mut();
        assert_eq!(adetc_run(cfg, &mut again), AdetcStatus::Ok);
        assert_eq!(adetc_trace_csv(again, &mut s), AdetcStatus::Ok);
        assert_eq!(take(s), csv);

        adetc_trace_free(again);
        adetc_trace_free(trace);
        adetc_config_free(cfg);
    }
}

#[test]
fn config_errors_are_reported() {
    unsafe {
        let text = CString::new("plant = example1\nbogus = 1\n").unwrap();
        let mut cfg = ptr::null_mut();
        assert_eq!(adetc_config_parse(text.as_ptr(), &mut cfg), AdetcStatus::Config);
        assert!(cfg.is_null());
        assert_eq!(last_error(), "line 2: unknown key `bogus`");

        assert_eq!(adetc_config_parse(ptr::null(), &mut cfg), AdetcStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(adetc_config_parse(bad.as_ptr().cast(), &mut cfg), AdetcStatus::InvalidUtf8);

        let path = CString::new("/nonexistent/x.cfg").unwrap();
        assert_eq!(adetc_config_load(path.as_ptr(), &mut cfg), AdetcStatus::Config);

        let cfg = parse(EXAMPLE1);
        let key = CString::new("mu").unwrap();
        let low = CString::new("0.7").unwrap();
        assert_eq!(adetc_config_set(cfg, key.as_ptr(), low.as_ptr()), AdetcStatus::Config);
        // unchanged after the rejected override
        let mut s = ptr::null_mut();
        assert_eq!(adetc_bounds_report(cfg, &mut s), AdetcStatus::Ok);
        let report = take(s);
        assert!(report.contains("kappa = 5.0000000000000000e0"), "{report}");

        let rho = CString::new("rho").unwrap();
        let small = CString::new("3").unwrap();
        assert_eq!(adetc_config_set(cfg, rho.as_ptr(), small.as_ptr()), AdetcStatus::Ok);
        let mut trace = ptr::null_mut();
        assert_eq!(adetc_run(cfg, &mut trace), AdetcStatus::Config);
        assert!(trace.is_null());
        assert!(last_error().contains("rho"));
        adetc_config_free(cfg);

        adetc_config_free(ptr::null_mut());
        adetc_trace_free(ptr::null_mut());
        adetc_string_free(ptr::null_mut());
        assert_eq!(adetc_trace_event_count(ptr::null()), 0);
    }
}

#[test]
fn wire_round_trip() {
    let msgs = [
        AdetcMessage { kind: ADETC_MESSAGE_INIT, index: 3, bit: 0, t: 0.0, value: -0.75 },
        AdetcMessage { kind: ADETC_MESSAGE_EVENT, index: 1, bit: 1, t: 1.25, value: 0.0 },
        AdetcMessage { kind: ADETC_MESSAGE_SHRINK, index: 0xFFFF, bit: 1, t: 4.0, value: 0.0 },
    ];
    for (m, len) in msgs.iter().zip([19usize, 12, 12]) {
        let mut buf = [0u8; 32];
        let mut written = 0;
        unsafe {
            assert_eq!(adetc_wire_encode(m, buf.as_mut_ptr(), 4, &mut written), AdetcStatus::BufferTooSmall);
            assert_eq!(written, len);
            assert_eq!(adetc_wire_encode(m, buf.as_mut_ptr(), buf.len(), &mut written), AdetcStatus::Ok);
            let mut back = std::mem::zeroed::<AdetcMessage>();
            assert_eq!(adetc_wire_decode(buf.as_ptr(), written, &mut back), AdetcStatus::Ok);
            assert_eq!(&back, m);
            assert_eq!(adetc_wire_decode(buf.as_ptr(), written - 1, &mut back), AdetcStatus::Protocol);
        }
    }
    let bad = AdetcMessage { kind: 9, index: 0, bit: 0, t: 0.0, value: 0.0 };
    let mut buf = [0u8; 32];
    let mut written = 0;
    assert_eq!(unsafe { adetc_wire_encode(&bad, buf.as_mut_ptr(), 32, &mut written) }, AdetcStatus::Protocol);
    let bit2 = AdetcMessage { kind: ADETC_MESSAGE_EVENT, index: 0, bit: 2, t: 0.0, value: 0.0 };
    assert_eq!(unsafe { adetc_wire_encode(&bit2, buf.as_mut_ptr(), 32, &mut written) }, AdetcStatus::Protocol);
}

#[test]
fn bound_functions() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(adetc_shifted_intertransmission_time(1.0 / 6.0, 0.82, &mut v), AdetcStatus::Ok);
        assert!((v - 0.05033261771338058).abs() < 1e-15);
        assert_eq!(adetc_shifted_intertransmission_time(1.0, 0.7, &mut v), AdetcStatus::Certificate);
        assert!(last_error().contains("0.7"));
        assert_eq!(adetc_delay_adjusted_threshold(1.0, 1.0, 5.0, 0.002, &mut v), AdetcStatus::Ok);
        assert!((v - 0.988).abs() < 1e-15);
        assert_eq!(adetc_delay_adjusted_threshold(1.0, 1.0, 5.0, 0.5, &mut v), AdetcStatus::Certificate);
        assert_eq!(adetc_rho_from_linear_gains(1.0, 1.0, 2.0, &mut v), AdetcStatus::Ok);
        assert!((v - 4.0).abs() < 1e-15);
        assert_eq!(adetc_rho_from_linear_gains(1.0, 1.0, 2.0, ptr::null_mut()), AdetcStatus::NullPointer);
    }
    let version = unsafe { CStr::from_ptr(adetc_version()) }.to_str().unwrap();
    assert_eq!(version, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/adetc.h")).unwrap();
    for name in [
        "typedef struct AdetcConfig AdetcConfig;",
        "typedef struct AdetcTrace AdetcTrace;",
        "ADETC_STATUS_OK = 0",
        "ADETC_STATUS_PANIC = 9",
        "adetc_run(",
        "adetc_wire_decode(",
        "adetc_last_error(void)",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

fn target_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = target_dir().join("libadetc_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let src = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/smoke.c");
    let include = concat!(env!("CARGO_MANIFEST_DIR"), "/include");
    let out = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(src)
        .arg("-I")
        .arg(include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    assert!(stdout.contains("status=OK"), "{stdout}");
}
