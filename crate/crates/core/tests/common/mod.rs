#![allow(dead_code)]

use std::sync::OnceLock;

use adetc::engine::{run, EventCause, SimConfig, Trace};
use adetc::plant::{preset, PlantModel};

pub fn example1() -> &'static Trace {
    static T: OnceLock<Trace> = OnceLock::new();
    T.get_or_init(|| run(&SimConfig::example1()).expect("example 1 runs"))
}

pub fn example2() -> &'static Trace {
    static T: OnceLock<Trace> = OnceLock::new();
    T.get_or_init(|| run(&SimConfig::example2()).expect("example 2 runs"))
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Largest excess of V over the per-epoch envelope
/// `max(V at epoch start, ultimate level of the epoch threshold)`.
pub fn envelope_excess(model: &PlantModel, trace: &Trace) -> f64 {
    let cert = model.certificate();
    let first = &trace.samples[0];
    let mut starts = vec![(first.t, first.v, trace.design.eta0)];
    for s in &trace.shrinks {
        starts.push((s.t, s.v_at_command, s.eta_after));
    }
    let mut worst = f64::NEG_INFINITY;
    for s in &trace.samples {
        let k = starts.partition_point(|e| e.0 <= s.t) - 1;
        let (_, v, eta) = starts[k];
        let env = v.max(cert.ultimate_level(eta).unwrap());
        worst = worst.max(s.v - env);
    }
    worst
}

/// Samples where the controller's reconstruction differs from what the
/// sensors hold, counting only samples with nothing in flight.
pub fn reconstruction_mismatches(trace: &Trace) -> usize {
    trace
        .samples
        .iter()
        .filter(|s| s.in_flight == 0)
        .filter(|s| s.x_hat.iter().zip(&s.held).any(|(a, b)| a.to_bits() != b.to_bits()))
        .count()
}

fn rk4(model: &PlantModel, u: &[f64], x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let f = |y: &[f64]| {
        let mut d = vec![0.0; n];
        model.dynamics().field(y, u, &mut d);
        d
    };
    let axpy = |a: &[f64], k: &[f64], c: f64| a.iter().zip(k).map(|(p, q)| p + c * q).collect::<Vec<_>>();
    let k1 = f(x);
    let k2 = f(&axpy(x, &k1, h / 2.0));
    let k3 = f(&axpy(x, &k2, h / 2.0));
    let k4 = f(&axpy(x, &k3, h));
    (0..n).map(|j| x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])).collect()
}

/// Replays every located crossing on a grid 100 times finer than the
/// engine step and returns the worst `|t_located − t_brute| / (h/100)`
/// plus the number of events checked.
pub fn brute_force_disagreement(model: &PlantModel, trace: &Trace) -> (f64, usize) {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for e in trace.events.iter().filter(|e| e.cause == EventCause::Crossing) {
        let seg = e.segment.as_ref().expect("crossing events carry their step");
        let mut u = vec![0.0; model.m()];
        model.dynamics().control(&seg.x_hat, &mut u);
        let fine = seg.step / 100.0;
        let mut x = seg.x0.clone();
        let mut t_hit = None;
        for k in 1..=100 {
            x = rk4(model, &u, &x, fine);
            let err = e.held_before - x[e.sensor];
            if err * err >= e.threshold {
                t_hit = Some(seg.t0 + k as f64 * fine);
                break;
            }
        }
        // a crossing sitting within rounding of the step end may not show on the grid
        let t_hit = t_hit.unwrap_or(seg.t0 + seg.step);
        worst = worst.max((e.t - t_hit).abs() / fine);
        checked += 1;
    }
    (worst, checked)
}

pub fn model(name: &str) -> PlantModel {
    preset(name).unwrap()
}
