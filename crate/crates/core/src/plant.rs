//! Continuous-time plants, their state-feedback laws, and the two bundled
//! presets with ISS Lyapunov certificates.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::certificate::{norm, CertificateError, IssCertificate, KInfFn};
use crate::linalg::{self, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("Lyapunov solve failed: {0}")]
    LyapunovSolveFailed(#[from] LinalgError),
    #[error("unknown plant preset `{0}` (expected example1 or example2)")]
    UnknownPreset(String),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

/// Open-loop dynamics `ẋ = f(x, u)` and a static feedback `u = k(x̂)`.
pub trait PlantDynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn field(&self, x: &[f64], u: &[f64], dx: &mut [f64]);
    fn control(&self, x_held: &[f64], u: &mut [f64]);
}

/// A plant, its controller and the certificate that justifies triggering.
#[derive(Clone)]
pub struct PlantModel {
    name: String,
    dynamics: Arc<dyn PlantDynamics>,
    certificate: IssCertificate,
}

impl fmt::Debug for PlantModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlantModel")
            .field("name", &self.name)
            .field("n", &self.n())
            .field("m", &self.m())
            .field("certificate", &self.certificate)
            .finish()
    }
}

impl PlantModel {
    pub fn new(
        name: impl Into<String>,
        dynamics: Arc<dyn PlantDynamics>,
        certificate: IssCertificate,
    ) -> Result<Self, PlantError> {
        if certificate.dim() != dynamics.state_dim() {
            return Err(CertificateError::InvalidArgument(format!(
                "certificate carries {} Lipschitz constants for a {}-dimensional plant",
                certificate.dim(),
                dynamics.state_dim()
            ))
            .into());
        }
        Ok(Self {
            name: name.into(),
            dynamics,
            certificate,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.dynamics.state_dim()
    }

    pub fn m(&self) -> usize {
        self.dynamics.input_dim()
    }

    pub fn dynamics(&self) -> &dyn PlantDynamics {
        self.dynamics.as_ref()
    }

    pub fn certificate(&self) -> &IssCertificate {
        &self.certificate
    }

    /// `f(x, k(x_held)) + d`.
    pub fn closed_loop_field(&self, x: &[f64], x_held: &[f64], d: Option<&[f64]>) -> Vec<f64> {
        let mut u = vec![0.0; self.m()];
        self.dynamics.control(x_held, &mut u);
        let mut dx = vec![0.0; self.n()];
        self.dynamics.field(x, &u, &mut dx);
        if let Some(d) = d {
            for (a, b) in dx.iter_mut().zip(d) {
                *a += b;
            }
        }
        dx
    }

    pub fn lyapunov_value(&self, x: &[f64]) -> f64 {
        self.certificate.lyapunov(x)
    }
}

/// Looks a preset up by name.
pub fn preset(name: &str) -> Result<PlantModel, PlantError> {
    match name {
        "example1" => build_example1(),
        "example2" => build_example2(),
        other => Err(PlantError::UnknownPreset(other.to_string())),
    }
}

#[inline]
pub fn sat(s: f64) -> f64 {
    s.clamp(-1.0, 1.0)
}

/// `ẋ = sat(u)`, `u = −x̂`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SaturatedIntegrator;

impl PlantDynamics for SaturatedIntegrator {
    fn state_dim(&self) -> usize {
        1
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn field(&self, _x: &[f64], u: &[f64], dx: &mut [f64]) {
        dx[0] = sat(u[0]);
    }
    fn control(&self, x_held: &[f64], u: &mut [f64]) {
        u[0] = -x_held[0];
    }
}

/// `s³/3 + s²/2`, the comparison function of the scalar example.
pub fn cubic_quadratic(s: f64) -> f64 {
    s * s * s / 3.0 + s * s / 2.0
}

/// Inverse of [`cubic_quadratic`] by Newton iteration from an upper seed.
/// The map is convex and increasing on `[0, ∞)`, so the iterates decrease
/// monotonically to the root.
pub fn cubic_quadratic_inverse(y: f64) -> f64 {
    if !(y > 0.0) {
        return 0.0;
    }
    let mut s = (2.0 * y).sqrt().min((3.0 * y).cbrt());
    for _ in 0..100 {
        let step = (cubic_quadratic(s) - y) / (s * s + s);
        let next = s - step;
        if !(next < s) || next <= 0.0 {
            break;
        }
        s = next;
    }
    s
}

/// Scalar saturated integrator with `V(x) = |x|³/3 + |x|²/2`,
/// `V̇ ≤ −x²/2 + 2e²`.
pub fn build_example1() -> Result<PlantModel, PlantError> {
    let alpha = KInfFn::new("s^3/3+s^2/2", cubic_quadratic, 1e4).with_inverse(cubic_quadratic_inverse);
    // α_v = α_x ∘ ᾱ⁻¹ with α_x(s) = s²/2
    let alpha_v = KInfFn::new(
        "(abar^-1(s))^2/2",
        |v| {
            let s = cubic_quadratic_inverse(v);
            s * s / 2.0
        },
        cubic_quadratic(1e4),
    )
    .with_inverse(|y| cubic_quadratic((2.0 * y).sqrt()));
    let alpha_e = KInfFn::power(2.0, 2.0);
    let cert = IssCertificate::new(
        alpha.clone(),
        alpha,
        alpha_v,
        alpha_e,
        |x: &[f64]| cubic_quadratic(x[0].abs()),
        |x: &[f64], g: &mut [f64]| g[0] = x[0] * x[0].abs() + x[0],
        // |sat(−x−e)| ≤ |x| + |e|
        vec![1.0],
        12.0,
    )?;
    PlantModel::new("example1", Arc::new(SaturatedIntegrator), cert)
}

pub const EXAMPLE2_A: [[f64; 4]; 4] = [
    [1.5, 0.0, 7.0, -5.0],
    [-0.5, -4.0, 0.0, 0.5],
    [1.0, 4.0, -6.0, 6.0],
    [0.0, 4.0, 1.0, -2.0],
];
pub const EXAMPLE2_B: [[f64; 2]; 4] = [[0.0, 0.0], [5.0, 0.0], [1.0, -3.0], [1.0, 0.0]];
/// Stabilising gain, applied as `u = −f(x̂) + K·x̂` so that `A + B·K` is
/// Hurwitz.
pub const EXAMPLE2_K: [[f64; 4]; 2] = [[0.1, -0.2, 0.0, -0.2], [1.5, -0.2, 0.0, 0.0]];
/// Radius of the set of initial conditions the design is certified for.
pub const EXAMPLE2_INITIAL_RADIUS: f64 = 2.0;
/// Largest measurement error used when estimating Lipschitz constants.
pub const EXAMPLE2_ERROR_RADIUS: f64 = 0.1;
pub const LIPSCHITZ_INFLATION: f64 = 1.05;

/// `ẋ = A·x + B·(f(x) + u)` with `f(x) = [x₂², sin x₃]ᵀ`.
#[derive(Debug, Clone, Copy, Default)]
pub struct MatchedNonlinearPlant;

#[inline]
fn example2_nonlinearity(x: &[f64]) -> [f64; 2] {
    [x[1] * x[1], x[2].sin()]
}

impl PlantDynamics for MatchedNonlinearPlant {
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn field(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let f = example2_nonlinearity(x);
        let v = [f[0] + u[0], f[1] + u[1]];
        for (i, row) in EXAMPLE2_A.iter().enumerate() {
            let ax: f64 = row.iter().zip(x).map(|(a, xi)| a * xi).sum();
            dx[i] = ax + EXAMPLE2_B[i][0] * v[0] + EXAMPLE2_B[i][1] * v[1];
        }
    }
    fn control(&self, x_held: &[f64], u: &mut [f64]) {
        let f = example2_nonlinearity(x_held);
        for (j, row) in EXAMPLE2_K.iter().enumerate() {
            let kx: f64 = row.iter().zip(x_held).map(|(k, xi)| k * xi).sum();
            u[j] = -f[j] + kx;
        }
    }
}

/// Which error gain the second preset's certificate carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DissipationBound {
    /// `|√P·B·K| + |√P|·L_f`, reproducing the published design
    /// (ρ_min ≈ 237, so ρ = 253 is admissible).
    #[default]
    Published,
    /// `|√P·B·K| + |√P·B|·L_f`, which bounds `|√P·B·(f(x) − f(x+e))|`
    /// correctly; the resulting ρ_min is about 717 and ρ = 253 is not
    /// admissible.
    Sound,
}

/// Quadratic Lyapunov data for the second preset.
#[derive(Debug, Clone)]
pub struct QuadraticDesign {
    pub a_c: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub sqrt_p: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub norm_sqrt_p_bk: f64,
    pub norm_sqrt_p: f64,
    pub norm_sqrt_p_b: f64,
    /// Lipschitz constant of `[x₂², sin x₃]` on `|x| ≤ 2`, inflated.
    pub nonlinearity_lipschitz: f64,
    /// Coefficient `c` in `V̇ ≤ −|x|/(2√λ_M) + c·|e|`.
    pub error_gain: f64,
    pub bound: DissipationBound,
}

impl QuadraticDesign {
    pub fn new(bound: DissipationBound) -> Result<Self, PlantError> {
        let a = DMatrix::from_fn(4, 4, |i, j| EXAMPLE2_A[i][j]);
        let b = DMatrix::from_fn(4, 2, |i, j| EXAMPLE2_B[i][j]);
        let k = DMatrix::from_fn(2, 4, |i, j| EXAMPLE2_K[i][j]);
        let a_c = &a + &b * &k;
        let p = linalg::solve_lyapunov(&a_c, &DMatrix::identity(4, 4))?;
        let eig = linalg::symmetric_eigenvalues(&p);
        let sqrt_p = linalg::sym_sqrt(&p)?;
        let norm_sqrt_p_bk = linalg::spectral_norm(&(&sqrt_p * &b * &k));
        let norm_sqrt_p = linalg::spectral_norm(&sqrt_p);
        let norm_sqrt_p_b = linalg::spectral_norm(&(&sqrt_p * &b));
        // max of |∂(x₂²)| = 2·2 and |∂(sin x₃)| = 1 on the ball, inflated
        let nonlinearity_lipschitz = (2.0 * EXAMPLE2_INITIAL_RADIUS).max(1.0) * LIPSCHITZ_INFLATION;
        let error_gain = match bound {
            DissipationBound::Published => norm_sqrt_p_bk + norm_sqrt_p * nonlinearity_lipschitz,
            DissipationBound::Sound => norm_sqrt_p_bk + norm_sqrt_p_b * nonlinearity_lipschitz,
        };
        Ok(Self {
            a_c,
            p,
            sqrt_p,
            lambda_min: eig[0],
            lambda_max: eig[eig.len() - 1],
            norm_sqrt_p_bk,
            norm_sqrt_p,
            norm_sqrt_p_b,
            nonlinearity_lipschitz,
            error_gain,
            bound,
        })
    }

    /// Slope of `ᾱ`.
    pub fn k_upper(&self) -> f64 {
        self.lambda_max.sqrt()
    }

    /// Slope of `α̲`.
    pub fn k_lower(&self) -> f64 {
        self.lambda_min.sqrt()
    }

    /// Slope of `α_v⁻¹∘α_e`, with `α_v(s) = s/(2λ_M)`.
    pub fn k_ve(&self) -> f64 {
        2.0 * self.lambda_max * self.error_gain
    }

    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        x.dot(&(&self.p * &x)).max(0.0).sqrt()
    }
}

pub fn build_example2() -> Result<PlantModel, PlantError> {
    build_example2_with(DissipationBound::Published)
}

pub fn build_example2_with(bound: DissipationBound) -> Result<PlantModel, PlantError> {
    let design = QuadraticDesign::new(bound)?;
    let p: [[f64; 4]; 4] = std::array::from_fn(|i| std::array::from_fn(|j| design.p[(i, j)]));
    let lyap = move |x: &[f64]| quad_form(&p, x).max(0.0).sqrt();
    let grad = move |x: &[f64], g: &mut [f64]| {
        let v = quad_form(&p, x).max(0.0).sqrt();
        for (i, gi) in g.iter_mut().enumerate() {
            let px: f64 = p[i].iter().zip(x).map(|(a, b)| a * b).sum();
            *gi = if v > 0.0 { px / v } else { 0.0 };
        }
    };
    let dynamics = MatchedNonlinearPlant;
    let lipschitz = estimate_closed_loop_lipschitz(
        &dynamics,
        EXAMPLE2_INITIAL_RADIUS,
        EXAMPLE2_ERROR_RADIUS,
        20_000,
        0x5eed_0002,
        LIPSCHITZ_INFLATION,
    );
    let lambda_max = design.lambda_max;
    let cert = IssCertificate::new(
        KInfFn::linear(design.k_lower()),
        KInfFn::linear(design.k_upper()),
        KInfFn::linear(1.0 / (2.0 * lambda_max)),
        KInfFn::linear(design.error_gain),
        lyap,
        grad,
        lipschitz,
        EXAMPLE2_INITIAL_RADIUS,
    )?;
    PlantModel::new("example2", Arc::new(dynamics), cert)
}

fn quad_form(p: &[[f64; 4]; 4], x: &[f64]) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, row)| x[i] * row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

/// Uniform sample from the closed Euclidean ball of the given radius.
pub fn sample_ball<R: Rng>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let r = norm(&v);
    let scale = if r > 0.0 {
        radius * rng.gen::<f64>().powf(1.0 / dim as f64) / r
    } else {
        0.0
    };
    v.iter_mut().for_each(|c| *c *= scale);
    v
}

/// Per-coordinate constants `L_i` with
/// `|F_i(x, e) − F_i(x', e')| ≤ L_i·(|x − x'| + |e − e'|)` for the closed
/// loop `F(x, e) = f(x, k(x + e))`, estimated from central differences at
/// random points of `|x| ≤ radius`, `|e| ≤ e_max`.
pub fn estimate_closed_loop_lipschitz(
    dynamics: &dyn PlantDynamics,
    radius: f64,
    e_max: f64,
    samples: usize,
    seed: u64,
    inflation: f64,
) -> Vec<f64> {
    let n = dynamics.state_dim();
    let m = dynamics.input_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let step = 1e-6;
    let mut best = vec![0.0_f64; n];
    let mut u = vec![0.0; m];
    let mut held = vec![0.0; n];
    let mut plus = vec![0.0; n];
    let mut minus = vec![0.0; n];
    let mut eval = |x: &[f64], e: &[f64], out: &mut [f64]| {
        for j in 0..n {
            held[j] = x[j] + e[j];
        }
        dynamics.control(&held, &mut u);
        dynamics.field(x, &u, out);
    };
    for _ in 0..samples {
        let x = sample_ball(&mut rng, n, radius);
        let e = sample_ball(&mut rng, n, e_max);
        let mut grad_x = vec![vec![0.0; n]; n];
        let mut grad_e = vec![vec![0.0; n]; n];
        for j in 0..n {
            for (wrt_state, grad) in [(true, &mut grad_x), (false, &mut grad_e)] {
                let (mut xp, mut ep) = (x.clone(), e.clone());
                let (mut xm, mut em) = (x.clone(), e.clone());
                if wrt_state {
                    xp[j] += step;
                    xm[j] -= step;
                } else {
                    ep[j] += step;
                    em[j] -= step;
                }
                eval(&xp, &ep, &mut plus);
                eval(&xm, &em, &mut minus);
                for i in 0..n {
                    grad[i][j] = (plus[i] - minus[i]) / (2.0 * step);
                }
            }
        }
        for i in 0..n {
            let l = norm(&grad_x[i]).max(norm(&grad_e[i]));
            best[i] = best[i].max(l);
        }
    }
    best.iter().map(|l| l * inflation).collect()
}

/// Worst violation found by [`verify_dissipation`].
#[derive(Debug, Clone)]
pub struct DissipationReport {
    pub samples: usize,
    pub worst_residual: f64,
    pub worst_x: Vec<f64>,
    pub worst_e: Vec<f64>,
}

impl DissipationReport {
    pub fn holds(&self) -> bool {
        self.worst_residual <= 0.0
    }
}

/// Samples `(x, e)` uniformly from `|x| ≤ radius`, `|e| ≤ e_max` and
/// evaluates the certificate's dissipation inequality on the true closed
/// loop.
pub fn verify_dissipation(
    model: &PlantModel,
    radius: f64,
    e_max: f64,
    samples: usize,
    seed: u64,
) -> DissipationReport {
    let n = model.n();
    let cert = model.certificate();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DissipationReport {
        samples,
        worst_residual: f64::NEG_INFINITY,
        worst_x: vec![0.0; n],
        worst_e: vec![0.0; n],
    };
    for _ in 0..samples {
        let x = sample_ball(&mut rng, n, radius);
        let e = sample_ball(&mut rng, n, e_max);
        let held: Vec<f64> = x.iter().zip(&e).map(|(a, b)| a + b).collect();
        let xdot = model.closed_loop_field(&x, &held, None);
        let r = cert.dissipation_residual(&x, &e, &xdot);
        if r > report.worst_residual {
            report.worst_residual = r;
            report.worst_x = x;
            report.worst_e = e;
        }
    }
    report
}

/// A bounded additive disturbance on the state derivative.
#[derive(Debug, Clone, PartialEq)]
pub enum DisturbanceSignal {
    /// `δ_j(t) = (a/√n)·sin(ω t + j)`.
    Sine { amplitude: f64, omega: f64 },
    /// Piecewise-constant values redrawn every `hold` time units from a
    /// seeded generator, each with `|δ| ≤ amplitude`.
    PiecewiseRandom { amplitude: f64, hold: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceSpec {
    pub signal: DisturbanceSignal,
    /// `‖δ‖∞`.
    pub magnitude_bound: f64,
    /// Ratio with `‖δ‖∞ ≤ n_d·η_min`.
    pub n_d: f64,
}

impl DisturbanceSpec {
    /// Builds the spec from a signal and the threshold floor `eta_min`.
    pub fn new(signal: DisturbanceSignal, eta_min: f64) -> Self {
        let magnitude_bound = match &signal {
            DisturbanceSignal::Sine { amplitude, .. }
            | DisturbanceSignal::PiecewiseRandom { amplitude, .. } => amplitude.abs(),
        };
        let n_d = if eta_min > 0.0 {
            magnitude_bound / eta_min
        } else if magnitude_bound > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        Self {
            signal,
            magnitude_bound,
            n_d,
        }
    }

    pub fn eval(&self, t: f64, out: &mut [f64]) {
        let scale = 1.0 / (out.len() as f64).sqrt();
        match &self.signal {
            DisturbanceSignal::Sine { amplitude, omega } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = amplitude * scale * (omega * t + j as f64).sin();
                }
            }
            DisturbanceSignal::PiecewiseRandom {
                amplitude,
                hold,
                seed,
            } => {
                let slot = (t / hold).floor().max(0.0) as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ slot.wrapping_mul(0x9e37_79b9_7f4a_7c15));
                for o in out.iter_mut() {
                    *o = amplitude * scale * rng.gen_range(-1.0..=1.0);
                }
            }
        }
    }
}
