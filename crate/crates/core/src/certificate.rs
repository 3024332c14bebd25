//! Class-K∞ comparison functions, ISS Lyapunov certificates, and the
//! analytic quantities derived from them: growth ratios, the shrink gain ρ,
//! and the lower bounds on sensor inter-transmission times.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type StateMap = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradientMap = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Maximum number of halvings used by the numeric inverter.
pub const BISECTION_MAX_ITER: usize = 200;
/// Default number of points in the logarithmic grid used by [`compute_rho`].
pub const DEFAULT_RHO_GRID: usize = 10_000;
/// Inflation applied to the grid supremum of the growth ratio.
pub const RHO_SAFETY_FACTOR: f64 = 1.01;
/// Number of decades below `eta0` covered by the growth-ratio grid.
pub const RHO_GRID_DECADES: f64 = 12.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CertificateError {
    #[error("value {value} exceeds the invertible range [0, {max}]")]
    DomainExceeded { value: f64, max: f64 },
    #[error("bracketing failed while inverting at {value}: function is not monotone")]
    NotMonotone { value: f64 },
    #[error(
        "growth ratio keeps increasing as s -> 0 (ratio {ratio_small:e} at s = {s_small:e}); \
         the certificate only supports practical stability"
    )]
    Unbounded { s_small: f64, ratio_small: f64 },
    #[error("mu = {0} must lie in (sqrt(0.5), 1)")]
    MuOutOfRange(f64),
    #[error("delay {delay} is not below the admissible ceiling {ceiling}")]
    DelayTooLarge { delay: f64, ceiling: f64 },
    #[error("initial threshold {eta0} is below the admissible minimum {minimum}")]
    Eta0TooSmall { eta0: f64, minimum: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, CertificateError>;

/// A class-K∞ function `[0, ∞) -> [0, ∞)` together with what is needed to
/// invert it: either a closed-form inverse or a cap on the bisection domain.
#[derive(Clone)]
pub struct KInfFn {
    label: String,
    forward: ScalarMap,
    inverse: Option<ScalarMap>,
    domain_cap: f64,
}

impl fmt::Debug for KInfFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KInfFn")
            .field("label", &self.label)
            .field("domain_cap", &self.domain_cap)
            .field("analytic_inverse", &self.inverse.is_some())
            .finish()
    }
}

impl KInfFn {
    pub fn new<F>(label: impl Into<String>, forward: F, domain_cap: f64) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        assert!(domain_cap > 0.0 && domain_cap.is_finite(), "domain cap must be positive and finite");
        Self {
            label: label.into(),
            forward: Arc::new(forward),
            inverse: None,
            domain_cap,
        }
    }

    pub fn with_inverse<G>(mut self, inverse: G) -> Self
    where
        G: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        self.inverse = Some(Arc::new(inverse));
        self
    }

    /// `s ↦ gain·s`.
    pub fn linear(gain: f64) -> Self {
        assert!(gain > 0.0, "linear K∞ gain must be positive");
        Self::new(format!("{gain}*s"), move |s| gain * s, 1e12).with_inverse(move |y| y / gain)
    }

    /// `s ↦ coef·s^exponent`.
    pub fn power(coef: f64, exponent: f64) -> Self {
        assert!(coef > 0.0 && exponent > 0.0, "power K∞ needs positive coefficient and exponent");
        let cap = 1e12_f64.powf(1.0 / exponent).min(1e12);
        Self::new(format!("{coef}*s^{exponent}"), move |s| coef * s.powf(exponent), cap)
            .with_inverse(move |y| (y / coef).powf(1.0 / exponent))
    }

    /// The composition `self ∘ inner`. The closed-form inverse is kept only
    /// when both factors carry one.
    pub fn compose(&self, inner: &KInfFn) -> KInfFn {
        let outer_f = Arc::clone(&self.forward);
        let inner_f = Arc::clone(&inner.forward);
        let cap = inner.domain_cap;
        let mut composed = KInfFn {
            label: format!("({})∘({})", self.label, inner.label),
            forward: Arc::new(move |s| outer_f(inner_f(s))),
            inverse: None,
            domain_cap: cap,
        };
        if let (Some(outer_inv), Some(inner_inv)) = (&self.inverse, &inner.inverse) {
            let outer_inv = Arc::clone(outer_inv);
            let inner_inv = Arc::clone(inner_inv);
            composed.inverse = Some(Arc::new(move |y| inner_inv(outer_inv(y))));
        }
        composed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn domain_cap(&self) -> f64 {
        self.domain_cap
    }

    pub fn has_analytic_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.forward)(s)
    }

    /// Largest value the inverter accepts.
    pub fn range_cap(&self) -> f64 {
        self.eval(self.domain_cap)
    }

    pub fn invert(&self, y: f64) -> Result<f64> {
        invert(self, y)
    }
}

/// Inverts a K∞ function at `y`, using the closed-form inverse when one is
/// attached and bisection on `[0, domain_cap]` otherwise.
pub fn invert(func: &KInfFn, y: f64) -> Result<f64> {
    if !(y >= 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "cannot invert {} at negative or NaN value {y}",
            func.label
        )));
    }
    let max = func.range_cap();
    if !(y <= max) {
        return Err(CertificateError::DomainExceeded { value: y, max });
    }
    if y == 0.0 {
        return Ok(0.0);
    }
    if let Some(inv) = &func.inverse {
        return Ok(inv(y));
    }

    let (mut lo, mut hi) = (0.0_f64, func.domain_cap);
    if func.eval(lo) > y {
        return Err(CertificateError::NotMonotone { value: y });
    }
    for _ in 0..BISECTION_MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = func.eval(mid);
        if !fm.is_finite() {
            return Err(CertificateError::NotMonotone { value: y });
        }
        if fm < y {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    if (func.eval(s) - y).abs() > 1e-10 * y.max(1.0) {
        return Err(CertificateError::NotMonotone { value: y });
    }
    Ok(s)
}

/// An ISS Lyapunov certificate of the closed loop `ẋ = f(x, k(x + e))`
/// with respect to the measurement error `e`.
#[derive(Clone)]
pub struct IssCertificate {
    pub alpha_lower: KInfFn,
    pub alpha_upper: KInfFn,
    pub alpha_v: KInfFn,
    pub alpha_e: KInfFn,
    lyapunov: StateMap,
    lyapunov_gradient: GradientMap,
    lipschitz_per_coord: Vec<f64>,
    compact_radius: f64,
}

impl fmt::Debug for IssCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IssCertificate")
            .field("alpha_lower", &self.alpha_lower)
            .field("alpha_upper", &self.alpha_upper)
            .field("alpha_v", &self.alpha_v)
            .field("alpha_e", &self.alpha_e)
            .field("lipschitz_per_coord", &self.lipschitz_per_coord)
            .field("compact_radius", &self.compact_radius)
            .finish_non_exhaustive()
    }
}

impl IssCertificate {
    #[allow(clippy::too_many_arguments)]
    pub fn new<V, G>(
        alpha_lower: KInfFn,
        alpha_upper: KInfFn,
        alpha_v: KInfFn,
        alpha_e: KInfFn,
        lyapunov: V,
        lyapunov_gradient: G,
        lipschitz_per_coord: Vec<f64>,
        compact_radius: f64,
    ) -> Result<Self>
    where
        V: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if lipschitz_per_coord.is_empty() {
            return Err(CertificateError::InvalidArgument(
                "at least one Lipschitz constant is required".into(),
            ));
        }
        if let Some(bad) = lipschitz_per_coord.iter().find(|l| !(**l > 0.0) || !l.is_finite()) {
            return Err(CertificateError::InvalidArgument(format!(
                "Lipschitz constants must be positive and finite, got {bad}"
            )));
        }
        if !(compact_radius > 0.0) {
            return Err(CertificateError::InvalidArgument(format!(
                "compact radius must be positive, got {compact_radius}"
            )));
        }
        Ok(Self {
            alpha_lower,
            alpha_upper,
            alpha_v,
            alpha_e,
            lyapunov: Arc::new(lyapunov),
            lyapunov_gradient: Arc::new(lyapunov_gradient),
            lipschitz_per_coord,
            compact_radius,
        })
    }

    pub fn dim(&self) -> usize {
        self.lipschitz_per_coord.len()
    }

    pub fn lipschitz(&self, i: usize) -> f64 {
        self.lipschitz_per_coord[i]
    }

    pub fn lipschitz_per_coord(&self) -> &[f64] {
        &self.lipschitz_per_coord
    }

    pub fn compact_radius(&self) -> f64 {
        self.compact_radius
    }

    #[inline]
    pub fn lyapunov(&self, x: &[f64]) -> f64 {
        (self.lyapunov)(x)
    }

    pub fn lyapunov_gradient(&self, x: &[f64], grad: &mut [f64]) {
        (self.lyapunov_gradient)(x, grad)
    }

    /// `α_v⁻¹(α_e(η))`: the Lyapunov level below which an error bounded by
    /// `eta` can no longer push the state outward.
    pub fn ultimate_level(&self, eta: f64) -> Result<f64> {
        self.alpha_v.invert(self.alpha_e.eval(eta))
    }

    /// Positive where the sandwich `α̲(|x|) ≤ V(x) ≤ ᾱ(|x|)` is violated.
    pub fn sandwich_residual(&self, x: &[f64]) -> f64 {
        let r = norm(x);
        let v = self.lyapunov(x);
        (self.alpha_lower.eval(r) - v).max(v - self.alpha_upper.eval(r))
    }

    /// `∇V(x)·ẋ + α_v(V(x)) − α_e(|e|)`; non-positive when the dissipation
    /// inequality holds at `(x, e)` for the supplied closed-loop derivative.
    pub fn dissipation_residual(&self, x: &[f64], e: &[f64], xdot: &[f64]) -> f64 {
        let mut grad = vec![0.0; x.len()];
        self.lyapunov_gradient(x, &mut grad);
        let vdot: f64 = grad.iter().zip(xdot).map(|(g, f)| g * f).sum();
        vdot + self.alpha_v.eval(self.lyapunov(x)) - self.alpha_e.eval(norm(e))
    }

    /// Radius of the Lyapunov sublevel set that a run starting at level
    /// `v0` with threshold `eta0` stays inside, plus a 10% margin.
    pub fn default_compact_radius(&self, v0: f64, eta0: f64) -> Result<f64> {
        let level = v0.max(self.ultimate_level(eta0)?);
        Ok(1.1 * self.alpha_lower.invert(level)?)
    }

    pub fn growth_ratio(&self, s: f64) -> Result<f64> {
        growth_ratio(self, s)
    }
}

/// `α̲⁻¹(ᾱ(α̲⁻¹(α_v⁻¹(α_e(s))) + 2s)) / s`.
pub fn growth_ratio(cert: &IssCertificate, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "growth ratio needs s > 0, got {s}"
        )));
    }
    let inner = cert.alpha_lower.invert(cert.ultimate_level(s)?)?;
    let lifted = cert.alpha_upper.eval(inner + 2.0 * s);
    Ok(cert.alpha_lower.invert(lifted)? / s)
}

/// Supremum of the growth ratio over a logarithmic grid on `(0, eta0]`,
/// inflated by [`RHO_SAFETY_FACTOR`].
///
/// Fails with [`CertificateError::Unbounded`] when the ratio is still
/// climbing over the two smallest decades of the grid.
pub fn compute_rho(cert: &IssCertificate, eta0: f64, grid_size: usize) -> Result<f64> {
    let ratios = growth_ratio_grid(cert, eta0, grid_size)?;
    let window = ((2.0 / RHO_GRID_DECADES) * (grid_size - 1) as f64).round() as usize;
    let (s_small, r_small) = ratios[0];
    let (_, r_ref) = ratios[window.max(1)];
    let climbing = ratios[..=window.max(1)].windows(2).all(|w| w[0].1 >= w[1].1);
    if climbing && r_small > 1.5 * r_ref {
        return Err(CertificateError::Unbounded {
            s_small,
            ratio_small: r_small,
        });
    }
    let sup = ratios.iter().map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max);
    Ok(sup * RHO_SAFETY_FACTOR)
}

/// The `(s, growth_ratio(s))` pairs on the grid used by [`compute_rho`],
/// ordered from the smallest `s` up to `eta0`.
pub fn growth_ratio_grid(
    cert: &IssCertificate,
    eta0: f64,
    grid_size: usize,
) -> Result<Vec<(f64, f64)>> {
    if grid_size < 100 {
        return Err(CertificateError::InvalidArgument(format!(
            "grid size must be at least 100, got {grid_size}"
        )));
    }
    if !(eta0 > 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "eta0 must be positive, got {eta0}"
        )));
    }
    (0..grid_size)
        .map(|k| {
            let frac = k as f64 / (grid_size - 1) as f64;
            let s = if k + 1 == grid_size {
                eta0
            } else {
                eta0 * 10f64.powf(-RHO_GRID_DECADES * (1.0 - frac))
            };
            growth_ratio(cert, s).map(|r| (s, r))
        })
        .collect()
}

/// Infimum of the admissible shrink gains under global linear bounds
/// `ᾱ(s) ≤ k_upper·s`, `α̲(s) ≥ k_lower·s`, `α_v⁻¹∘α_e(s) ≤ k_ve·s`.
/// Any ρ strictly above the returned value is admissible.
pub fn rho_from_linear_gains(k_upper: f64, k_lower: f64, k_ve: f64) -> Result<f64> {
    if !(k_upper > 0.0 && k_lower > 0.0 && k_ve > 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "linear gains must be positive, got ({k_upper}, {k_lower}, {k_ve})"
        )));
    }
    Ok(k_upper / (k_lower * k_lower) * (k_ve + 2.0 * k_lower))
}

/// Lower bound on the time between two transmissions of sensor `i` under a
/// constant threshold `eta`, starting from Lyapunov level `v0`.
pub fn min_intertransmission_time(
    cert: &IssCertificate,
    theta_i: f64,
    eta: f64,
    v0: f64,
    i: usize,
) -> Result<f64> {
    if !(eta > 0.0) || !(v0 >= 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "need eta > 0 and V0 >= 0, got eta = {eta}, V0 = {v0}"
        )));
    }
    let reach = cert.alpha_lower.invert(v0.max(cert.ultimate_level(eta)?))?;
    Ok(theta_i * eta / (cert.lipschitz(i) * (eta + reach)))
}

/// Lower bound on the time between transmissions of sensor `i` inside one
/// epoch of the shrinking schedule.
pub fn steady_intertransmission_time(
    cert: &IssCertificate,
    theta_i: f64,
    kappa: f64,
    i: usize,
) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "kappa must be non-negative, got {kappa}"
        )));
    }
    Ok(theta_i / (cert.lipschitz(i) * (1.0 + kappa)))
}

/// Lower bound across a threshold shrink when local thresholds switch
/// `tau_star` after the controller command.
pub fn shifted_intertransmission_time(tau_star: f64, mu: f64) -> Result<f64> {
    check_mu(mu)?;
    if !(tau_star > 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "tau_star must be positive, got {tau_star}"
        )));
    }
    let mu_sq = mu * mu;
    Ok((1.0 - ((1.0 - mu_sq) / mu_sq).sqrt()) * tau_star)
}

/// Reduced trigger threshold that keeps the plant-side error below `eta`
/// when deliveries lag by at most `delay_max`.
pub fn delay_adjusted_threshold(eta: f64, l_fi: f64, kappa: f64, delay_max: f64) -> Result<f64> {
    if !(delay_max >= 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "delay must be non-negative, got {delay_max}"
        )));
    }
    let ceiling = delay_ceiling(l_fi, kappa);
    if !(delay_max < ceiling) {
        return Err(CertificateError::DelayTooLarge {
            delay: delay_max,
            ceiling,
        });
    }
    Ok(eta * (1.0 - l_fi * (kappa + 1.0) * delay_max))
}

/// Supremum of admissible delays for a coordinate, `1 / (L·(κ+1))`.
pub fn delay_ceiling(l_fi: f64, kappa: f64) -> f64 {
    1.0 / (l_fi * (kappa + 1.0))
}

/// Inter-transmission bound inside an epoch under a bounded disturbance
/// with `‖δ‖∞ ≤ n_d·η_min`.
pub fn disturbed_intertransmission_time(
    cert: &IssCertificate,
    theta_i: f64,
    kappa: f64,
    n_d: f64,
    i: usize,
) -> Result<f64> {
    if !(n_d >= 0.0) {
        return Err(CertificateError::InvalidArgument(format!(
            "n_d must be non-negative, got {n_d}"
        )));
    }
    Ok(theta_i / (cert.lipschitz(i) * ((kappa + 1.0) + n_d)))
}

pub fn check_mu(mu: f64) -> Result<()> {
    // compared against √0.5 itself: squaring the boundary rounds above 0.5
    if mu > std::f64::consts::FRAC_1_SQRT_2 && mu < 1.0 {
        Ok(())
    } else {
        Err(CertificateError::MuOutOfRange(mu))
    }
}

/// ρ, μ, κ = ρ/μ and the initial threshold of a shrinking-threshold design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSummary {
    pub rho: f64,
    pub mu: f64,
    pub kappa: f64,
    pub eta0: f64,
}

impl GainSummary {
    /// Validates the design against the certificate and the initial
    /// Lyapunov level `v0`.
    pub fn new(cert: &IssCertificate, rho: f64, mu: f64, eta0: f64, v0: f64) -> Result<Self> {
        check_mu(mu)?;
        if !(rho > 0.0) || !(eta0 > 0.0) {
            return Err(CertificateError::InvalidArgument(format!(
                "rho and eta0 must be positive, got rho = {rho}, eta0 = {eta0}"
            )));
        }
        let minimum = mu / rho * cert.alpha_lower.invert(v0)?;
        if eta0 < minimum * (1.0 - 1e-12) {
            return Err(CertificateError::Eta0TooSmall { eta0, minimum });
        }
        Ok(Self {
            rho,
            mu,
            kappa: rho / mu,
            eta0,
        })
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
