//! Spending functions and constant-coverage interval constructions.
//!
//! For any map s from the parameter space to [0, 1], the set
//! {θ : β̂ + wσ̂·t_{α(1−s(θ))} < θ < β̂ + wσ̂·t_{1−αs(θ)}} has exact 1−α
//! coverage; s controls where the type-I error is spent. The constant
//! s ≡ 1/2 recovers the usual symmetric t-interval. A normal prior
//! N(μ, τ²) for the coefficient leads to the increasing spending function
//! s(θ) = g⁻¹(2wσ(θ−μ)/τ²) with g(s) = Φ⁻¹(αs) − Φ⁻¹(α(1−s)), for which
//! the region is always an interval and the endpoints solve
//!
//!   F((θ̲−β̂)/(wσ̂)) = α(1−s(θ̲)),   F((β̂−θ̄)/(wσ̂)) = αs(θ̄),
//!
//! with F the t CDF at the residual degrees of freedom. Those equations are
//! solved here by a bracket-secured false-position iteration; the brackets
//! come from closed-form envelope bounds on the endpoints, so the solve
//! cannot escape.

use serde::{Deserialize, Serialize};

use crate::dist::{
    ln_normal_cdf, ln_t_cdf, normal_cdf, normal_pdf, normal_quantile_raw, t_cdf, t_quantile_raw,
    Df,
};
use crate::error::{Error, Result};

/// Fraction of (wσ̃)² below which τ̃² is treated as exactly zero and the
/// step spending branch is used, avoiding overflow in 2wσ̃(θ−μ)/τ̃².
pub const STEP_TAU2_FACTOR: f64 = 1e-12;

/// Default residual tolerance, in probability units, for the endpoint
/// equations.
pub const DEFAULT_TOL: f64 = 1e-9;

const MAX_SOLVER_ITER: usize = 200;

/// Parameters of the normal-prior spending function
/// s(θ) = g⁻¹(2wσ(θ−μ)/τ²), extended with a prior center μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpendingSpec {
    /// Prior center μ̃.
    pub mu: f64,
    /// Prior variance τ̃² (nonnegative; zero selects the step branch).
    pub tau2: f64,
    /// Adaptation scale σ̃ (the estimate independent of σ̂).
    pub sigma: f64,
    /// Standard-error multiplier w of the coefficient.
    pub w: f64,
    /// Type-I error level; must be below 1/2 so the estimate stays inside
    /// its own interval.
    pub alpha: f64,
}

impl SpendingSpec {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::Domain("spending mu must be finite".into()));
        }
        if self.tau2 < 0.0 || !self.tau2.is_finite() {
            return Err(Error::Domain(format!(
                "spending tau2 must be finite and >= 0, got {}",
                self.tau2
            )));
        }
        if self.sigma <= 0.0 || !self.sigma.is_finite() {
            return Err(Error::Domain(format!(
                "spending sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.w <= 0.0 || !self.w.is_finite() {
            return Err(Error::Domain(format!(
                "spending w must be positive, got {}",
                self.w
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::Domain(format!(
                "spending alpha must lie in (0, 1/2), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Whether τ̃² is small enough (relative to (wσ̃)²) for the step branch.
    pub fn is_step(&self) -> bool {
        self.tau2 < STEP_TAU2_FACTOR * (self.w * self.sigma).powi(2)
    }
}

/// Which construction produced an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    Umau,
    FabT,
    FabZOracle,
}

impl std::fmt::Display for IntervalMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            IntervalMethod::Umau => "umau",
            IntervalMethod::FabT => "fab_t",
            IntervalMethod::FabZOracle => "fab_z_oracle",
        };
        f.write_str(s)
    }
}

/// An interval with solver diagnostics. Endpoints are reported as the
/// half-open set (lower, upper]; whether μ itself lands on a boundary only
/// matters in the degenerate τ² = 0 branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalResult {
    pub lower: f64,
    pub upper: f64,
    pub method: IntervalMethod,
    pub width: f64,
    pub solver_iters: usize,
    /// Largest endpoint-equation residual, in probability units. Zero for
    /// closed-form constructions.
    pub residual: f64,
}

impl IntervalResult {
    fn new(lower: f64, upper: f64, method: IntervalMethod, iters: usize, residual: f64) -> Self {
        debug_assert!(lower <= upper);
        IntervalResult {
            lower,
            upper,
            method,
            width: upper - lower,
            solver_iters: iters,
            residual,
        }
    }

    /// True when the interval excludes zero.
    pub fn excludes_zero(&self) -> bool {
        self.lower > 0.0 || self.upper < 0.0
    }

    /// True when `value` lies strictly inside.
    pub fn covers(&self, value: f64) -> bool {
        self.lower < value && value < self.upper
    }
}

/// g(s) = Φ⁻¹(αs) − Φ⁻¹(α(1−s)): strictly increasing on (0, 1), zero at
/// 1/2, diverging to ∓∞ at the endpoints (returned as signed infinities).
pub fn g(s: f64, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0 && alpha < 0.5);
    if s <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if s >= 1.0 {
        return f64::INFINITY;
    }
    normal_quantile_raw(alpha * s) - normal_quantile_raw(alpha * (1.0 - s))
}

// ds/dx is 1/g'(s); g'(s) = α/φ(Φ⁻¹(αs)) + α/φ(Φ⁻¹(α(1−s))).
fn g_derivative(s: f64, alpha: f64) -> f64 {
    let qa = normal_quantile_raw(alpha * s);
    let qb = normal_quantile_raw(alpha * (1.0 - s));
    alpha / normal_pdf(qa) + alpha / normal_pdf(qb)
}

/// Inverse of [`g`] in its first argument; result clamped strictly inside
/// (0, 1). Saturation at the representable boundary is harmless downstream:
/// it perturbs α·s and α·(1−s) by less than 1e-17.
pub fn g_inverse(x: f64, alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0 && alpha < 0.5);
    debug_assert!(!x.is_nan());
    let s_min = f64::MIN_POSITIVE;
    let s_max = 1.0 - 0.5 * f64::EPSILON;
    if x == 0.0 {
        return 0.5;
    }
    if x == f64::INFINITY {
        return s_max;
    }
    if x == f64::NEG_INFINITY {
        return s_min;
    }
    // Initializers from the one-sided asymptotics of g.
    let qa = normal_quantile_raw(alpha);
    let init = if x > 0.0 {
        (1.0 - normal_cdf(qa - x) / alpha).clamp(0.5, s_max)
    } else {
        (normal_cdf(qa + x) / alpha).clamp(s_min, 0.5)
    };
    let mut lo = s_min;
    let mut hi = s_max;
    let mut s = init;
    let tol = 1e-12 * x.abs().max(1.0);
    for _ in 0..80 {
        let f = g(s, alpha) - x;
        if f.abs() <= tol {
            break;
        }
        if f > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let d = g_derivative(s, alpha);
        let mut sn = s - f / d;
        if !(sn > lo && sn < hi) || !sn.is_finite() {
            sn = 0.5 * (lo + hi);
        }
        if (sn - s).abs() <= f64::EPSILON * s {
            s = sn;
            break;
        }
        s = sn;
    }
    s.clamp(s_min, s_max)
}

/// Evaluate the spending function of `spec` at a parameter value.
///
/// Nondecreasing in `beta`, equal to 1/2 at μ. When τ̃² (relative to
/// (wσ̃)²) is below [`STEP_TAU2_FACTOR`] this is the step function that is
/// 0 below μ, 1 above it and 1/2 at μ itself.
pub fn spending(spec: &SpendingSpec, beta: f64) -> f64 {
    if spec.is_step() {
        if beta > spec.mu {
            1.0
        } else if beta < spec.mu {
            0.0
        } else {
            0.5
        }
    } else {
        g_inverse(
            2.0 * spec.w * spec.sigma * (beta - spec.mu) / spec.tau2,
            spec.alpha,
        )
    }
}

/// The classical symmetric t-interval β̂ + wσ̂·t_{α/2} .. β̂ + wσ̂·t_{1−α/2}.
pub fn umau_interval(
    beta_hat: f64,
    w: f64,
    sigma_hat: f64,
    df: Df,
    alpha: f64,
) -> Result<IntervalResult> {
    if alpha.is_nan() || alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::Domain(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if w.is_nan() || w <= 0.0 || sigma_hat.is_nan() || sigma_hat < 0.0 || !beta_hat.is_finite() {
        return Err(Error::Domain("invalid umau inputs".into()));
    }
    let half = w * sigma_hat * t_quantile_raw(1.0 - 0.5 * alpha, df);
    Ok(IntervalResult::new(
        beta_hat - half,
        beta_hat + half,
        IntervalMethod::Umau,
        0,
        0.0,
    ))
}

// The distribution kernel used by the endpoint solver: Student-t for the
// adaptive interval, standard normal for the known-variance oracle.
#[derive(Clone, Copy)]
enum Kernel {
    T(Df),
    Z,
}

impl Kernel {
    #[inline]
    fn cdf(&self, u: f64) -> f64 {
        match self {
            Kernel::T(df) => t_cdf(u, *df),
            Kernel::Z => normal_cdf(u),
        }
    }

    // Lower-tail log CDF, stable where the linear CDF underflows.
    #[inline]
    fn ln_cdf(&self, u: f64) -> f64 {
        match self {
            Kernel::T(df) => ln_t_cdf(u, *df),
            Kernel::Z => ln_normal_cdf(u),
        }
    }

    fn quantile(&self, p: f64) -> f64 {
        match self {
            Kernel::T(df) => t_quantile_raw(p, *df),
            Kernel::Z => normal_quantile_raw(p),
        }
    }
}

// Log of the error mass α(1−s(θ)) allocated below θ, and of αs(θ) above it.
// When the spending function saturates in f64, the identity behind g
// provides the log directly: from Φ⁻¹(αs) − Φ⁻¹(α(1−s)) = x,
//   α(1−s) = Φ(Φ⁻¹(αs) − x)  →  ln α(1−s) ≈ ln Φ(Φ⁻¹(α) − x) for s ≈ 1,
// and symmetrically for αs when s ≈ 0.
fn ln_alpha_lower_mass(spec: &SpendingSpec, theta: f64) -> f64 {
    let s = spending(spec, theta);
    if s < 1.0 - 1e-9 {
        (spec.alpha * (1.0 - s)).ln()
    } else {
        let x = 2.0 * spec.w * spec.sigma * (theta - spec.mu) / spec.tau2;
        ln_normal_cdf(normal_quantile_raw(spec.alpha) - x)
    }
}

fn ln_alpha_upper_mass(spec: &SpendingSpec, theta: f64) -> f64 {
    let s = spending(spec, theta);
    if s > 1e-9 {
        (spec.alpha * s).ln()
    } else {
        let x = 2.0 * spec.w * spec.sigma * (theta - spec.mu) / spec.tau2;
        ln_normal_cdf(normal_quantile_raw(spec.alpha) + x)
    }
}

/// Adaptive FAB t-interval for a coefficient.
///
/// The spending parameters in `spec` must be statistically independent of
/// `(beta_hat, sigma_hat)`; that independence is the caller's contract and
/// is what makes the exact coverage survive adaptation.
pub fn fab_interval_t(
    beta_hat: f64,
    sigma_hat: f64,
    df: Df,
    spec: &SpendingSpec,
    tol: f64,
) -> Result<IntervalResult> {
    spec.validate()?;
    if !beta_hat.is_finite() || sigma_hat.is_nan() || sigma_hat <= 0.0 {
        return Err(Error::Domain(
            "fab_interval_t requires finite beta_hat and positive sigma_hat".into(),
        ));
    }
    solve_interval(beta_hat, spec.w * sigma_hat, Kernel::T(df), spec, tol)
        .map(|r| IntervalResult { method: IntervalMethod::FabT, ..r })
}

/// Oracle FAB interval with known error scale: normal quantiles, and
/// `spec.sigma` playing both the spending and the scaling role.
pub fn fab_interval_z(beta_hat: f64, spec: &SpendingSpec, tol: f64) -> Result<IntervalResult> {
    spec.validate()?;
    if !beta_hat.is_finite() {
        return Err(Error::Domain("fab_interval_z requires finite beta_hat".into()));
    }
    solve_interval(beta_hat, spec.w * spec.sigma, Kernel::Z, spec, tol)
        .map(|r| IntervalResult { method: IntervalMethod::FabZOracle, ..r })
}

fn solve_interval(
    beta_hat: f64,
    scale: f64,
    kernel: Kernel,
    spec: &SpendingSpec,
    tol: f64,
) -> Result<IntervalResult> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let alpha = spec.alpha;
    if spec.is_step() {
        // Closed-form solution of the endpoint equations on each side of μ.
        let lo_cand = beta_hat + scale * kernel.quantile(alpha);
        let hi_cand = beta_hat + scale * kernel.quantile(1.0 - alpha);
        let lower = if lo_cand < spec.mu { lo_cand } else { spec.mu };
        let upper = if hi_cand > spec.mu { hi_cand } else { spec.mu };
        return Ok(IntervalResult::new(lower, upper, IntervalMethod::FabT, 0, 0.0));
    }

    // Envelope bounds on the endpoints (the interval-width lemma): the lower
    // endpoint lies in [min(μ, β̂ + wσ̂·t_{α/2}), β̂ + wσ̂·t_α], the upper in
    // [β̂ + wσ̂·t_{1−α}, max(μ, β̂ + wσ̂·t_{1−α/2})].
    //
    // The residual is solved in log space: deep in the tails both sides of
    // the endpoint equation underflow below any linear tolerance over a wide
    // span of θ, while their logs stay strictly monotone and keep locating
    // the root to full precision.
    let t_a = kernel.quantile(alpha);
    let t_a2 = kernel.quantile(0.5 * alpha);

    let h_lower =
        |theta: f64| kernel.ln_cdf((theta - beta_hat) / scale) - ln_alpha_lower_mass(spec, theta);
    let lo_hi = beta_hat + scale * t_a;
    let lo_lo = (spec.mu.min(beta_hat + scale * t_a2)) - scale;
    let (lower, it_lo) =
        solve_increasing(&h_lower, lo_lo, lo_hi, scale, tol).map_err(|e| annotate(e, "lower"))?;
    let res_lo = (kernel.cdf((lower - beta_hat) / scale)
        - alpha * (1.0 - spending(spec, lower)))
    .abs();

    let h_upper_neg =
        |theta: f64| ln_alpha_upper_mass(spec, theta) - kernel.ln_cdf((beta_hat - theta) / scale);
    let up_lo = beta_hat - scale * t_a;
    let up_hi = (spec.mu.max(beta_hat - scale * t_a2)) + scale;
    let (upper, it_up) = solve_increasing(&h_upper_neg, up_lo, up_hi, scale, tol)
        .map_err(|e| annotate(e, "upper"))?;
    let res_up =
        (kernel.cdf((beta_hat - upper) / scale) - alpha * spending(spec, upper)).abs();

    let residual = res_lo.max(res_up);
    if residual > tol {
        return Err(Error::Numerical(format!(
            "endpoint residual {residual:.2e} above tolerance {tol:.2e}"
        )));
    }
    let lower = lower.min(upper);
    Ok(IntervalResult::new(
        lower,
        upper,
        IntervalMethod::FabT,
        it_lo + it_up,
        residual,
    ))
}

fn annotate(e: Error, which: &str) -> Error {
    match e {
        Error::SolverFailure { .. } => Error::Numerical(format!("{which} endpoint: {e}")),
        other => other,
    }
}

// Bracket-secured false position (Illinois) for a nondecreasing log-space
// residual. `lo` must start below the root; `hi` at or above it. Expands
// geometrically if a guard bound does not yet bracket. Converging on the
// log residual bounds the linear residual by the same tolerance, since the
// error masses involved never exceed 1/2.
fn solve_increasing(
    f: &dyn Fn(f64) -> f64,
    lo0: f64,
    hi0: f64,
    scale: f64,
    tol: f64,
) -> Result<(f64, usize)> {
    let mut iters = 0usize;
    let mut hi = hi0;
    let mut f_hi = f(hi);
    iters += 1;
    if f_hi.abs() <= tol {
        return Ok((hi, iters));
    }
    let mut lo = lo0.min(hi - f64::EPSILON * scale);
    let mut f_lo = f(lo);
    iters += 1;
    if f_lo.abs() <= tol {
        return Ok((lo, iters));
    }
    // The envelope bounds make sign changes here a certainty in exact
    // arithmetic; geometric expansion covers rounding at the guard points.
    let mut step = scale.max(f64::MIN_POSITIVE);
    while f_lo > 0.0 {
        if iters > 80 {
            return Err(Error::SolverFailure { iterations: iters, lo, hi, f_lo, f_hi });
        }
        hi = lo;
        f_hi = f_lo;
        step *= 2.0;
        lo -= step;
        f_lo = f(lo);
        iters += 1;
    }
    let mut step = scale.max(f64::MIN_POSITIVE);
    while f_hi < 0.0 {
        if iters > 80 {
            return Err(Error::SolverFailure { iterations: iters, lo, hi, f_lo, f_hi });
        }
        lo = hi;
        f_lo = f_hi;
        step *= 2.0;
        hi += step;
        f_hi = f(hi);
        iters += 1;
    }
    if f_lo.abs() <= tol {
        return Ok((lo, iters));
    }
    if f_hi.abs() <= tol {
        return Ok((hi, iters));
    }
    debug_assert!(f_lo < 0.0 && f_hi > 0.0);

    // Illinois false position.
    let mut side = 0i8;
    while iters < MAX_SOLVER_ITER {
        let denom = f_hi - f_lo;
        let mut x = if denom.abs() > 0.0 {
            (lo * f_hi - hi * f_lo) / denom
        } else {
            0.5 * (lo + hi)
        };
        if !(x > lo && x < hi) || !x.is_finite() {
            x = 0.5 * (lo + hi);
        }
        let fx = f(x);
        iters += 1;
        if fx.abs() <= tol {
            return Ok((x, iters));
        }
        if fx > 0.0 {
            hi = x;
            f_hi = fx;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            lo = x;
            f_lo = fx;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
        if hi - lo <= 4.0 * f64::EPSILON * (lo.abs().max(hi.abs()) + f64::MIN_POSITIVE) {
            // Bracket at machine resolution: report the better endpoint.
            let x = if f_hi.abs() < f_lo.abs() { hi } else { lo };
            return Ok((x, iters));
        }
    }
    Err(Error::SolverFailure {
        iterations: iters,
        lo,
        hi,
        f_lo,
        f_hi,
    })
}

/// Membership test of the confidence region for an arbitrary spending
/// function: true iff β̂ + wσ̂·t_{α(1−s(θ))} < θ < β̂ + wσ̂·t_{1−αs(θ)}.
///
/// Evaluated in CDF form — α(1−s(θ)) < F((θ−β̂)/(wσ̂)) < 1 − αs(θ) — which
/// is equivalent by strict monotonicity of F and avoids infinite quantiles
/// when s(θ) hits 0 or 1.
pub fn region_membership(
    theta: f64,
    beta_hat: f64,
    w: f64,
    sigma_hat: f64,
    df: Df,
    s: impl Fn(f64) -> f64,
    alpha: f64,
) -> bool {
    let sv = s(theta).clamp(0.0, 1.0);
    let fu = t_cdf((theta - beta_hat) / (w * sigma_hat), df);
    alpha * (1.0 - sv) < fu && fu < 1.0 - alpha * sv
}
