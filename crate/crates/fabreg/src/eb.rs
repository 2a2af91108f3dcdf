//! Empirical Bayes estimation of the prior parameters (μ, τ², σ²) from the
//! adaptation coordinates z₂.
//!
//! Under a normal prior for the coefficients, z₂ follows
//! N(X₂1·μ, X₂X₂ᵀτ² + σ²I). Rotating into the eigenbasis of X₂X₂ᵀ turns
//! the covariance diagonal — independent scalars with variances λᵢτ² + σ² —
//! which makes both the unbiased moment equations and the marginal
//! likelihood cheap to evaluate. Estimation never touches y₀ or y₁, so the
//! results stay independent of (β̂_j, σ̂²) no matter how nonlinear the
//! estimator is.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;
use crate::ols::CoefficientContext;

/// Convergence threshold on the scale-adjusted projected gradient of the
/// negative log-likelihood (gradient components multiplied by the
/// characteristic size of their parameter, making the criterion
/// dimensionless).
pub const MLE_GRADIENT_TOL: f64 = 1e-10;

// A stall (no f64-representable descent) is accepted as convergence up to
// this looser scaled-gradient level.
const MLE_STALL_TOL: f64 = 1e-6;
const MLE_STEP_TOL: f64 = 1e-12;
const MLE_MAX_ITER: usize = 300;
const GRID_SIDE: usize = 16;

/// The diagonalized marginal model for one coefficient's adaptation data.
#[derive(Debug, Clone)]
pub struct MarginalModel {
    /// Original projection coordinates z₂ = G₂ᵀy.
    pub z2: DVector<f64>,
    /// Eigenvalues of X₂X₂ᵀ, sorted descending, all nonnegative.
    pub spectrum: DVector<f64>,
    /// Uᵀz₂: coordinates of z₂ in the eigenbasis.
    pub rotated: DVector<f64>,
    /// UᵀX₂1, present for the nonzero-prior-mean variant.
    pub mean_design: Option<DVector<f64>>,
}

impl MarginalModel {
    /// Apply the eigen-reduction to a coefficient context.
    pub fn from_context(ctx: &CoefficientContext, with_mean: bool) -> Result<Self> {
        if ctx.z2.is_empty() {
            return Err(Error::EmptyContext {
                coefficient: ctx.name.clone(),
            });
        }
        let gram = &ctx.x2 * ctx.x2.transpose();
        let gram_norm = gram.amax();
        let (spectrum, u) = symmetric_eigen_desc(gram.clone());
        let recon = &u * DMatrix::from_diagonal(&spectrum) * u.transpose();
        if (recon - gram).amax() > 1e-8 * gram_norm.max(1.0) {
            return Err(Error::Numerical("eigendecomposition reconstruction failed".into()));
        }
        let rotated = u.transpose() * &ctx.z2;
        if (rotated.norm() - ctx.z2.norm()).abs() > 1e-8 * ctx.z2.norm().max(1.0) {
            return Err(Error::Numerical("rotation is not orthogonal".into()));
        }
        let mean_design = if with_mean {
            let ones = DVector::from_element(ctx.x2.ncols(), 1.0);
            Some(u.transpose() * (&ctx.x2 * ones))
        } else {
            None
        };
        Ok(MarginalModel {
            z2: ctx.z2.clone(),
            spectrum: spectrum.map(|l| l.max(0.0)),
            rotated,
            mean_design,
        })
    }

    /// Construct a diagonal model directly from a spectrum and observations
    /// already expressed in the eigenbasis (used by simulation studies of
    /// the estimators themselves).
    pub fn from_diagonal(
        spectrum: Vec<f64>,
        rotated: Vec<f64>,
        mean_design: Option<Vec<f64>>,
    ) -> Result<Self> {
        if spectrum.len() != rotated.len() || spectrum.is_empty() {
            return Err(Error::InvalidData(
                "spectrum and observations must have equal, nonzero length".into(),
            ));
        }
        if spectrum.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidData("spectrum entries must be finite and >= 0".into()));
        }
        if let Some(h) = &mean_design {
            if h.len() != spectrum.len() {
                return Err(Error::InvalidData("mean design length mismatch".into()));
            }
        }
        let mut order: Vec<usize> = (0..spectrum.len()).collect();
        order.sort_by(|&a, &b| spectrum[b].partial_cmp(&spectrum[a]).expect("finite"));
        let spectrum_sorted = DVector::from_fn(order.len(), |i, _| spectrum[order[i]]);
        let rotated_sorted = DVector::from_fn(order.len(), |i, _| rotated[order[i]]);
        let mean_sorted = mean_design.map(|h| DVector::from_fn(order.len(), |i, _| h[order[i]]));
        Ok(MarginalModel {
            z2: rotated_sorted.clone(),
            spectrum: spectrum_sorted,
            rotated: rotated_sorted,
            mean_design: mean_sorted,
        })
    }

    pub fn len(&self) -> usize {
        self.rotated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotated.is_empty()
    }

    /// Mean square of the rotated coordinates; the scale reference for the
    /// default parameter box.
    pub fn mean_square(&self) -> f64 {
        self.rotated.iter().map(|v| v * v).sum::<f64>() / self.len() as f64
    }

    /// Negative log-likelihood (up to constants), averaged over
    /// coordinates: Qₙ(τ², σ²) = (1/m) Σ [zᵢ²/(λᵢτ²+σ²) + ln(λᵢτ²+σ²)],
    /// with the fitted mean removed first in the with-mean variant.
    pub fn nll(&self, tau2: f64, sigma2: f64) -> f64 {
        match &self.mean_design {
            None => self.nll_centered(tau2, sigma2, None),
            Some(_) => {
                let mu = self.profile_mu(tau2, sigma2);
                self.nll_centered(tau2, sigma2, Some(mu))
            }
        }
    }

    fn nll_centered(&self, tau2: f64, sigma2: f64, mu: Option<f64>) -> f64 {
        let m = self.len() as f64;
        let mut acc = 0.0;
        for i in 0..self.len() {
            let d = self.spectrum[i] * tau2 + sigma2;
            let e = match (mu, &self.mean_design) {
                (Some(mu), Some(h)) => self.rotated[i] - mu * h[i],
                _ => self.rotated[i],
            };
            acc += e * e / d + d.ln();
        }
        acc / m
    }

    // Weighted-least-squares profile of μ at fixed (τ², σ²).
    fn profile_mu(&self, tau2: f64, sigma2: f64) -> f64 {
        let h = self.mean_design.as_ref().expect("mean design present");
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.len() {
            let d = self.spectrum[i] * tau2 + sigma2;
            num += h[i] * self.rotated[i] / d;
            den += h[i] * h[i] / d;
        }
        if den > 0.0 {
            num / den
        } else {
            0.0
        }
    }

    // Gradient of the (profiled) NLL in (τ², σ²). For the with-mean variant
    // the envelope theorem lets us hold μ̂ fixed.
    fn nll_gradient(&self, tau2: f64, sigma2: f64) -> (f64, f64) {
        let m = self.len() as f64;
        let mu = self.mean_design.as_ref().map(|_| self.profile_mu(tau2, sigma2));
        let mut gt = 0.0;
        let mut gs = 0.0;
        for i in 0..self.len() {
            let d = self.spectrum[i] * tau2 + sigma2;
            let e = match (mu, &self.mean_design) {
                (Some(mu), Some(h)) => self.rotated[i] - mu * h[i],
                _ => self.rotated[i],
            };
            let common = (d - e * e) / (d * d);
            gt += self.spectrum[i] * common;
            gs += common;
        }
        (gt / m, gs / m)
    }

    // Hessian of the zero-mean NLL; used as a curvature model for the
    // profiled variant as well (the profile term only softens it).
    fn nll_hessian(&self, tau2: f64, sigma2: f64) -> (f64, f64, f64) {
        let m = self.len() as f64;
        let mu = self.mean_design.as_ref().map(|_| self.profile_mu(tau2, sigma2));
        let mut h11 = 0.0;
        let mut h12 = 0.0;
        let mut h22 = 0.0;
        for i in 0..self.len() {
            let l = self.spectrum[i];
            let d = l * tau2 + sigma2;
            let e = match (mu, &self.mean_design) {
                (Some(mu), Some(h)) => self.rotated[i] - mu * h[i],
                _ => self.rotated[i],
            };
            let common = (2.0 * e * e - d) / (d * d * d);
            h11 += l * l * common;
            h12 += l * common;
            h22 += common;
        }
        (h11 / m, h12 / m, h22 / m)
    }
}

/// Compact parameter box Θ = [0, τ²_max] × [σ²_min, σ²_max] over which the
/// likelihood is maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBox {
    pub tau2_max: f64,
    pub sigma2_min: f64,
    pub sigma2_max: f64,
}

impl ParamBox {
    pub fn new(tau2_max: f64, sigma2_min: f64, sigma2_max: f64) -> Result<Self> {
        if !(tau2_max > 0.0 && sigma2_min > 0.0 && sigma2_max > sigma2_min) {
            return Err(Error::Domain(format!(
                "invalid parameter box [0, {tau2_max}] x [{sigma2_min}, {sigma2_max}]"
            )));
        }
        Ok(ParamBox { tau2_max, sigma2_min, sigma2_max })
    }

    /// Data-scaled default: wide multiples of the mean square of z₂ on both
    /// axes, so the box is invariant under rescaling the data.
    pub fn default_for(mm: &MarginalModel) -> Self {
        let v = mm.mean_square().max(1e-300);
        ParamBox {
            tau2_max: 1e6 * v,
            sigma2_min: 1e-8 * v,
            sigma2_max: 1e6 * v,
        }
    }

    fn clamp_tau2(&self, t: f64) -> f64 {
        t.clamp(0.0, self.tau2_max)
    }

    fn clamp_sigma2(&self, s: f64) -> f64 {
        s.clamp(self.sigma2_min, self.sigma2_max)
    }

    fn contains(&self, tau2: f64, sigma2: f64) -> bool {
        (0.0..=self.tau2_max).contains(&tau2)
            && (self.sigma2_min..=self.sigma2_max).contains(&sigma2)
    }
}

/// How a prior estimate was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    Moment,
    Mle,
}

/// Qualifications attached to an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateFlag {
    /// A negative or out-of-box solution was clamped to the box boundary.
    ClampedTau2,
    ClampedSigma2,
    /// The spectrum carries no information about τ² (all eigenvalues zero);
    /// τ̃² is reported at the box edge.
    Tau2Unidentified,
    /// The mean design is numerically zero; μ̃ = 0 and the zero-mean
    /// estimator was used.
    MeanUnidentified,
    /// The likelihood was flat along the (τ², σ²) trade-off; the reported
    /// point is the smallest-σ² member of the equivalence ridge.
    RidgeCanonicalized,
}

/// A prior estimate (μ̃, τ̃², σ̃²) together with how it was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEstimate {
    pub mu: f64,
    pub tau2: f64,
    pub sigma2: f64,
    pub method: EstimateMethod,
    /// Final averaged negative log-likelihood for MLE estimates.
    pub objective: Option<f64>,
    pub box_used: ParamBox,
    pub flags: Vec<EstimateFlag>,
}

/// Unbiased moment estimation of (τ², σ²).
///
/// Uses the two quadratic identities E[z₂ᵀAᵀAz₂] = tr(X₂ᵀAᵀAX₂)τ² +
/// tr(AᵀA)σ² with A₁ = I and A₂ = X₂ᵀ, both of which reduce to spectrum
/// sums: Σzᵢ² = (Σλ)τ² + mσ² and Σλᵢzᵢ² = (Σλ²)τ² + (Σλ)σ². The 2×2 system
/// is singular exactly when the spectrum is degenerate (all λ equal), by
/// Cauchy–Schwarz.
pub fn moment_estimate(mm: &MarginalModel) -> Result<PriorEstimate> {
    let b = ParamBox::default_for(mm);
    moment_estimate_in(mm, &b)
}

/// [`moment_estimate`] with an explicit clamping box.
pub fn moment_estimate_in(mm: &MarginalModel, box_used: &ParamBox) -> Result<PriorEstimate> {
    let m = mm.len() as f64;
    let s1: f64 = mm.spectrum.iter().sum();
    let s2: f64 = mm.spectrum.iter().map(|l| l * l).sum();
    let det = s1 * s1 - m * s2;
    let scale = (s1 * s1 + m * s2).max(f64::MIN_POSITIVE);
    if det.abs() <= 1e-12 * scale {
        return Err(Error::SingularMomentSystem);
    }
    let q0: f64 = mm.rotated.iter().map(|z| z * z).sum();
    let q1: f64 = mm
        .rotated
        .iter()
        .zip(mm.spectrum.iter())
        .map(|(z, l)| l * z * z)
        .sum();
    // [ s1  m  ] [tau2  ]   [q0]
    // [ s2  s1 ] [sigma2] = [q1]
    let tau2 = (s1 * q0 - m * q1) / det;
    let sigma2 = (s1 * q1 - s2 * q0) / det;
    let mut flags = Vec::new();
    let tau2_c = box_used.clamp_tau2(tau2);
    if tau2_c != tau2 {
        flags.push(EstimateFlag::ClampedTau2);
    }
    let sigma2_c = box_used.clamp_sigma2(sigma2);
    if sigma2_c != sigma2 {
        flags.push(EstimateFlag::ClampedSigma2);
    }
    Ok(PriorEstimate {
        mu: 0.0,
        tau2: tau2_c,
        sigma2: sigma2_c,
        method: EstimateMethod::Moment,
        objective: None,
        box_used: *box_used,
        flags,
    })
}

/// Marginal maximum-likelihood estimation of (τ², σ²) over a compact box,
/// with μ fixed at zero.
pub fn mle_estimate(mm: &MarginalModel, box_used: &ParamBox) -> Result<PriorEstimate> {
    mle_impl(mm, box_used, false)
}

/// Marginal MLE of (μ, τ², σ²): for each (τ², σ²) the mean is profiled out
/// in closed form, and the outer 2-D search is identical to [`mle_estimate`].
pub fn mle_estimate_with_mean(mm: &MarginalModel, box_used: &ParamBox) -> Result<PriorEstimate> {
    if mm.mean_design.is_none() {
        return Err(Error::InvalidConfig(
            "mle_estimate_with_mean requires a marginal model built with a mean design".into(),
        ));
    }
    mle_impl(mm, box_used, true)
}

fn mle_impl(mm: &MarginalModel, box_used: &ParamBox, with_mean: bool) -> Result<PriorEstimate> {
    if mm.is_empty() {
        return Err(Error::InvalidData("empty marginal model".into()));
    }
    let mut flags = Vec::new();

    // Degenerate mean design: fall back to the zero-mean likelihood.
    let mm_eff: MarginalModel;
    let mm_ref = if with_mean {
        let h = mm.mean_design.as_ref().unwrap();
        let hscale = h.amax();
        let zscale = mm.rotated.amax().max(1.0);
        if hscale <= 1e-12 * zscale {
            flags.push(EstimateFlag::MeanUnidentified);
            mm_eff = MarginalModel {
                z2: mm.z2.clone(),
                spectrum: mm.spectrum.clone(),
                rotated: mm.rotated.clone(),
                mean_design: None,
            };
            &mm_eff
        } else {
            mm
        }
    } else {
        mm_eff = MarginalModel {
            z2: mm.z2.clone(),
            spectrum: mm.spectrum.clone(),
            rotated: mm.rotated.clone(),
            mean_design: None,
        };
        &mm_eff
    };

    // Flat-in-τ² likelihood when the spectrum carries no signal.
    let lmax = mm_ref.spectrum.iter().cloned().fold(0.0f64, f64::max);
    if lmax <= 0.0 {
        let sigma2 = box_used.clamp_sigma2(mm_ref.mean_square());
        flags.push(EstimateFlag::Tau2Unidentified);
        if sigma2 != mm_ref.mean_square() {
            flags.push(EstimateFlag::ClampedSigma2);
        }
        let obj = mm_ref.nll(0.0, sigma2);
        return Ok(PriorEstimate {
            mu: 0.0,
            tau2: 0.0,
            sigma2,
            method: EstimateMethod::Mle,
            objective: Some(obj),
            box_used: *box_used,
            flags,
        });
    }

    let (theta, objective, _trace) = minimize_nll(mm_ref, box_used)?;
    let (theta, objective, moved) = canonicalize_ridge(mm_ref, box_used, theta, objective);
    if moved {
        flags.push(EstimateFlag::RidgeCanonicalized);
    }
    let (tau2, sigma2) = theta;
    if tau2 == 0.0 || tau2 == box_used.tau2_max {
        flags.push(EstimateFlag::ClampedTau2);
    }
    if sigma2 == box_used.sigma2_min || sigma2 == box_used.sigma2_max {
        flags.push(EstimateFlag::ClampedSigma2);
    }
    let mu = if mm_ref.mean_design.is_some() {
        mm_ref.profile_mu(tau2, sigma2)
    } else {
        0.0
    };
    Ok(PriorEstimate {
        mu,
        tau2,
        sigma2,
        method: EstimateMethod::Mle,
        objective: Some(objective),
        box_used: *box_used,
        flags,
    })
}

// Coarse log-spaced grid seed followed by projected modified-Newton descent
// with a monotone backtracking line search. Returns the minimizer, its
// objective and the accepted-objective trace.
//
// The search runs in normalized coordinates u = τ²·λ_max/v̄, w = σ²/v̄
// (v̄ the mean square of the data), where gradients are dimensionless and a
// single tolerance is meaningful across arbitrarily scaled inputs. The
// likelihood can be a long curved valley when the spectrum is nearly
// degenerate, so the Newton model clamps the Hessian eigenvalues away from
// zero rather than falling back to raw gradient steps.
pub(crate) fn minimize_nll(
    mm: &MarginalModel,
    b: &ParamBox,
) -> Result<((f64, f64), f64, Vec<f64>)> {
    let v_scale = mm.mean_square().max(1e-300);
    let lmax = mm.spectrum.iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let s_t = v_scale / lmax;
    let s_s = v_scale;
    let u_max = b.tau2_max / s_t;
    let w_min = b.sigma2_min / s_s;
    let w_max = b.sigma2_max / s_s;

    let value = |u: f64, w: f64| mm.nll(u * s_t, w * s_s);
    let grad = |u: f64, w: f64| {
        let g = mm.nll_gradient(u * s_t, w * s_s);
        (g.0 * s_t, g.1 * s_s)
    };

    let mut seeds_u = Vec::with_capacity(GRID_SIDE);
    seeds_u.push(0.0);
    let lo_u = u_max * 1e-10;
    for k in 0..(GRID_SIDE - 1) {
        let f = k as f64 / (GRID_SIDE - 2) as f64;
        seeds_u.push(lo_u * (u_max / lo_u).powf(f));
    }
    let mut seeds_w = Vec::with_capacity(GRID_SIDE);
    for k in 0..GRID_SIDE {
        let f = k as f64 / (GRID_SIDE - 1) as f64;
        seeds_w.push(w_min * (w_max / w_min).powf(f));
    }
    let mut best = (0.0, seeds_w[0]);
    let mut best_val = f64::INFINITY;
    let mut seed_trace = Vec::with_capacity(GRID_SIDE * GRID_SIDE);
    for &u in &seeds_u {
        for &w in &seeds_w {
            let v = value(u, w);
            seed_trace.push(v);
            if v < best_val {
                best_val = v;
                best = (u, w);
            }
        }
    }
    if !best_val.is_finite() {
        return Err(Error::OptimizerFailure {
            detail: "no finite objective on the seed grid".into(),
            seed_trace,
        });
    }

    let project = |u: f64, w: f64| (u.clamp(0.0, u_max), w.clamp(w_min, w_max));
    let projected_grad = |p: (f64, f64), g: (f64, f64)| {
        let mut gu = g.0;
        let mut gw = g.1;
        if (p.0 <= 0.0 && gu > 0.0) || (p.0 >= u_max && gu < 0.0) {
            gu = 0.0;
        }
        if (p.1 <= w_min && gw > 0.0) || (p.1 >= w_max && gw < 0.0) {
            gw = 0.0;
        }
        (gu, gw)
    };

    let mut point = best;
    let mut val = best_val;
    let mut trace = vec![val];
    let mut converged = false;
    for _ in 0..MLE_MAX_ITER {
        // Snap coordinates sitting within rounding distance of a bound onto
        // it (when the objective allows), so boundary gradients project out
        // instead of the iteration crawling toward the bound forever.
        let snap_band = 4.0 * f64::EPSILON * (1.0 + val.abs());
        let mut snapped = point;
        if snapped.0 > 0.0 && snapped.0 <= 1e-9 {
            snapped.0 = 0.0;
        }
        if snapped.0 < u_max && u_max - snapped.0 <= 1e-9 * u_max {
            snapped.0 = u_max;
        }
        if snapped.1 > w_min && snapped.1 - w_min <= 1e-9 * w_min.max(1e-300) {
            snapped.1 = w_min;
        }
        if snapped.1 < w_max && w_max - snapped.1 <= 1e-9 * w_max {
            snapped.1 = w_max;
        }
        if snapped != point {
            let sval = value(snapped.0, snapped.1);
            if sval <= val + snap_band {
                point = snapped;
                val = sval.min(val);
            }
        }
        let g = grad(point.0, point.1);
        let (pgu, pgw) = projected_grad(point, g);
        let pg = pgu.hypot(pgw);
        if pg <= MLE_GRADIENT_TOL {
            converged = true;
            break;
        }
        let (h11, h12, h22) = {
            let h = mm.nll_hessian(point.0 * s_t, point.1 * s_s);
            (h.0 * s_t * s_t, h.1 * s_t * s_s, h.2 * s_s * s_s)
        };
        // Confine the step to the free subspace: a pinned coordinate must
        // not be re-entered through Hessian mixing while its own gradient
        // still points outward.
        let u_pinned = pgu == 0.0 && g.0 != 0.0;
        let w_pinned = pgw == 0.0 && g.1 != 0.0;
        let dir = match (u_pinned, w_pinned) {
            (false, false) => clamped_newton_step(h11, h12, h22, pgu, pgw),
            (true, false) => {
                let c = h22.abs().max(1e-300);
                (0.0, -pgw / c)
            }
            (false, true) => {
                let c = h11.abs().max(1e-300);
                (-pgu / c, 0.0)
            }
            (true, true) => (0.0, 0.0),
        };
        let mut progressed = false;
        let mut step = 1.0;
        for _ in 0..70 {
            let cand = project(point.0 + step * dir.0, point.1 + step * dir.1);
            if cand == point {
                break;
            }
            let cand_val = value(cand.0, cand.1);
            if cand_val < val {
                let moved =
                    (cand.0 - point.0).abs() + (cand.1 - point.1).abs();
                point = cand;
                val = cand_val;
                trace.push(val);
                progressed = true;
                if moved <= MLE_STEP_TOL * (1.0 + point.0.abs() + point.1.abs()) {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if converged {
            break;
        }
        if !progressed {
            // No f64-representable descent left; accept the point if the
            // projected gradient is at rounding level, otherwise report.
            if pg <= MLE_STALL_TOL {
                converged = true;
                break;
            }
            return Err(Error::OptimizerFailure {
                detail: format!(
                    "line search stalled at ({}, {}) with normalized pg {pg:.2e}",
                    point.0 * s_t,
                    point.1 * s_s
                ),
                seed_trace,
            });
        }
    }
    if !converged {
        let g = grad(point.0, point.1);
        let (pgu, pgw) = projected_grad(point, g);
        let pg = pgu.hypot(pgw);
        if pg > MLE_STALL_TOL {
            return Err(Error::OptimizerFailure {
                detail: format!(
                    "no convergence after {MLE_MAX_ITER} iterations, normalized pg {pg:.2e}"
                ),
                seed_trace,
            });
        }
    }
    let theta = (point.0 * s_t, point.1 * s_s);
    debug_assert!(b.contains(theta.0, theta.1));
    Ok((theta, val, trace))
}

// When λᵢτ² dominates every coordinate's variance, the likelihood is flat
// along a ridge trading σ² against τ²: the fitted variances are pinned but
// their split is not, and ridge points with inflated σ̃² parameterize far
// more aggressive spending functions (the spending argument is 2wσ̃β/τ̃²).
// Canonicalize to the smallest σ² whose τ²-profiled objective stays within
// a rounding-level band of the optimum — the least aggressive spending the
// data cannot distinguish from the fit. In the identified regime the band
// is too narrow to move the point at all.
fn canonicalize_ridge(
    mm: &MarginalModel,
    b: &ParamBox,
    theta: (f64, f64),
    val: f64,
) -> ((f64, f64), f64, bool) {
    let tol = 1e-7 * (1.0 + val.abs());
    let mut best = theta;
    let mut best_val = val;
    let mut s = theta.1;
    while s > b.sigma2_min {
        s = (0.25 * s).max(b.sigma2_min);
        let t = profile_tau2(mm, s, b);
        let v = mm.nll(t, s);
        if v <= val + tol {
            best = (t, s);
            best_val = v;
        } else {
            break;
        }
    }
    let moved = best.1 != theta.1;
    (best, best_val, moved)
}

// 1-D profile of τ² at fixed σ²: coarse log grid then clamped Newton.
fn profile_tau2(mm: &MarginalModel, sigma2: f64, b: &ParamBox) -> f64 {
    let mut best = 0.0;
    let mut best_val = mm.nll(0.0, sigma2);
    let lo = b.tau2_max * 1e-12;
    for k in 0..24 {
        let t = lo * (b.tau2_max / lo).powf(k as f64 / 23.0);
        let v = mm.nll(t, sigma2);
        if v < best_val {
            best_val = v;
            best = t;
        }
    }
    let mut t = best;
    for _ in 0..40 {
        let (gt, _) = mm.nll_gradient(t, sigma2);
        let pinned = (t <= 0.0 && gt > 0.0) || (t >= b.tau2_max && gt < 0.0);
        if pinned {
            break;
        }
        let (h11, _, _) = mm.nll_hessian(t, sigma2);
        let denom = h11.abs().max(1e-300);
        let mut step = 1.0;
        let mut progressed = false;
        for _ in 0..50 {
            let cand = (t - step * gt / denom).clamp(0.0, b.tau2_max);
            if cand == t {
                break;
            }
            let v = mm.nll(cand, sigma2);
            if v < best_val {
                let moved = (cand - t).abs();
                t = cand;
                best_val = v;
                progressed = true;
                if moved <= 1e-14 * (1.0 + t) {
                    return t;
                }
                break;
            }
            step *= 0.5;
        }
        if !progressed {
            break;
        }
    }
    t
}

// Descent direction −H̃⁻¹ g from the 2×2 Hessian with its eigenvalues
// clamped below at a fraction of the dominant curvature, so the step stays
// well-scaled inside long narrow valleys and at indefinite points.
fn clamped_newton_step(h11: f64, h12: f64, h22: f64, g1: f64, g2: f64) -> (f64, f64) {
    let mean = 0.5 * (h11 + h22);
    let r = (0.25 * (h11 - h22) * (h11 - h22) + h12 * h12).sqrt();
    let e1 = mean + r;
    let e2 = mean - r;
    let floor = (e1.abs().max(e2.abs()) * 1e-8).max(1e-300);
    let e1c = e1.max(floor);
    let e2c = e2.max(floor);
    // eigenvector for e1
    let (v1, v2) = if h12.abs() > 1e-300 {
        let t = (e1 - h11) / h12;
        let n = (1.0 + t * t).sqrt();
        (1.0 / n, t / n)
    } else if h11 >= h22 {
        (1.0, 0.0)
    } else {
        (0.0, 1.0)
    };
    // H̃⁻¹ = v vᵀ/e1c + v⊥ v⊥ᵀ/e2c with v⊥ = (−v2, v1)
    let a11 = v1 * v1 / e1c + v2 * v2 / e2c;
    let a12 = v1 * v2 / e1c - v1 * v2 / e2c;
    let a22 = v2 * v2 / e1c + v1 * v1 / e2c;
    (-(a11 * g1 + a12 * g2), -(a12 * g1 + a22 * g2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{sample_normal, stream_rng};

    fn diagonal_sample(seed: u64, m: usize, tau2: f64, sigma2: f64) -> MarginalModel {
        let mut rng = stream_rng(seed, 0);
        let spectrum: Vec<f64> = (0..m)
            .map(|_| 0.5 + 1.5 * rand::Rng::random_range(&mut rng, 0.0..1.0))
            .collect();
        let rotated: Vec<f64> = spectrum
            .iter()
            .map(|l| sample_normal(&mut rng, 0.0, (l * tau2 + sigma2).sqrt()))
            .collect();
        MarginalModel::from_diagonal(spectrum, rotated, None).unwrap()
    }

    #[test]
    fn zero_design_collapses_to_pure_noise_model() {
        let mm = MarginalModel::from_diagonal(vec![0.0; 40], vec![1.0; 40], None).unwrap();
        assert!(mm.spectrum.iter().all(|l| *l == 0.0));
        let b = ParamBox::new(10.0, 1e-6, 10.0).unwrap();
        let est = mle_estimate(&mm, &b).unwrap();
        assert_eq!(est.tau2, 0.0);
        assert!(est.flags.contains(&EstimateFlag::Tau2Unidentified));
        assert!((est.sigma2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthonormal_reduced_design_has_unit_spectrum() {
        use crate::dist::Df;
        use nalgebra::{DMatrix, DVector};
        // X₂ with orthonormal rows: X₂X₂ᵀ = I, so every eigenvalue is 1
        let raw = DMatrix::<f64>::from_fn(10, 4, |i, j| ((i * 5 + j + 1) as f64).sin());
        let x2 = raw.qr().q().transpose(); // 4x10 with orthonormal rows
        let ctx = crate::ols::CoefficientContext {
            j: 0,
            name: "unit".into(),
            beta_hat_j: 0.0,
            w_j: 1.0,
            sigma2_hat: 1.0,
            df: Df::new(6).unwrap(),
            z2: DVector::from_element(4, 0.5),
            spectrum: DVector::zeros(4),
            x2,
        };
        let mm = MarginalModel::from_context(&ctx, false).unwrap();
        for l in mm.spectrum.iter() {
            assert!((l - 1.0).abs() < 1e-12, "eigenvalue {l}");
        }
    }

    #[test]
    fn moment_under_zero_tau_truth_recovers_plain_variance() {
        // τ² = 0 truth with many coordinates: σ̃² tracks mean(z²)
        let mut rng = stream_rng(16, 0);
        let m = 4000;
        let spectrum: Vec<f64> = (0..m)
            .map(|_| 2.0 * rand::Rng::random_range(&mut rng, 0.0..1.0))
            .collect();
        let rotated: Vec<f64> = (0..m).map(|_| sample_normal(&mut rng, 0.0, 2.0f64.sqrt())).collect();
        let mm = MarginalModel::from_diagonal(spectrum, rotated, None).unwrap();
        let est = moment_estimate(&mm).unwrap();
        assert!((est.sigma2 - mm.mean_square()).abs() < 0.15, "{}", est.sigma2);
        assert!(est.tau2 < 0.2, "tau2 = {}", est.tau2);
    }

    #[test]
    fn moment_rejects_degenerate_spectrum() {
        let mm = MarginalModel::from_diagonal(vec![2.0; 30], vec![0.5; 30], None).unwrap();
        match moment_estimate(&mm) {
            Err(Error::SingularMomentSystem) => {}
            other => panic!("expected singular system, got {other:?}"),
        }
    }

    #[test]
    fn mle_flags_the_ridge_on_a_degenerate_spectrum() {
        // all eigenvalues equal: only λτ² + σ² is identified, and the
        // reported point is the canonical (small σ²) end of the ridge
        let mut rng = stream_rng(15, 0);
        let rotated: Vec<f64> = (0..200).map(|_| sample_normal(&mut rng, 0.0, 2.0)).collect();
        let mm = MarginalModel::from_diagonal(vec![2.0; 200], rotated, None).unwrap();
        let b = ParamBox::default_for(&mm);
        let est = mle_estimate(&mm, &b).unwrap();
        assert!(est.flags.contains(&EstimateFlag::RidgeCanonicalized), "{:?}", est.flags);
        assert!(est.sigma2 <= b.sigma2_min * (1.0 + 1e-9));
        // the identified combination is still right: λτ̃² + σ̃² ≈ mean(z²)
        let fitted = 2.0 * est.tau2 + est.sigma2;
        assert!((fitted - mm.mean_square()).abs() < 0.05 * mm.mean_square());
    }

    #[test]
    fn moment_solves_the_exact_system() {
        // Noise-free check: set z_i^2 = λ_i τ² + σ² exactly.
        let spectrum: Vec<f64> = vec![2.0, 1.5, 1.0, 0.5, 0.25];
        let (tau2, sigma2) = (0.7, 1.3);
        let rotated: Vec<f64> = spectrum.iter().map(|l| (l * tau2 + sigma2).sqrt()).collect();
        let mm = MarginalModel::from_diagonal(spectrum, rotated, None).unwrap();
        let est = moment_estimate(&mm).unwrap();
        assert!((est.tau2 - tau2).abs() < 1e-10);
        assert!((est.sigma2 - sigma2).abs() < 1e-10);
        assert!(est.flags.is_empty());
    }

    #[test]
    fn mle_recovers_truth_on_large_diagonal_model() {
        let mm = diagonal_sample(11, 2000, 0.5, 3.0);
        let b = ParamBox::default_for(&mm);
        let est = mle_estimate(&mm, &b).unwrap();
        assert!((est.tau2 - 0.5).abs() / 0.5 < 0.35, "tau2 = {}", est.tau2);
        assert!((est.sigma2 - 3.0).abs() / 3.0 < 0.2, "sigma2 = {}", est.sigma2);
        // minimizer beats the truth on the realized likelihood
        assert!(est.objective.unwrap() <= mm.nll(0.5, 3.0) + 1e-12);
    }

    #[test]
    fn mle_objective_trace_is_monotone() {
        let mm = diagonal_sample(12, 300, 1.0, 2.0);
        let b = ParamBox::default_for(&mm);
        let (_, _, trace) = minimize_nll(&mm, &b).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn with_mean_reduces_to_zero_mean_when_design_vanishes() {
        let mm = MarginalModel::from_diagonal(
            vec![1.0, 2.0, 0.7, 1.1],
            vec![0.4, -0.3, 1.0, 0.2],
            Some(vec![0.0; 4]),
        )
        .unwrap();
        let b = ParamBox::default_for(&mm);
        let with = mle_estimate_with_mean(&mm, &b).unwrap();
        assert_eq!(with.mu, 0.0);
        assert!(with.flags.contains(&EstimateFlag::MeanUnidentified));
        let zero = mle_estimate(&mm, &b).unwrap();
        assert!((with.tau2 - zero.tau2).abs() < 1e-10);
        assert!((with.sigma2 - zero.sigma2).abs() < 1e-10);
    }

    #[test]
    fn with_mean_recovers_nonzero_mu() {
        let mut rng = stream_rng(13, 0);
        let m = 600;
        let (mu, tau2, sigma2) = (0.4, 0.3, 1.0);
        let spectrum: Vec<f64> = (0..m)
            .map(|_| 0.5 + 1.5 * rand::Rng::random_range(&mut rng, 0.0..1.0))
            .collect();
        let h: Vec<f64> = (0..m).map(|_| sample_normal(&mut rng, 0.0, 1.0)).collect();
        let rotated: Vec<f64> = spectrum
            .iter()
            .zip(h.iter())
            .map(|(l, hi)| sample_normal(&mut rng, mu * hi, (l * tau2 + sigma2).sqrt()))
            .collect();
        let mm = MarginalModel::from_diagonal(spectrum, rotated, Some(h)).unwrap();
        let b = ParamBox::default_for(&mm);
        let est = mle_estimate_with_mean(&mm, &b).unwrap();
        assert!((est.mu - mu).abs() < 0.15, "mu = {}", est.mu);
    }

    #[test]
    fn default_box_scales_with_data() {
        let mm = diagonal_sample(14, 50, 1.0, 1.0);
        let b = ParamBox::default_for(&mm);
        let v = mm.mean_square();
        assert!((b.tau2_max - 1e6 * v).abs() < 1e-9 * b.tau2_max);
        assert!(b.sigma2_min < v && v < b.sigma2_max);
    }
}
