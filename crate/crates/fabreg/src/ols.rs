//! Linear-model fitting and the per-coefficient projection decomposition.
//!
//! For coefficient j with OLS direction a (the jth row of (XᵀX)⁻¹Xᵀ), the
//! response splits as y = y₀ + y₁ + y₂ along three mutually orthogonal
//! projections: the residual space (carrying σ̂²), the span of a (carrying
//! β̂_j) and the remainder of the column space of X. The pieces are
//! independent under the model, so statistics computed from y₂ alone can
//! parameterize a spending function without disturbing the coverage of an
//! interval built from (β̂_j, σ̂²).
//!
//! Note the projection onto the column space is X(XᵀX)⁻¹Xᵀ — symmetric and
//! idempotent — computed here from a thin QR factorization.

use nalgebra::{DMatrix, DVector};

use crate::dist::Df;
use crate::error::{Error, Result};
use crate::linalg::{
    householder_complement, max_dev_from_identity, orthonormal_complement, symmetric_eigen_desc,
    upper_triangular_inverse,
};

/// Relative singular-value threshold below which the design is declared
/// rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

const ORTHO_TOL: f64 = 1e-10;

/// A regression dataset: response, design matrix and column labels.
#[derive(Debug, Clone)]
pub struct RegressionData {
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
    standardized: bool,
}

impl RegressionData {
    /// Validates shapes, finiteness, n > p ≥ 1 and full column rank.
    pub fn new(y: Vec<f64>, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if y.len() != n {
            return Err(Error::InvalidData(format!(
                "response has {} rows but the design has {n}",
                y.len()
            )));
        }
        if names.len() != p {
            return Err(Error::InvalidData(format!(
                "{} column names for {p} columns",
                names.len()
            )));
        }
        if p < 1 || n <= p {
            return Err(Error::InvalidData(format!(
                "need n > p >= 1, got n = {n}, p = {p}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry in y or X".into()));
        }
        let data = RegressionData {
            y: DVector::from_vec(y),
            x,
            names,
            standardized: false,
        };
        data.check_rank()?;
        Ok(data)
    }

    fn check_rank(&self) -> Result<()> {
        let sv = self.x.clone().svd(false, false).singular_values;
        let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = sv.iter().cloned().fold(0.0f64, f64::max);
        if min <= RANK_TOLERANCE * max {
            return Err(Error::RankDeficient {
                column: self.dependent_column(),
            });
        }
        Ok(())
    }

    // Best-effort identification of a dependent column: the first column
    // whose residual collapses under Gram-Schmidt against earlier columns.
    fn dependent_column(&self) -> String {
        let p = self.x.ncols();
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for j in 0..p {
            let col = self.x.column(j).into_owned();
            let orig = col.norm();
            let mut r = col;
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&r);
                    r -= b * c;
                }
            }
            let rn = r.norm();
            if orig == 0.0 || rn <= 1e-8 * orig {
                return self.names[j].clone();
            }
            basis.push(r / rn);
        }
        self.names[p - 1].clone()
    }

    /// Center the response and center-and-unit-scale every column.
    ///
    /// Intervals computed from standardized data are on the standardized
    /// scale; the flag is carried into reports. Constant columns cannot be
    /// scaled and produce a rank-deficiency error naming the column.
    pub fn standardize(&self) -> Result<RegressionData> {
        let n = self.x.nrows();
        let p = self.x.ncols();
        let y_mean = self.y.mean();
        let y = self.y.map(|v| v - y_mean);
        let mut x = self.x.clone();
        for j in 0..p {
            let col = x.column(j);
            let mean = col.mean();
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
            if var <= 0.0 {
                return Err(Error::RankDeficient {
                    column: self.names[j].clone(),
                });
            }
            let sd = var.sqrt();
            for i in 0..n {
                x[(i, j)] = (x[(i, j)] - mean) / sd;
            }
        }
        let mut out = RegressionData::new(y.iter().cloned().collect(), x, self.names.clone())?;
        out.standardized = true;
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn is_standardized(&self) -> bool {
        self.standardized
    }

    /// Same design, different response. The replacement must have matching
    /// length and finite entries.
    pub fn with_response(&self, y: Vec<f64>) -> Result<RegressionData> {
        if y.len() != self.n() {
            return Err(Error::InvalidData(format!(
                "replacement response has {} rows, expected {}",
                y.len(),
                self.n()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry in y".into()));
        }
        Ok(RegressionData {
            y: DVector::from_vec(y),
            x: self.x.clone(),
            names: self.names.clone(),
            standardized: self.standardized,
        })
    }
}

/// OLS summary: estimates, residual variance, standard-error multipliers and
/// residual degrees of freedom, plus the factorization reused by the
/// per-coefficient decomposition.
#[derive(Debug, Clone)]
pub struct OlsFit {
    beta_hat: DVector<f64>,
    sigma2_hat: f64,
    w: Vec<f64>,
    df: Df,
    // X = Q R (thin); r_inv = R⁻¹; qty = Qᵀy; qtx = QᵀX.
    q: DMatrix<f64>,
    r_inv: DMatrix<f64>,
    qty: DVector<f64>,
    qtx: DMatrix<f64>,
}

impl OlsFit {
    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.beta_hat
    }

    pub fn sigma2_hat(&self) -> f64 {
        self.sigma2_hat
    }

    /// w_j = sqrt of the jth diagonal entry of (XᵀX)⁻¹.
    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn df(&self) -> Df {
        self.df
    }

    /// The direction a = X(XᵀX)⁻¹e_j whose inner product with y gives β̂_j.
    /// Adding c·a to the response moves β̂_j by c·w_j² while leaving the
    /// adaptation projection P₂y unchanged.
    pub fn coefficient_direction(&self, j: usize) -> DVector<f64> {
        let u = self.r_inv_row(j);
        &self.q * u
    }

    // jth row of R⁻¹ as a column vector; equals Qᵀa and has norm w_j.
    fn r_inv_row(&self, j: usize) -> DVector<f64> {
        DVector::from_fn(self.r_inv.ncols(), |k, _| self.r_inv[(j, k)])
    }
}

/// Fit the normal linear model by a thin QR factorization.
pub fn fit_ols(data: &RegressionData) -> Result<OlsFit> {
    let n = data.n();
    let p = data.p();
    let qr = data.x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let r_inv = upper_triangular_inverse(&r).ok_or_else(|| Error::RankDeficient {
        column: data.dependent_column(),
    })?;
    // Orthonormality of Q carries the per-coefficient contracts below.
    let dev = max_dev_from_identity(&(q.transpose() * &q));
    if dev > ORTHO_TOL {
        return Err(Error::Numerical(format!(
            "QR basis lost orthogonality ({dev:.2e})"
        )));
    }
    let qty = q.transpose() * &data.y;
    let qtx = q.transpose() * &data.x;
    let beta_hat = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Numerical("singular triangular factor".into()))?;
    let resid = &data.y - &data.x * &beta_hat;
    let sigma2_hat = resid.norm_squared() / (n - p) as f64;
    // Normal equations: Xᵀ(y − Xβ̂) = 0 up to rounding.
    let grad = data.x.transpose() * &resid;
    let xty_norm = (data.x.transpose() * &data.y).norm();
    if grad.norm() > 1e-8 * xty_norm.max(1e-12) {
        return Err(Error::Numerical(format!(
            "normal equations violated: |Xᵀr| = {:.3e}",
            grad.norm()
        )));
    }
    let w: Vec<f64> = (0..p)
        .map(|j| {
            (0..p)
                .map(|k| r_inv[(j, k)] * r_inv[(j, k)])
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    if w.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Numerical("non-finite standard-error multiplier".into()));
    }
    Ok(OlsFit {
        beta_hat,
        sigma2_hat,
        w,
        df: Df::new((n - p) as u64).expect("n > p"),
        q,
        r_inv,
        qty,
        qtx,
    })
}

/// Per-coefficient statistics feeding the adaptive interval: the
/// coefficient's own (β̂_j, w_j, σ̂², df) together with the projection
/// coordinates z₂ = G₂ᵀy, the reduced design X₂ = G₂ᵀX and the spectrum of
/// X₂X₂ᵀ. By construction z₂ and X₂ depend on y only through P₂y.
#[derive(Debug, Clone)]
pub struct CoefficientContext {
    pub j: usize,
    pub name: String,
    pub beta_hat_j: f64,
    pub w_j: f64,
    pub sigma2_hat: f64,
    pub df: Df,
    pub z2: DVector<f64>,
    pub x2: DMatrix<f64>,
    pub spectrum: DVector<f64>,
}

// Reusable basis pieces alongside a context: the Householder complement V
// (z₂ = Vᵀ(Qᵀy)) and the eigenvectors of X₂X₂ᵀ matching `spectrum`.
pub(crate) struct ContextBasis {
    pub v: DMatrix<f64>,
    pub eigvecs: DMatrix<f64>,
}

/// Build the context for coefficient `j` (0-based) from a fit.
///
/// G₂ is assembled from the shared QR basis: with u = Qᵀa the Householder
/// complement V of u gives G₂ = QV, orthonormal and orthogonal to a. The
/// construction is validated against [`coefficient_context_direct`] in the
/// test suite to 1e-8.
pub fn coefficient_context(
    data: &RegressionData,
    fit: &OlsFit,
    j: usize,
) -> Result<CoefficientContext> {
    coefficient_context_parts(data, fit, j).map(|(ctx, _)| ctx)
}

pub(crate) fn coefficient_context_parts(
    data: &RegressionData,
    fit: &OlsFit,
    j: usize,
) -> Result<(CoefficientContext, ContextBasis)> {
    let p = data.p();
    if j >= p {
        return Err(Error::Domain(format!(
            "coefficient index {j} out of range for p = {p}"
        )));
    }
    if p == 1 {
        return Err(Error::EmptyContext {
            coefficient: data.names[j].clone(),
        });
    }
    let u = fit.r_inv_row(j);
    let v = householder_complement(&u);
    // Contract checks: VᵀV = I and Vᵀu = 0; Q's orthonormality was checked
    // at fit time, so together these give G₂ᵀG₂ = I and aᵀG₂ = 0.
    let dev = max_dev_from_identity(&(v.transpose() * &v));
    if dev > ORTHO_TOL {
        return Err(Error::Numerical(format!(
            "coefficient basis lost orthogonality ({dev:.2e})"
        )));
    }
    let leak = (v.transpose() * &u).amax();
    if leak > ORTHO_TOL * u.norm() {
        return Err(Error::Numerical(format!(
            "coefficient basis not orthogonal to the estimate direction ({leak:.2e})"
        )));
    }
    let z2 = v.transpose() * &fit.qty;
    let x2 = v.transpose() * &fit.qtx;
    let gram = &x2 * x2.transpose();
    let (mut spectrum, eigvecs) = symmetric_eigen_desc(gram);
    clamp_spectrum(&mut spectrum);
    let ctx = CoefficientContext {
        j,
        name: data.names[j].clone(),
        beta_hat_j: fit.beta_hat[j],
        w_j: fit.w[j],
        sigma2_hat: fit.sigma2_hat,
        df: fit.df,
        z2,
        x2,
        spectrum,
    };
    Ok((ctx, ContextBasis { v, eigvecs }))
}

/// Textbook construction of the same context: form P₂ = P_X(I − P₁)
/// explicitly and orthonormalize its range by an eigendecomposition. O(n³)
/// per coefficient; exists to validate the shared-factorization path.
pub fn coefficient_context_direct(
    data: &RegressionData,
    fit: &OlsFit,
    j: usize,
) -> Result<CoefficientContext> {
    let n = data.n();
    let p = data.p();
    if j >= p {
        return Err(Error::Domain(format!(
            "coefficient index {j} out of range for p = {p}"
        )));
    }
    if p == 1 {
        return Err(Error::EmptyContext {
            coefficient: data.names[j].clone(),
        });
    }
    let a = fit.coefficient_direction(j);
    let px = &fit.q * fit.q.transpose();
    let p1 = &a * a.transpose() / a.norm_squared();
    let p2 = px - &p1;
    let (vals, vecs) = symmetric_eigen_desc(p2);
    // Range of a rank p−1 projection: eigenvectors with eigenvalue ≈ 1.
    let kept: Vec<usize> = (0..n).filter(|&i| vals[i] > 0.5).collect();
    if kept.len() != p - 1 {
        return Err(Error::Numerical(format!(
            "projection rank {} instead of {}",
            kept.len(),
            p - 1
        )));
    }
    let mut g2 = DMatrix::zeros(n, p - 1);
    for (dst, &src) in kept.iter().enumerate() {
        g2.set_column(dst, &vecs.column(src));
    }
    let dev = max_dev_from_identity(&(g2.transpose() * &g2));
    if dev > ORTHO_TOL {
        return Err(Error::Numerical(format!(
            "direct basis lost orthogonality ({dev:.2e})"
        )));
    }
    let leak = (g2.transpose() * &a).amax();
    if leak > ORTHO_TOL * a.norm() {
        return Err(Error::Numerical(format!(
            "direct basis not orthogonal to the estimate direction ({leak:.2e})"
        )));
    }
    let z2 = g2.transpose() * &data.y;
    let x2 = g2.transpose() * &data.x;
    let gram = &x2 * x2.transpose();
    let (mut spectrum, _) = symmetric_eigen_desc(gram);
    clamp_spectrum(&mut spectrum);
    Ok(CoefficientContext {
        j,
        name: data.names[j].clone(),
        beta_hat_j: fit.beta_hat[j],
        w_j: fit.w[j],
        sigma2_hat: fit.sigma2_hat,
        df: fit.df,
        z2,
        x2,
        spectrum,
    })
}

fn clamp_spectrum(spectrum: &mut DVector<f64>) {
    // Gram-matrix eigenvalues are nonnegative; remove rounding-level
    // negatives so downstream variances stay valid.
    let max = spectrum.iter().cloned().fold(0.0f64, f64::max).max(0.0);
    for v in spectrum.iter_mut() {
        if *v < 0.0 {
            debug_assert!(-*v <= 1e-10 * max.max(1.0), "genuinely negative eigenvalue");
            *v = 0.0;
        }
    }
}

/// Rotate a dataset onto the null space of the dropped columns.
///
/// With X = [X_keep, X_drop], let G span the orthogonal complement of
/// range(X_drop). Then ỹ = Gᵀy follows N(X̃ β_keep, σ²I) with
/// X̃ = GᵀX_keep, and OLS on (ỹ, X̃) reproduces the full-model estimates of
/// the kept coefficients. Passing every column through is a no-op.
pub fn null_space_restrict(data: &RegressionData, keep: &[usize]) -> Result<RegressionData> {
    let p = data.p();
    let n = data.n();
    if keep.is_empty() {
        return Err(Error::InvalidData("keep set must be nonempty".into()));
    }
    let mut seen = vec![false; p];
    for &j in keep {
        if j >= p {
            return Err(Error::Domain(format!("keep index {j} out of range")));
        }
        if seen[j] {
            return Err(Error::InvalidData(format!("duplicate keep index {j}")));
        }
        seen[j] = true;
    }
    let dropped: Vec<usize> = (0..p).filter(|&j| !seen[j]).collect();
    if dropped.is_empty() {
        return Ok(data.clone());
    }
    let d = dropped.len();
    if n - d <= keep.len() {
        return Err(Error::DimensionShortfall(format!(
            "projecting out {d} columns leaves {} rows for {} kept columns",
            n - d,
            keep.len()
        )));
    }
    let mut x_drop = DMatrix::zeros(n, d);
    for (dst, &src) in dropped.iter().enumerate() {
        x_drop.set_column(dst, &data.x.column(src));
    }
    let g = orthonormal_complement(&x_drop);
    let y_tilde = g.transpose() * &data.y;
    let mut x_keep = DMatrix::zeros(n, keep.len());
    let mut names = Vec::with_capacity(keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        x_keep.set_column(dst, &data.x.column(src));
        names.push(data.names[src].clone());
    }
    let x_tilde = g.transpose() * x_keep;
    let mut out = RegressionData::new(y_tilde.iter().cloned().collect(), x_tilde, names)?;
    out.standardized = data.standardized;
    Ok(out)
}
