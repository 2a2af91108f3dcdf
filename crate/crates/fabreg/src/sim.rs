//! Monte Carlo coverage and width studies.
//!
//! The replication scheme freezes a design matrix, simulates fresh
//! responses y ~ N(Xβ₀, σ₀²I) from a seeded counter-based generator, runs
//! the full analysis on each, and tallies per-coefficient coverage with
//! exact binomial error bars plus mean interval widths. Replicates draw
//! from per-rep substreams of the seed, so reports are byte-identical
//! across runs and thread counts.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{clopper_pearson, stream_rng, Probability, StreamRng};
use crate::error::{Error, Result};
use crate::pipeline::{AnalysisConfig, Estimator, PreparedDesign, PriorMeanMode, SCHEMA};
use crate::spending::{fab_interval_z, IntervalMethod, SpendingSpec};
use rand_distr::{Distribution, StandardNormal};

/// Prior parameters handed to the known-variance oracle interval.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OracleParams {
    pub mu: f64,
    pub tau2: f64,
}

/// A coverage-study design: frozen X, truth (β₀, σ₀²), replication count
/// and the interval methods to tabulate.
#[derive(Debug, Clone)]
pub struct SimDesign {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
    pub beta0: DVector<f64>,
    pub sigma2_0: f64,
    pub reps: usize,
    pub alpha: f64,
    pub methods: Vec<IntervalMethod>,
    pub seed: u64,
    pub estimator: Estimator,
    pub prior_mean: PriorMeanMode,
    /// Required when `methods` contains the known-variance oracle.
    pub oracle: Option<OracleParams>,
    /// Confidence level of the per-coefficient Clopper–Pearson bars.
    pub cp_level: f64,
    pub tol: f64,
}

impl SimDesign {
    /// Study on a caller-supplied design matrix.
    pub fn with_design(
        x: DMatrix<f64>,
        beta0: Vec<f64>,
        sigma2_0: f64,
        reps: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{j}")).collect();
        let design = SimDesign {
            beta0: DVector::from_vec(beta0),
            x,
            names,
            sigma2_0,
            reps,
            alpha,
            methods: vec![IntervalMethod::Umau, IntervalMethod::FabT],
            seed,
            estimator: Estimator::Mle,
            prior_mean: PriorMeanMode::Zero,
            oracle: None,
            cp_level: 0.95,
            tol: crate::spending::DEFAULT_TOL,
        };
        design.validate()?;
        Ok(design)
    }

    /// Study on a generated design: rows drawn once from a standard normal
    /// with optional common-factor column correlation `rho`, then frozen
    /// across replicates (substream 0 of the seed).
    #[allow(clippy::too_many_arguments)]
    pub fn generated(
        n: usize,
        p: usize,
        rho: f64,
        beta0: Vec<f64>,
        sigma2_0: f64,
        reps: usize,
        alpha: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::InvalidConfig(format!(
                "column correlation must lie in [0, 1), got {rho}"
            )));
        }
        let mut rng = stream_rng(seed, 0);
        let x = correlated_design(&mut rng, n, p, rho);
        Self::with_design(x, beta0, sigma2_0, reps, alpha, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, p) = self.x.shape();
        if self.beta0.len() != p {
            return Err(Error::InvalidConfig(format!(
                "beta0 has {} entries for {p} columns",
                self.beta0.len()
            )));
        }
        if n <= p || p < 1 {
            return Err(Error::InvalidConfig(format!("need n > p >= 1, got {n} x {p}")));
        }
        if self.sigma2_0.is_nan() || self.sigma2_0 <= 0.0 {
            return Err(Error::InvalidConfig("sigma2_0 must be positive".into()));
        }
        if self.reps < 1 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("at least one method required".into()));
        }
        let mut dedup = self.methods.clone();
        dedup.dedup();
        if dedup.len() != self.methods.len() {
            return Err(Error::InvalidConfig("duplicate methods".into()));
        }
        if self.methods.contains(&IntervalMethod::FabZOracle) && self.oracle.is_none() {
            return Err(Error::InvalidConfig(
                "the fab_z_oracle method requires oracle prior parameters".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidConfig(format!(
                "alpha must lie in (0, 0.5), got {}",
                self.alpha
            )));
        }
        if !(self.cp_level > 0.0 && self.cp_level < 1.0) {
            return Err(Error::InvalidConfig("cp_level must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Rows iid N(0, Σ) with Σ = (1−ρ)I + ρ11ᵀ via a shared row factor.
fn correlated_design(rng: &mut StreamRng, n: usize, p: usize, rho: f64) -> DMatrix<f64> {
    let sqrt_ind = (1.0 - rho).sqrt();
    let sqrt_common = rho.sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let shared: f64 = StandardNormal.sample(rng);
        for j in 0..p {
            let z: f64 = StandardNormal.sample(rng);
            x[(i, j)] = sqrt_ind * z + sqrt_common * shared;
        }
    }
    x
}

/// One (coefficient × method) tally.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageCell {
    pub coefficient: String,
    pub index: usize,
    pub method: IntervalMethod,
    pub hits: u64,
    pub reps: u64,
    pub coverage: f64,
    pub cp_low: f64,
    pub cp_high: f64,
    pub mean_width: f64,
}

/// Per-method summary across coefficients and replicates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: IntervalMethod,
    pub mean_width: f64,
    /// Mean of per-interval width ratios against the classical interval;
    /// absent when the classical interval was not tabulated.
    pub mean_relative_width_vs_umau: Option<f64>,
}

/// A replicate whose analysis failed; excluded from tallies but never
/// silently dropped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Exclusion {
    pub rep: usize,
    pub error: String,
}

/// Full coverage-study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema: String,
    pub n: usize,
    pub p: usize,
    pub sigma2_0: f64,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub cp_level: f64,
    pub cells: Vec<CoverageCell>,
    pub summary: Vec<MethodSummary>,
    pub exclusions: Vec<Exclusion>,
}

impl CoverageReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per coefficient × method.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("coefficient,method,hits,reps,coverage,cp_low,cp_high,mean_width\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{:.15e},{:.15e},{:.15e},{:.15e}\n",
                c.coefficient, c.method, c.hits, c.reps, c.coverage, c.cp_low, c.cp_high,
                c.mean_width,
            ));
        }
        out
    }

    pub fn cell(&self, index: usize, method: IntervalMethod) -> Option<&CoverageCell> {
        self.cells.iter().find(|c| c.index == index && c.method == method)
    }

    pub fn summary_for(&self, method: IntervalMethod) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }
}

// Per-replicate outcome for one coefficient: (hit, width) per method, in
// design.methods order.
struct RepCoef {
    outcomes: Vec<(bool, f64)>,
}

/// Run a coverage study.
pub fn run_study(design: &SimDesign) -> Result<CoverageReport> {
    design.validate()?;
    let p = design.x.ncols();
    let n = design.x.nrows();
    // The placeholder response only carries the shape; replicates replace it.
    let data = crate::ols::RegressionData::new(
        vec![0.0; n],
        design.x.clone(),
        design.names.clone(),
    )?;
    let prepared = PreparedDesign::new(&data)?;
    let cfg = AnalysisConfig {
        alpha: design.alpha,
        estimator: design.estimator,
        prior_mean: design.prior_mean,
        tol: design.tol,
        seed: design.seed,
        ..AnalysisConfig::default()
    };
    let sigma0 = design.sigma2_0.sqrt();
    let mean = &design.x * &design.beta0;

    let rep_results: Vec<std::result::Result<Vec<RepCoef>, String>> = (0..design.reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream_rng(design.seed, rep as u64 + 1);
            let y = DVector::from_fn(n, |i, _| {
                let e: f64 = StandardNormal.sample(&mut rng);
                mean[i] + sigma0 * e
            });
            // UMAU alone has a closed form, but the full pipeline runs in
            // every case so exclusion accounting is uniform.
            let records = prepared.analyze_response(&y, &cfg, &[]).map_err(|e| e.to_string())?;
            let mut per_coef = Vec::with_capacity(p);
            for rec in &records {
                let mut outcomes = Vec::with_capacity(design.methods.len());
                for method in &design.methods {
                    let interval = match method {
                        IntervalMethod::Umau => rec.umau,
                        IntervalMethod::FabT => rec.fab,
                        IntervalMethod::FabZOracle => {
                            let o = design.oracle.expect("validated");
                            let spec = SpendingSpec {
                                mu: o.mu,
                                tau2: o.tau2,
                                sigma: sigma0,
                                w: rec.w,
                                alpha: design.alpha,
                            };
                            fab_interval_z(rec.beta_hat, &spec, design.tol)
                                .map_err(|e| e.to_string())?
                        }
                    };
                    let hit = interval.covers(design.beta0[rec.index]);
                    outcomes.push((hit, interval.width));
                }
                per_coef.push(RepCoef { outcomes });
            }
            Ok(per_coef)
        })
        .collect();

    tally(design, n, p, rep_results)
}

fn tally(
    design: &SimDesign,
    n: usize,
    p: usize,
    rep_results: Vec<std::result::Result<Vec<RepCoef>, String>>,
) -> Result<CoverageReport> {
    let m = design.methods.len();
    let mut hits = vec![0u64; p * m];
    let mut width_sums = vec![0.0f64; p * m];
    let mut counted = 0u64;
    let mut exclusions = Vec::new();
    let umau_pos = design.methods.iter().position(|x| *x == IntervalMethod::Umau);
    let mut ratio_sums = vec![0.0f64; m];
    let mut ratio_counts = vec![0u64; m];
    for (rep, res) in rep_results.into_iter().enumerate() {
        match res {
            Err(error) => exclusions.push(Exclusion { rep, error }),
            Ok(per_coef) => {
                counted += 1;
                for (j, rc) in per_coef.iter().enumerate() {
                    for (k, (hit, width)) in rc.outcomes.iter().enumerate() {
                        if *hit {
                            hits[j * m + k] += 1;
                        }
                        width_sums[j * m + k] += width;
                        if let Some(u) = umau_pos {
                            let uw = rc.outcomes[u].1;
                            if uw > 0.0 {
                                ratio_sums[k] += width / uw;
                                ratio_counts[k] += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    if counted == 0 {
        return Err(Error::Numerical("every replicate failed".into()));
    }
    let level = Probability::new(design.cp_level)?;
    let mut cells = Vec::with_capacity(p * m);
    for j in 0..p {
        for (k, method) in design.methods.iter().enumerate() {
            let h = hits[j * m + k];
            let (cp_low, cp_high) = clopper_pearson(h, counted, level)?;
            cells.push(CoverageCell {
                coefficient: design.names[j].clone(),
                index: j,
                method: *method,
                hits: h,
                reps: counted,
                coverage: h as f64 / counted as f64,
                cp_low,
                cp_high,
                mean_width: width_sums[j * m + k] / counted as f64,
            });
        }
    }
    let summary = design
        .methods
        .iter()
        .enumerate()
        .map(|(k, method)| {
            let total: f64 = (0..p).map(|j| width_sums[j * m + k]).sum();
            MethodSummary {
                method: *method,
                mean_width: total / (counted as f64 * p as f64),
                mean_relative_width_vs_umau: if ratio_counts[k] > 0 {
                    Some(ratio_sums[k] / ratio_counts[k] as f64)
                } else {
                    None
                },
            }
        })
        .collect();
    Ok(CoverageReport {
        schema: SCHEMA.to_string(),
        n,
        p,
        sigma2_0: design.sigma2_0,
        reps: design.reps,
        alpha: design.alpha,
        seed: design.seed,
        cp_level: design.cp_level,
        cells,
        summary,
        exclusions,
    })
}

/// Design of an asymptotic width-trend study comparing the adaptive
/// interval to the known-variance oracle along a "p grows with n" path.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendDesign {
    /// Limit ratio p/n in (0, 1).
    pub c: f64,
    pub n_grid: Vec<usize>,
    pub tau2: f64,
    /// Per-observation noise scale: the cell at size n uses σ² = n·σ²∞.
    pub sigma2_inf: f64,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    /// Eigenvalues of XᵀX/n are drawn uniformly from this range.
    pub spectrum_range: (f64, f64),
    /// How many leading coefficients to track per cell (0 = all).
    pub track: usize,
    pub estimator: Estimator,
    pub tol: f64,
}

impl TrendDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c < 1.0) {
            return Err(Error::InvalidConfig("c must lie in (0, 1)".into()));
        }
        if self.n_grid.is_empty() {
            return Err(Error::InvalidConfig("n grid must be nonempty".into()));
        }
        if self.tau2.is_nan() || self.tau2 < 0.0 || self.sigma2_inf.is_nan() || self.sigma2_inf <= 0.0 {
            return Err(Error::InvalidConfig("invalid tau2 or sigma2_inf".into()));
        }
        if self.reps < 1 {
            return Err(Error::InvalidConfig("reps must be >= 1".into()));
        }
        let (lo, hi) = self.spectrum_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::InvalidConfig("spectrum range must satisfy 0 < lo < hi".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidConfig("alpha must lie in (0, 0.5)".into()));
        }
        Ok(())
    }
}

/// One row of the width-trend table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendRow {
    pub n: usize,
    pub p: usize,
    pub mean_fab_width: f64,
    pub mean_oracle_width: f64,
    pub mean_umau_width: f64,
    /// mean adaptive width − mean oracle width.
    pub gap: f64,
}

/// Width-trend study output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendTable {
    pub schema: String,
    pub design: TrendDesign,
    pub rows: Vec<TrendRow>,
}

impl TrendTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,p,mean_fab_width,mean_oracle_width,mean_umau_width,gap\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.15e},{:.15e},{:.15e},{:.15e}\n",
                r.n, r.p, r.mean_fab_width, r.mean_oracle_width, r.mean_umau_width, r.gap,
            ));
        }
        out
    }
}

/// Run the width-trend study: for each n, with p = ⌈cn⌉ and σ² = nσ²∞,
/// draw β ~ N(0, τ²I) and y per replicate, then average the adaptive FAB,
/// oracle FAB and classical widths over the tracked coefficients. The
/// gap column contracting toward zero as n grows is the observable shadow
/// of asymptotic Bayes-optimality.
pub fn width_convergence_study(design: &TrendDesign) -> Result<TrendTable> {
    design.validate()?;
    let mut rows = Vec::with_capacity(design.n_grid.len());
    for (cell, &n) in design.n_grid.iter().enumerate() {
        let p = ((design.c * n as f64).ceil() as usize).max(2);
        if p + 1 >= n {
            return Err(Error::InvalidConfig(format!(
                "cell n = {n} leaves no residual degrees of freedom at p = {p}"
            )));
        }
        let cell_base = (cell as u64 + 1) << 32;
        let mut xrng = stream_rng(design.seed, cell_base);
        let x = spectrum_design(&mut xrng, n, p, design.spectrum_range);
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let data = crate::ols::RegressionData::new(vec![0.0; n], x.clone(), names)?;
        let sigma2 = n as f64 * design.sigma2_inf;
        let sigma = sigma2.sqrt();
        let tracked: Vec<usize> = if design.track == 0 {
            (0..p).collect()
        } else {
            (0..design.track.min(p)).collect()
        };
        let prepared = PreparedDesign::for_coefficients(&data, &tracked)?;
        let cfg = AnalysisConfig {
            alpha: design.alpha,
            estimator: design.estimator,
            prior_mean: PriorMeanMode::Zero,
            tol: design.tol,
            seed: design.seed,
            ..AnalysisConfig::default()
        };
        let tau = design.tau2.sqrt();

        let sums: Vec<Result<(f64, f64, f64)>> = (0..design.reps)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(design.seed, cell_base + 1 + rep as u64);
                let beta = DVector::from_fn(p, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    tau * z
                });
                let mean = &x * &beta;
                let y = DVector::from_fn(n, |i, _| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    mean[i] + sigma * e
                });
                let records = prepared.analyze_response(&y, &cfg, &tracked)?;
                let mut fab_w = 0.0;
                let mut oracle_w = 0.0;
                let mut umau_w = 0.0;
                for rec in &records {
                    fab_w += rec.fab.width;
                    umau_w += rec.umau.width;
                    let spec = SpendingSpec {
                        mu: 0.0,
                        tau2: design.tau2,
                        sigma,
                        w: rec.w,
                        alpha: design.alpha,
                    };
                    oracle_w += fab_interval_z(rec.beta_hat, &spec, design.tol)?.width;
                }
                let k = records.len() as f64;
                Ok((fab_w / k, oracle_w / k, umau_w / k))
            })
            .collect();

        let mut fab = 0.0;
        let mut oracle = 0.0;
        let mut umau = 0.0;
        for s in sums {
            let (f, o, u) = s?;
            fab += f;
            oracle += o;
            umau += u;
        }
        let r = design.reps as f64;
        rows.push(TrendRow {
            n,
            p,
            mean_fab_width: fab / r,
            mean_oracle_width: oracle / r,
            mean_umau_width: umau / r,
            gap: (fab - oracle) / r,
        });
    }
    Ok(TrendTable {
        schema: SCHEMA.to_string(),
        design: design.clone(),
        rows,
    })
}

// X with prescribed singular structure: eigenvalues of XᵀX/n drawn from
// U(lo, hi), combined with independent orthonormal factors.
fn spectrum_design(rng: &mut StreamRng, n: usize, p: usize, range: (f64, f64)) -> DMatrix<f64> {
    let (lo, hi) = range;
    let gauss_left = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    let q_left = gauss_left.qr().q();
    let gauss_right = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let q_right = gauss_right.qr().q();
    let mut diag = DVector::zeros(p);
    for k in 0..p {
        let u: f64 = rand::Rng::random_range(rng, 0.0..1.0);
        let lambda = lo + (hi - lo) * u;
        diag[k] = (n as f64 * lambda).sqrt();
    }
    q_left * DMatrix::from_diagonal(&diag) * q_right.transpose()
}
