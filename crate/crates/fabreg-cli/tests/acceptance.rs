//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (run with `--nocapture` to see the
//! lines for passing criteria).

use fabreg::dist::{clopper_pearson, sample_normal, stream_rng, t_cdf, t_quantile, Df, Probability};
use fabreg::eb::{mle_estimate, moment_estimate, MarginalModel, ParamBox};
use fabreg::ols::{fit_ols, RegressionData};
use fabreg::pipeline::{analyze, AnalysisConfig};
use fabreg::sim::{run_study, width_convergence_study, SimDesign, TrendDesign};
use fabreg::spending::{
    fab_interval_t, region_membership, spending, umau_interval, IntervalMethod, SpendingSpec,
};
use nalgebra::DMatrix;

fn df(q: u64) -> Df {
    Df::new(q).unwrap()
}

fn prob(p: f64) -> Probability {
    Probability::new(p).unwrap()
}

/// Criterion 1 — exact coverage: on a frozen synthetic design (n = 100,
/// p = 20) with fixed (β, σ²), 5000 replicates at α = 0.05 put the
/// empirical coverage of both the adaptive and the classical interval
/// inside the exact binomial 99% band around 0.95 for at least 19 of the
/// 20 coefficients, with no excluded replicates.
#[test]
fn criterion_01_exact_coverage() {
    let p = 20usize;
    let beta0: Vec<f64> = (0..p).map(|j| (j as f64 - 10.0) * 0.05).collect();
    let design = SimDesign::generated(100, p, 0.0, beta0, 1.0, 5000, 0.05, 0xFAB001).unwrap();
    let report = run_study(&design).unwrap();
    assert!(report.exclusions.is_empty(), "excluded replicates present");
    let mut pass = std::collections::BTreeMap::new();
    for method in [IntervalMethod::FabT, IntervalMethod::Umau] {
        let mut inside = 0usize;
        for j in 0..p {
            let cell = report.cell(j, method).unwrap();
            let (lo, hi) = clopper_pearson(cell.hits, cell.reps, prob(0.99)).unwrap();
            if lo <= 0.95 && 0.95 <= hi {
                inside += 1;
            }
        }
        assert!(
            inside >= 19,
            "{method}: only {inside}/20 coefficients inside the 99% band"
        );
        pass.insert(method.to_string(), inside);
    }
    println!(
        "ACCEPTANCE 1 (exact coverage): PASS - fab {}/20, umau {}/20 coefficients in band, 0 exclusions",
        pass["fab_t"], pass["umau"]
    );
}

/// Criterion 2 — width advantage under a concentrated truth: β drawn from
/// N(0, 0.01·σ²·avg(w²)) on an n = 200, p = 40 design, 500 replicates; the
/// mean FAB/UMAU width ratio falls below 0.95 (and stays above 0.7 — the
/// advantage is real but bounded).
#[test]
fn criterion_02_width_advantage() {
    let (n, p) = (200usize, 40usize);
    let mut rng = stream_rng(0xFAB002, 0);
    let x = DMatrix::from_fn(n, p, |_, _| sample_normal(&mut rng, 0.0, 1.0));
    let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let shape = RegressionData::new(vec![0.0; n], x.clone(), names).unwrap();
    let fit = fit_ols(&shape).unwrap();
    let avg_w2 = fit.w().iter().map(|w| w * w).sum::<f64>() / p as f64;
    let tau = (0.01 * avg_w2).sqrt();
    let beta0: Vec<f64> = (0..p).map(|_| sample_normal(&mut rng, 0.0, tau)).collect();
    let design = SimDesign::with_design(x, beta0, 1.0, 500, 0.05, 0xFAB002).unwrap();
    let report = run_study(&design).unwrap();
    assert!(report.exclusions.is_empty());
    let rel = report
        .summary_for(IntervalMethod::FabT)
        .unwrap()
        .mean_relative_width_vs_umau
        .unwrap();
    assert!(rel < 0.95, "mean relative width {rel} not below 0.95");
    assert!(rel > 0.7, "mean relative width {rel} implausibly small");
    println!("ACCEPTANCE 2 (width advantage): PASS - mean relative width {rel:.4}");
}

/// Criterion 3 — diffuse-prior reduction: forcing τ̃² = 1e12 makes the
/// adaptive endpoints match the classical ones within 1e-4·wσ̂ across a
/// 100-case grid.
#[test]
fn criterion_03_diffuse_reduction() {
    let mut rng = stream_rng(0xFAB003, 0);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let beta_hat = sample_normal(&mut rng, 0.0, 2.0);
        let sigma_hat: f64 = 0.4 + rand::Rng::random_range(&mut rng, 0.0..2.0);
        let w: f64 = 0.3 + rand::Rng::random_range(&mut rng, 0.0..1.5);
        let mu = sample_normal(&mut rng, 0.0, 1.0);
        let q = 4 + (case % 40) as u64;
        let spec = SpendingSpec { mu, tau2: 1e12, sigma: 1.0, w, alpha: 0.05 };
        let fab = fab_interval_t(beta_hat, sigma_hat, df(q), &spec, 1e-9).unwrap();
        let umau = umau_interval(beta_hat, w, sigma_hat, df(q), 0.05).unwrap();
        assert!(fab.residual <= 1e-9);
        let scale = w * sigma_hat;
        let dev = ((fab.lower - umau.lower).abs()).max((fab.upper - umau.upper).abs()) / scale;
        worst = worst.max(dev);
    }
    assert!(worst < 1e-4, "worst endpoint deviation {worst:.3e}·wσ̂");
    println!("ACCEPTANCE 3 (diffuse reduction): PASS - worst endpoint deviation {worst:.2e}·wσ̂");
}

// two-stage grid scan of the endpoint equations (coarse bracket, then the
// target step inside the bracketing cell; the residuals are monotone, so
// this is equivalent to a dense scan at the fine step)
fn grid_scan_endpoint<F: Fn(f64) -> f64>(
    residual: F,
    lo: f64,
    hi: f64,
    fine_step: f64,
) -> Option<f64> {
    let coarse_n = 400usize;
    let coarse = (hi - lo) / coarse_n as f64;
    let mut prev = residual(lo);
    let mut cell = None;
    for k in 1..=coarse_n {
        let theta = lo + coarse * k as f64;
        let cur = residual(theta);
        if prev < 0.0 && cur >= 0.0 {
            cell = Some((theta - coarse, theta));
            break;
        }
        prev = cur;
    }
    let (a, b) = cell?;
    let steps = ((b - a) / fine_step).ceil() as usize;
    let mut prev = residual(a);
    for k in 1..=steps {
        let theta = a + fine_step * k as f64;
        let cur = residual(theta);
        if prev < 0.0 && cur >= 0.0 {
            return Some(theta - 0.5 * fine_step);
        }
        prev = cur;
    }
    None
}

/// Criterion 4 — endpoint-equation residuals: every returned interval
/// satisfies both equations to 1e-9 (the solver enforces this; spot-checked
/// here), and on 50 random cases the solved endpoints agree with an
/// independent grid scan at step 1e-5 to within 2e-5.
#[test]
fn criterion_04_endpoint_residuals_and_grid_oracle() {
    let mut rng = stream_rng(0xFAB004, 0);
    let mut worst_resid: f64 = 0.0;
    let mut worst_dev: f64 = 0.0;
    for case in 0..50 {
        let w: f64 = 0.5 + rand::Rng::random_range(&mut rng, 0.0..1.0);
        let sigma_hat: f64 = 0.5 + rand::Rng::random_range(&mut rng, 0.0..1.0);
        let spec = SpendingSpec {
            mu: rand::Rng::random_range(&mut rng, -0.5..0.5),
            tau2: 0.05 + rand::Rng::random_range(&mut rng, 0.0..0.5),
            sigma: 0.5 + rand::Rng::random_range(&mut rng, 0.0..1.0),
            w,
            alpha: 0.05,
        };
        let beta_hat = rand::Rng::random_range(&mut rng, -1.5..1.5);
        let q = 5 + (case % 30) as u64;
        let iv = fab_interval_t(beta_hat, sigma_hat, df(q), &spec, 1e-9).unwrap();
        worst_resid = worst_resid.max(iv.residual);
        assert!(iv.residual <= 1e-9, "case {case}: residual {}", iv.residual);

        let scale = w * sigma_hat;
        let alpha = spec.alpha;
        let h_lower = |theta: f64| {
            t_cdf((theta - beta_hat) / scale, df(q)) - alpha * (1.0 - spending(&spec, theta))
        };
        let h_upper = |theta: f64| {
            alpha * spending(&spec, theta) - t_cdf((beta_hat - theta) / scale, df(q))
        };
        let t975 = t_quantile(prob(1.0 - 0.25 * alpha), df(q)).unwrap();
        let reach = scale * (t975 + 1.0);
        let scan_lo =
            grid_scan_endpoint(h_lower, spec.mu.min(beta_hat - reach) - scale, beta_hat, 1e-5)
                .expect("lower endpoint");
        let scan_hi =
            grid_scan_endpoint(h_upper, beta_hat, spec.mu.max(beta_hat + reach) + scale, 1e-5)
                .expect("upper endpoint");
        let dev = (iv.lower - scan_lo).abs().max((iv.upper - scan_hi).abs());
        worst_dev = worst_dev.max(dev);
        assert!(dev < 2e-5, "case {case}: deviation {dev:.2e}");
    }
    println!(
        "ACCEPTANCE 4 (endpoint residuals): PASS - max residual {worst_resid:.2e}, max oracle deviation {worst_dev:.2e}"
    );
}

/// Criterion 5 — region shape: a decreasing-step spending function produces
/// a grid-detected non-interval region for suitable (β̂, σ̂), while the
/// monotone normal-prior spending yields a contiguous region on the same
/// grid in 100000 of 100000 random cases.
#[test]
fn criterion_05_region_shape() {
    // the construction behind the non-monotone case: s drops from 0.9 to
    // 0.1 between θ₁ = 0 and θ₂ = 1; estimates far below θ₁ with a unit
    // scale leave θ₂ covered but θ₁ uncovered
    let alpha = 0.05;
    let q = 10u64;
    let s_step = |theta: f64| if theta <= 0.5 { 0.9 } else { 0.1 };
    let grid_points = 161usize;
    let mut gap_found = false;
    for case in 0..8 {
        let beta_hat = -1.9 - 0.05 * case as f64;
        let sigma_hat = 1.0;
        let mut pattern = Vec::with_capacity(grid_points);
        for k in 0..grid_points {
            let theta = -5.0 + 8.0 * k as f64 / (grid_points - 1) as f64;
            pattern.push(region_membership(
                theta, beta_hat, 1.0, sigma_hat, df(q), s_step, alpha,
            ));
        }
        let switches = pattern.windows(2).filter(|p| p[0] != p[1]).count();
        if switches >= 3 {
            gap_found = true;
            break;
        }
    }
    assert!(gap_found, "no non-interval region detected for the step construction");

    let mut rng = stream_rng(0xFAB005, 0);
    let cases = 100_000usize;
    for case in 0..cases {
        let w: f64 = 0.4 + rand::Rng::random_range(&mut rng, 0.0..1.2);
        let sigma_hat: f64 = 0.4 + rand::Rng::random_range(&mut rng, 0.0..1.2);
        let spec = SpendingSpec {
            mu: rand::Rng::random_range(&mut rng, -2.0..2.0),
            tau2: 10f64.powf(rand::Rng::random_range(&mut rng, -3.0..3.0))
                * (w * sigma_hat).powi(2),
            sigma: 0.4 + rand::Rng::random_range(&mut rng, 0.0..1.2),
            w,
            alpha: 0.05,
        };
        let beta_hat = rand::Rng::random_range(&mut rng, -3.0..3.0);
        let q = 3 + (case % 98) as u64;
        let span = 8.0 * w * sigma_hat + (beta_hat - spec.mu).abs();
        let lo = beta_hat.min(spec.mu) - span;
        let hi = beta_hat.max(spec.mu) + span;
        let mut prev =
            region_membership(lo, beta_hat, w, sigma_hat, df(q), |t| spending(&spec, t), 0.05);
        let mut switches = 0usize;
        for k in 1..grid_points {
            let theta = lo + (hi - lo) * k as f64 / (grid_points - 1) as f64;
            let cur = region_membership(
                theta, beta_hat, w, sigma_hat, df(q), |t| spending(&spec, t), 0.05,
            );
            if cur != prev {
                switches += 1;
            }
            prev = cur;
        }
        assert!(switches <= 2, "case {case}: non-contiguous monotone region");
    }
    println!(
        "ACCEPTANCE 5 (region shape): PASS - step construction gap detected; {cases}/{cases} monotone regions contiguous"
    );
}

/// Criterion 6 — MLE consistency trend: on diagonal models with a bounded
/// non-degenerate spectrum, the median relative error of τ̃² decreases
/// across m ∈ {200, 800, 3200} and is below 0.1 at m = 3200
/// (200 replicates each).
#[test]
fn criterion_06_mle_consistency() {
    // Spectrum law U(0.2, 5) with unit noise: wide enough that the variance
    // split (τ², σ²) carries real Fisher information at these sample sizes.
    let (tau2, sigma2) = (1.0, 1.0);
    let mut medians = Vec::new();
    for (mi, m) in [200usize, 800, 3200].into_iter().enumerate() {
        let mut errs = Vec::with_capacity(200);
        for rep in 0..200u64 {
            let mut rng = stream_rng(0xFAB006 + mi as u64, rep + 1);
            let spectrum: Vec<f64> = (0..m)
                .map(|_| 0.2 + 4.8 * rand::Rng::random_range(&mut rng, 0.0..1.0))
                .collect();
            let rotated: Vec<f64> = spectrum
                .iter()
                .map(|l| sample_normal(&mut rng, 0.0, (l * tau2 + sigma2).sqrt()))
                .collect();
            let mm = MarginalModel::from_diagonal(spectrum, rotated, None).unwrap();
            let est = mle_estimate(&mm, &ParamBox::default_for(&mm)).unwrap();
            errs.push((est.tau2 - tau2).abs() / tau2);
        }
        errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        medians.push(0.5 * (errs[99] + errs[100]));
    }
    assert!(
        medians[0] > medians[1] && medians[1] > medians[2],
        "medians not decreasing: {medians:?}"
    );
    assert!(medians[2] < 0.1, "median at m=3200 is {}", medians[2]);
    println!(
        "ACCEPTANCE 6 (MLE consistency): PASS - median rel errors {:.3} > {:.3} > {:.3}",
        medians[0], medians[1], medians[2]
    );
}

/// Criterion 7 — moment-estimator unbiasedness: same diagonal design at
/// m = 3200, 200 replicates; the means of (τ̃², σ̃²) land within 3 Monte
/// Carlo standard errors of the truth.
#[test]
fn criterion_07_moment_unbiasedness() {
    let (tau2, sigma2) = (1.0, 1.0);
    let m = 3200usize;
    let reps = 200u64;
    let mut sum_t = 0.0;
    let mut sq_t = 0.0;
    let mut sum_s = 0.0;
    let mut sq_s = 0.0;
    for rep in 0..reps {
        let mut rng = stream_rng(0xFAB007, rep + 1);
        let spectrum: Vec<f64> = (0..m)
            .map(|_| 0.2 + 4.8 * rand::Rng::random_range(&mut rng, 0.0..1.0))
            .collect();
        let rotated: Vec<f64> = spectrum
            .iter()
            .map(|l| sample_normal(&mut rng, 0.0, (l * tau2 + sigma2).sqrt()))
            .collect();
        let mm = MarginalModel::from_diagonal(spectrum, rotated, None).unwrap();
        let est = moment_estimate(&mm).unwrap();
        sum_t += est.tau2;
        sq_t += est.tau2 * est.tau2;
        sum_s += est.sigma2;
        sq_s += est.sigma2 * est.sigma2;
    }
    let r = reps as f64;
    let mean_t = sum_t / r;
    let mean_s = sum_s / r;
    let se_t = ((sq_t / r - mean_t * mean_t) / r).sqrt();
    let se_s = ((sq_s / r - mean_s * mean_s) / r).sqrt();
    assert!(
        (mean_t - tau2).abs() <= 3.0 * se_t,
        "tau2: mean {mean_t}, se {se_t}"
    );
    assert!(
        (mean_s - sigma2).abs() <= 3.0 * se_s,
        "sigma2: mean {mean_s}, se {se_s}"
    );
    println!(
        "ACCEPTANCE 7 (moment unbiasedness): PASS - tau2 {:.4}±{:.4}, sigma2 {:.4}±{:.4}",
        mean_t, se_t, mean_s, se_s
    );
}

/// Criterion 8 — asymptotic-optimality trend: along c = p/n = 0.25 with
/// σ² = n·σ²∞, the mean width gap between the adaptive interval and the
/// known-variance oracle is strictly smaller at n = 400 than at n = 50
/// (500 replicates per cell).
#[test]
fn criterion_08_width_convergence_trend() {
    let design = TrendDesign {
        c: 0.25,
        n_grid: vec![50, 100, 200, 400],
        tau2: 1.0,
        sigma2_inf: 1.0,
        reps: 500,
        alpha: 0.05,
        seed: 0xFAB008,
        spectrum_range: (0.5, 2.0),
        track: 4,
        estimator: fabreg::pipeline::Estimator::Mle,
        tol: 1e-9,
    };
    let table = width_convergence_study(&design).unwrap();
    let first = &table.rows[0];
    let last = &table.rows[table.rows.len() - 1];
    assert!(
        last.gap < first.gap,
        "gap did not shrink: {} at n={} vs {} at n={}",
        last.gap,
        last.n,
        first.gap,
        first.n
    );
    for row in &table.rows {
        // the oracle beats the classical interval on average at this prior scale
        assert!(
            row.mean_oracle_width < row.mean_umau_width,
            "n={}: oracle {} vs umau {}",
            row.n,
            row.mean_oracle_width,
            row.mean_umau_width
        );
    }
    let gaps: Vec<String> = table.rows.iter().map(|r| format!("n={}: {:.4}", r.n, r.gap)).collect();
    println!("ACCEPTANCE 8 (width convergence): PASS - {}", gaps.join(", "));
}

/// Criterion 9 — independence construction: perturbing the response along
/// a coefficient's own estimator direction leaves that coefficient's
/// spending parameters bit-identical, on 100 random instances.
#[test]
fn criterion_09_spec_invariance() {
    let cfg = AnalysisConfig::default();
    let mut rng = stream_rng(0xFAB009, 0);
    for case in 0..100 {
        let n = 28 + (case % 8) * 4;
        let p = 3 + (case % 5);
        let mut gen = stream_rng(0xFAB009, case as u64 + 1);
        let x = DMatrix::from_fn(n, p, |_, _| sample_normal(&mut gen, 0.0, 1.0));
        let y: Vec<f64> = (0..n).map(|_| sample_normal(&mut gen, 0.0, 1.0)).collect();
        let names = (0..p).map(|j| format!("x{j}")).collect();
        let data = RegressionData::new(y, x, names).unwrap();
        let fit = fit_ols(&data).unwrap();
        let j = case % p;
        let a = fit.coefficient_direction(j);
        let c: f64 = rand::Rng::random_range(&mut rng, -2.0..2.0) / fit.w()[j];
        let y2: Vec<f64> = (0..n).map(|i| data.y()[i] + c * a[i]).collect();
        let perturbed = data.with_response(y2).unwrap();

        let before = analyze(&data, &cfg).unwrap();
        let after = analyze(&perturbed, &cfg).unwrap();
        let sa = before.records[j].spec.as_ref().unwrap();
        let sb = after.records[j].spec.as_ref().unwrap();
        let identical = sa.mu.to_bits() == sb.mu.to_bits()
            && sa.tau2.to_bits() == sb.tau2.to_bits()
            && sa.sigma.to_bits() == sb.sigma.to_bits()
            && sa.w.to_bits() == sb.w.to_bits()
            && sa.alpha.to_bits() == sb.alpha.to_bits();
        assert!(identical, "case {case}: spending spec changed: {sa:?} vs {sb:?}");
    }
    println!("ACCEPTANCE 9 (spec invariance): PASS - 100/100 instances bit-identical");
}

/// Criterion 10 — determinism of the simulation command: identical flags
/// and seed produce byte-identical CSV and JSON reports across runs.
#[test]
fn criterion_10_cli_determinism() {
    let dir = std::env::temp_dir().join(format!("fabreg-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    for tag in ["one", "two"] {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_fabreg"))
            .args([
                "simulate",
                "--n",
                "40",
                "--p",
                "5",
                "--beta0",
                "zero",
                "--sigma2",
                "1",
                "--reps",
                "8",
                "--seed",
                "7",
                "--out",
                dir.join(tag).to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
    }
    let csv_a = std::fs::read(dir.join("one.csv")).unwrap();
    let csv_b = std::fs::read(dir.join("two.csv")).unwrap();
    assert_eq!(csv_a, csv_b, "CSV outputs differ");
    let json_a = std::fs::read(dir.join("one.json")).unwrap();
    let json_b = std::fs::read(dir.join("two.json")).unwrap();
    assert_eq!(json_a, json_b, "JSON outputs differ");
    println!("ACCEPTANCE 10 (determinism): PASS - byte-identical outputs across runs");
}
