//! Distribution kernels checked against independent numerical oracles:
//! adaptive quadrature of the densities and log-space binomial tail sums,
//! none of which share code with the implementations under test.

use fabreg::dist::{clopper_pearson, normal_cdf, normal_quantile, t_cdf, t_quantile, Df, Probability};

fn prob(p: f64) -> Probability {
    Probability::new(p).unwrap()
}

fn df(q: u64) -> Df {
    Df::new(q).unwrap()
}

// ---------------------------------------------------------------------------
// adaptive Simpson quadrature
// ---------------------------------------------------------------------------

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: i32,
    min_depth: i32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth <= 0 || (min_depth <= 0 && delta.abs() <= 15.0 * eps) {
        return left + right + delta / 15.0;
    }
    adaptive_step(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1, min_depth - 1)
        + adaptive_step(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1, min_depth - 1)
}

fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, eps: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = simpson(a, b, fa, fm, fb);
    adaptive_step(&f, a, b, fa, fm, fb, whole, eps, 48, 10)
}

// Φ(x) by quadrature of the density from 0, plus one half.
fn normal_cdf_oracle(x: f64) -> f64 {
    let density = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 + integrate(density, 0.0, x, 1e-13)
}

// F(x; ν) through the substitution t = √ν·tanφ, which maps the t density
// onto cos^{ν−1}φ over a bounded interval.
fn t_cdf_oracle(x: f64, nu: f64) -> f64 {
    let g = |phi: f64| phi.cos().powf(nu - 1.0);
    let upper = (x / nu.sqrt()).atan();
    let half = std::f64::consts::FRAC_PI_2;
    let num = integrate(g, -half, upper, 1e-13);
    let den = integrate(g, -half, half, 1e-13);
    num / den
}

#[test]
fn normal_cdf_matches_quadrature() {
    assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
    for &x in &[0.1, 0.5, 1.0, 1.959964, 2.5, 4.0, -1.3] {
        let oracle = normal_cdf_oracle(x);
        assert!(
            (normal_cdf(x) - oracle).abs() < 1e-11,
            "x={x}: {} vs {oracle}",
            normal_cdf(x)
        );
    }
}

#[test]
fn normal_quantile_matches_bisection_on_quadrature_oracle() {
    // invert the quadrature CDF by bisection, independent of the quantile code
    let target = 0.975;
    let (mut lo, mut hi) = (0.0f64, 10.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf_oracle(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle_q = 0.5 * (lo + hi);
    assert!((oracle_q - 1.959964).abs() < 1e-5);
    let q = normal_quantile(prob(target)).unwrap();
    assert!((q - oracle_q).abs() < 1e-8, "{q} vs {oracle_q}");
}

#[test]
fn t_cdf_matches_quadrature() {
    assert!((t_cdf(2.228139, df(10)) - 0.975).abs() < 1e-5);
    for &(x, q) in &[(2.228139, 10u64), (-1.3, 5), (0.7, 30), (3.1, 3)] {
        let oracle = t_cdf_oracle(x, q as f64);
        assert!(
            (t_cdf(x, df(q)) - oracle).abs() < 1e-10,
            "x={x} q={q}: {} vs {oracle}",
            t_cdf(x, df(q))
        );
    }
}

#[test]
fn t_quantile_matches_bisection_on_quadrature_oracle() {
    let target = 0.975;
    let (mut lo, mut hi) = (0.0f64, 40.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if t_cdf_oracle(mid, 10.0) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle_q = 0.5 * (lo + hi);
    assert!((oracle_q - 2.228139).abs() < 1e-4);
    let q = t_quantile(prob(target), df(10)).unwrap();
    assert!((q - oracle_q).abs() < 1e-8, "{q} vs {oracle_q}");
}

#[test]
fn t_limits_to_normal_at_huge_df() {
    for &x in &[-2.0, 0.3, 1.0] {
        assert!((t_cdf(x, df(1_000_000)) - normal_cdf(x)).abs() < 1e-4);
    }
}

// ---------------------------------------------------------------------------
// exact binomial tails in log space
// ---------------------------------------------------------------------------

struct LnFactorial(Vec<f64>);

impl LnFactorial {
    fn up_to(n: usize) -> Self {
        let mut v = vec![0.0; n + 1];
        for k in 1..=n {
            v[k] = v[k - 1] + (k as f64).ln();
        }
        LnFactorial(v)
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.0[n] - self.0[k] - self.0[n - k]
    }
}

// P(X >= s) for X ~ Bin(n, p), via log-sum-exp over the upper tail.
fn binom_upper_tail(lf: &LnFactorial, n: usize, s: usize, p: f64) -> f64 {
    if s == 0 {
        return 1.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let terms: Vec<f64> = (s..=n)
        .map(|k| lf.ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln())
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp()
}

fn binom_lower_tail(lf: &LnFactorial, n: usize, s: usize, p: f64) -> f64 {
    if s == n {
        return 1.0;
    }
    let terms: Vec<f64> = (0..=s)
        .map(|k| lf.ln_choose(n, k) + k as f64 * p.ln() + (n - k) as f64 * (1.0 - p).ln())
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp()
}

// Clopper-Pearson bounds by bisection on the exact tail probabilities.
fn cp_oracle(s: u64, n: u64, level: f64) -> (f64, f64) {
    let alpha = 1.0 - level;
    let lf = LnFactorial::up_to(n as usize);
    let lower = if s == 0 {
        0.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binom_upper_tail(&lf, n as usize, s as usize, mid) < 0.5 * alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    let upper = if s == n {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if binom_lower_tail(&lf, n as usize, s as usize, mid) > 0.5 * alpha {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    (lower, upper)
}

#[test]
fn clopper_pearson_matches_binomial_tail_oracle() {
    for &(s, n, level) in &[
        (4750u64, 5000u64, 0.95),
        (4750, 5000, 0.99),
        (3, 12, 0.95),
        (1, 7, 0.9),
        (299, 300, 0.95),
    ] {
        let (lo, hi) = clopper_pearson(s, n, prob(level)).unwrap();
        let (olo, ohi) = cp_oracle(s, n, level);
        assert!((lo - olo).abs() < 1e-8, "({s},{n},{level}) lower {lo} vs {olo}");
        assert!((hi - ohi).abs() < 1e-8, "({s},{n},{level}) upper {hi} vs {ohi}");
    }
}

#[test]
fn clopper_pearson_large_sample_width() {
    let (lo, hi) = clopper_pearson(4750, 5000, prob(0.95)).unwrap();
    assert!(lo <= 0.95 && 0.95 <= hi);
    assert!(hi - lo < 0.015, "width {}", hi - lo);
}

// ---------------------------------------------------------------------------
// inverse consistency, symmetry and monotonicity grids
// ---------------------------------------------------------------------------

#[test]
fn quantile_cdf_inverse_consistency_grids() {
    let grid: Vec<f64> = (1..1000).map(|i| i as f64 / 1000.0).collect();
    for &p in &grid {
        let q = normal_quantile(prob(p)).unwrap();
        assert!((normal_cdf(q) - p).abs() < 1e-9, "normal p={p}");
    }
    for qdf in [1u64, 5, 30, 1000] {
        for &p in &grid {
            let t = t_quantile(prob(p), df(qdf)).unwrap();
            assert!((t_cdf(t, df(qdf)) - p).abs() < 1e-9, "t df={qdf} p={p}");
        }
    }
}

#[test]
fn quantile_symmetry() {
    for &p in &[0.01, 0.1, 0.25, 0.45] {
        let n = normal_quantile(prob(p)).unwrap() + normal_quantile(prob(1.0 - p)).unwrap();
        assert!(n.abs() < 1e-10, "normal p={p}: {n}");
        for qdf in [1u64, 5, 30, 1000] {
            let t = t_quantile(prob(p), df(qdf)).unwrap()
                + t_quantile(prob(1.0 - p), df(qdf)).unwrap();
            assert!(t.abs() < 1e-10, "t df={qdf} p={p}: {t}");
        }
    }
}

#[test]
fn quantiles_strictly_increasing() {
    let grid: Vec<f64> = (1..500).map(|i| i as f64 / 500.0).collect();
    let mut prev = f64::NEG_INFINITY;
    for &p in &grid {
        let q = normal_quantile(prob(p)).unwrap();
        assert!(q > prev);
        prev = q;
    }
    for qdf in [2u64, 20] {
        let mut prev = f64::NEG_INFINITY;
        for &p in &grid {
            let t = t_quantile(prob(p), df(qdf)).unwrap();
            assert!(t > prev, "df={qdf} p={p}");
            prev = t;
        }
    }
}
