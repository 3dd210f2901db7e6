//! The oracle suite: analytic identities and Monte Carlo cross-checks that
//! validate the closed forms and the numerical machinery end to end.
//!
//! Each check returns a [`CheckResult`] with the measured error and its
//! threshold, so callers can render pass/fail reports and exit nonzero on
//! failure.

use crate::arima::{forecast, ArimaSpec};
use crate::bspline::make_basis;
use crate::fpca::fit_fpca;
use crate::inversion::{anchor_key_at_s, invert_pointwise, CAP_Q};
use crate::mortality::{conditional, q_id, q_ig, q_key};
use crate::oracle;
use crate::params::{KeyKind, SemParams};
use crate::simulate::{generate_synthetic_panel, simulate_id_hitting_exact, simulate_ig, KeyCurve, SyntheticCohort};
use crate::smooth::{center, FunctionalDataSet};
use crate::special::norm_quantile;
use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

/// Outcome of a single oracle check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    /// The measured error (whatever quantity the check bounds).
    pub measured: f64,
    pub threshold: f64,
    pub detail: String,
}

impl CheckResult {
    pub fn line(&self) -> String {
        format!(
            "{}  {} (measured {:.3e}, threshold {:.3e}) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.threshold,
            self.detail
        )
    }
}

/// |q_ig(Λ) - (1 - F_IG(x; Λ, σΛ²))| over seeded random (Λ, σ, x) triples.
///
/// The mortality function under test is injectable so fault-injection tests
/// can verify the check actually bites.
pub fn check_ig_identity(
    seed: u64,
    n_triples: usize,
    q_fn: &dyn Fn(f64, &SemParams) -> f64,
) -> CheckResult {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_triples {
        let x = rng.gen_range(1.0..1e4);
        let sigma = rng.gen_range(1e-4..1e-2);
        let p = SemParams::new(x, -0.25, sigma, 20, 110).unwrap();
        let lambda = rng.gen_range(0.0..5.0 * x);
        let lhs = q_fn(lambda, &p);
        let rhs = if lambda == 0.0 {
            0.0
        } else {
            oracle::ig_survival(x, lambda, sigma * lambda * lambda)
        };
        worst = worst.max((lhs - rhs).abs());
    }
    CheckResult {
        name: "IG closed-form identity".into(),
        pass: worst < 1e-10,
        measured: worst,
        threshold: 1e-10,
        detail: format!("{n_triples} random (x, sigma, lambda) triples"),
    }
}

/// The ten constant-coefficient configurations used for the first-passage
/// Monte Carlo check.
pub const ID_MC_CONFIGS: [(f64, f64, f64, f64); 10] = [
    (1.0, -0.2, 1.0, 5.0),
    (1.0, -0.5, 1.0, 2.0),
    (2.0, -0.3, 1.5, 4.0),
    (5.0, -1.0, 2.0, 3.0),
    (10.0, -2.0, 3.0, 2.5),
    (1.0, -0.1, 0.5, 8.0),
    (3.0, -0.6, 1.2, 6.0),
    (0.5, -0.25, 0.8, 1.5),
    (8.0, -1.5, 2.5, 4.5),
    (1000.0, -45.0, 60.0, 20.0),
];

/// Exact first-passage sampling versus the diffusion closed form; passes
/// when at least 9 of the 10 configurations agree within 3 binomial SE.
pub fn check_id_first_passage(seed: u64, n_paths: usize) -> CheckResult {
    let mut hits = 0;
    let mut worst_z: f64 = 0.0;
    for (i, &(x, mu, v, t)) in ID_MC_CONFIGS.iter().enumerate() {
        let est = simulate_id_hitting_exact(x, mu, v, &[t], n_paths, seed.wrapping_add(i as u64))
            .expect("valid config")[0];
        let kappa = 2.0 * mu / (v * v);
        let p = SemParams::new(x, kappa, 0.001, 20, 110).unwrap();
        let q = q_id(mu * t, &p).unwrap();
        let z = (est.p_hat - q).abs() / est.se.max(1e-300);
        worst_z = worst_z.max(z);
        if z < 3.0 {
            hits += 1;
        }
    }
    CheckResult {
        name: "ID closed form vs Brownian first passage".into(),
        pass: hits >= 9,
        measured: worst_z,
        threshold: 3.0,
        detail: format!("{hits}/10 configurations within 3 SE at n = {n_paths}"),
    }
}

/// Direct inverse-Gaussian draws versus the IG closed form at five ages
/// under the default constants.
pub fn check_ig_simulator(seed: u64, n_paths: usize) -> CheckResult {
    let p = SemParams::default();
    let lambda = |t: f64| (0.085 * t).exp() + 0.6 * t - 1.0;
    let ages = [40.0, 60.0, 75.0, 85.0, 100.0];
    let ests = simulate_ig(&p, lambda, &ages, n_paths, seed).expect("valid config");
    let mut worst_z: f64 = 0.0;
    let mut pass = true;
    for est in &ests {
        let q = q_ig(lambda(est.t), &p).unwrap();
        let z = (est.p_hat - q).abs() / est.se.max(1e-300);
        worst_z = worst_z.max(z);
        if z >= 3.0 {
            pass = false;
        }
    }
    CheckResult {
        name: "IG simulator vs closed form".into(),
        pass,
        measured: worst_z,
        threshold: 3.0,
        detail: format!("5 ages at defaults, n = {n_paths}"),
    }
}

/// Forward-generate conditional mortality from random key curves, invert,
/// re-evaluate: mortality must round-trip to 1e-10 and keys to 1e-7
/// relative (below the cap threshold).
pub fn check_inversion_round_trip(seed: u64, curves_per_kind: usize) -> CheckResult {
    let p = SemParams::default();
    let s = p.cond_age();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut worst_dq: f64 = 0.0;
    let mut worst_key: f64 = 0.0;

    let mut run = |curve: KeyCurve| {
        let kind = curve.kind();
        let key_fn = |t: f64| curve.eval(t);
        let q_s = q_key(kind, key_fn(s as f64), &p).unwrap();
        let cond: Vec<f64> = (s..=p.terminal_age())
            .map(|t| conditional(q_key(kind, key_fn(t as f64), &p).unwrap(), q_s).unwrap())
            .collect();
        let anchor = key_fn(s as f64);
        let est = invert_pointwise(&cond, s, anchor, kind, &p, 0).unwrap();
        let q_s_hat = q_key(kind, est.key_at_s, &p).unwrap();
        for (i, (&t, &k_hat)) in est.ages.iter().zip(&est.values).enumerate() {
            if cond[i] >= CAP_Q {
                continue;
            }
            let back = conditional(q_key(kind, k_hat, &p).unwrap(), q_s_hat).unwrap();
            worst_dq = worst_dq.max((back - cond[i]).abs());
            let truth = key_fn(t as f64);
            worst_key = worst_key.max((k_hat - truth).abs() / truth.abs().max(1e-12));
        }
    };

    // Families are drawn so the mortality level stays informative over the
    // whole age range (no saturation at the cap, where the key is no longer
    // identified by the data to full precision).
    for _ in 0..curves_per_kind {
        run(KeyCurve::IgFamily { a: rng.gen_range(0.055..0.075), b: rng.gen_range(0.2..0.8) });
    }
    for _ in 0..curves_per_kind {
        run(KeyCurve::IdAffine { level: rng.gen_range(450.0..750.0), slope: rng.gen_range(2.0..5.0) });
    }

    CheckResult {
        name: "inversion round trip".into(),
        pass: worst_dq < 1e-10 && worst_key < 1e-7,
        measured: worst_dq,
        threshold: 1e-10,
        detail: format!("max relative key error {worst_key:.3e} (threshold 1e-7), {curves_per_kind} curves per kind"),
    }
}

/// Synthetic functional panel with three planted orthonormal modes of known
/// variances; used by the FPCA checks.
pub fn planted_modes_fds(m: usize, variances: [f64; 3], seed: u64) -> (FunctionalDataSet, DMatrix<f64>) {
    let basis = make_basis(20.0, 110.0, 10, 4).unwrap();
    let l = basis.len();
    let w = basis.gram().clone();
    // W-orthonormal mode coefficients via Gram-Schmidt on fixed seeds.
    let raw = [
        DVector::from_fn(l, |i, _| 1.0 + (i as f64 * 0.55).sin()),
        DVector::from_fn(l, |i, _| (i as f64) - 4.5),
        DVector::from_fn(l, |i, _| (i as f64 * 1.3).cos()),
    ];
    let mut modes: Vec<DVector<f64>> = Vec::new();
    for r in raw {
        let mut v = r;
        for e in &modes {
            let proj = (v.transpose() * &w * e)[(0, 0)];
            v -= e * proj;
        }
        let norm = (v.transpose() * &w * &v)[(0, 0)].sqrt();
        modes.push(v / norm);
    }
    let mut rng = StdRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(m);
    let mut scores = DMatrix::zeros(m, 3);
    for c in 0..m {
        let mut coeffs = DVector::zeros(l);
        for (j, mode) in modes.iter().enumerate() {
            let z = variances[j].sqrt() * normal.sample(&mut rng);
            scores[(c, j)] = z;
            coeffs += mode * z;
        }
        rows.push(coeffs);
    }
    let fds = center(basis, (0..m as i32).collect(), &rows).unwrap();
    (fds, scores)
}

/// Basis-space FPCA eigenvalues versus the grid-discretised covariance
/// route, plus the orthonormality residual.
pub fn check_fpca_grid(seed: u64) -> CheckResult {
    let (fds, _) = planted_modes_fds(200, [4.0, 1.0, 0.25], seed);
    let model = fit_fpca(&fds, KeyKind::InverseGaussian, 0.995).unwrap();
    let grid = oracle::grid_covariance_eigvals(&fds, 0.25, 3);
    let mut worst_rel: f64 = 0.0;
    for j in 0..3 {
        let rel = (model.eigvals[j] - grid[j]).abs() / grid[j];
        worst_rel = worst_rel.max(rel);
    }
    let btwb = model.eig_coeffs.transpose() * fds.basis.gram() * &model.eig_coeffs;
    let mut ortho: f64 = 0.0;
    for i in 0..model.n_components() {
        for j in 0..model.n_components() {
            let expect = if i == j { 1.0 } else { 0.0 };
            ortho = ortho.max((btwb[(i, j)] - expect).abs());
        }
    }
    CheckResult {
        name: "FPCA basis-space vs grid oracle".into(),
        pass: worst_rel < 0.005 && ortho < 1e-8,
        measured: worst_rel,
        threshold: 0.005,
        detail: format!("orthonormality residual {ortho:.3e} (threshold 1e-8), grid step 0.25"),
    }
}

/// Forecast recursion versus the closed-form AR(1), MA(1), and random-walk
/// formulas.
pub fn check_arima_closed_forms(seed: u64) -> CheckResult {
    let mut rng = StdRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let series: Vec<f64> = (0..80).map(|_| 2.0 + normal.sample(&mut rng)).collect();
    let mut worst: f64 = 0.0;

    // AR(1).
    let (phi, c, sigma2) = (0.7, 0.9, 1.44);
    let spec = ArimaSpec { p: 1, d: 0, q: 0, phi: vec![phi], theta_ma: vec![], intercept: c, sigma2, aicc: 0.0, fallback: false };
    let fc = forecast(&spec, &series, 10, &[0.95]).unwrap();
    let mu = c / (1.0 - phi);
    let last = *series.last().unwrap();
    let z = norm_quantile(0.975);
    let iv = fc.interval(0.95).unwrap();
    for h in 1..=10usize {
        let point = mu + phi.powi(h as i32) * (last - mu);
        worst = worst.max((fc.points[h - 1] - point).abs());
        let var = sigma2 * (1.0 - phi.powi(2 * h as i32)) / (1.0 - phi * phi);
        worst = worst.max(((iv.upper[h - 1] - fc.points[h - 1]) - z * var.sqrt()).abs());
    }

    // Random walk with drift.
    let drift = 0.4;
    let spec = ArimaSpec { p: 0, d: 1, q: 0, phi: vec![], theta_ma: vec![], intercept: drift, sigma2, aicc: 0.0, fallback: false };
    let fc = forecast(&spec, &series, 10, &[0.95]).unwrap();
    let iv = fc.interval(0.95).unwrap();
    for h in 1..=10usize {
        worst = worst.max((fc.points[h - 1] - (last + drift * h as f64)).abs());
        let var = sigma2 * h as f64;
        worst = worst.max(((iv.upper[h - 1] - fc.points[h - 1]) - z * var.sqrt()).abs());
    }

    // MA(1): flat beyond one step, variance jumps once.
    let theta = 0.45;
    let spec =
        ArimaSpec { p: 0, d: 0, q: 1, phi: vec![], theta_ma: vec![theta], intercept: 2.0, sigma2, aicc: 0.0, fallback: false };
    let fc = forecast(&spec, &series, 5, &[0.95]).unwrap();
    let iv = fc.interval(0.95).unwrap();
    for h in 2..=5usize {
        worst = worst.max((fc.points[h - 1] - 2.0).abs());
        let var = sigma2 * (1.0 + theta * theta);
        worst = worst.max(((iv.upper[h - 1] - fc.points[h - 1]) - z * var.sqrt()).abs());
    }

    CheckResult {
        name: "ARIMA recursion vs closed forms".into(),
        pass: worst < 1e-10,
        measured: worst,
        threshold: 1e-10,
        detail: "AR(1), random walk with drift, MA(1)".into(),
    }
}

/// Pipeline smoke oracle: a constant-parameter panel must produce an FPCA
/// model whose eigenvalues are numerically zero.
pub fn check_degenerate_panel(_seed: u64) -> CheckResult {
    let p = SemParams::default();
    let specs: Vec<SyntheticCohort> = (0..10)
        .map(|i| SyntheticCohort { cohort: 1781 + i, curve: KeyCurve::IgFamily { a: 0.085, b: 0.6 } })
        .collect();
    let panel = generate_synthetic_panel(&specs, &p, None).unwrap();
    let s = p.cond_age();
    let basis = make_basis(s as f64, p.terminal_age() as f64, 20, 4).unwrap();
    let mut rows = Vec::new();
    for curve in panel.curves() {
        let anchor = anchor_key_at_s(curve, KeyKind::InverseGaussian, &p).unwrap();
        let cond = crate::hmd::conditional_data(curve, s).unwrap();
        let est = invert_pointwise(&cond, s, anchor, KeyKind::InverseGaussian, &p, curve.cohort()).unwrap();
        let fit = crate::smooth::fit_key_coeffs(&est, &basis).unwrap();
        rows.push(fit.coeffs);
    }
    let fds = center(basis, panel.cohorts(), &rows).unwrap();
    let model = fit_fpca(&fds, KeyKind::InverseGaussian, 0.995).unwrap();
    let top = model.eigvals.first().copied().unwrap_or(0.0);
    CheckResult {
        name: "constant panel has no cross-cohort variation".into(),
        pass: model.degenerate || top < 1e-10,
        measured: top,
        threshold: 1e-10,
        detail: "10 identical synthetic cohorts".into(),
    }
}

/// Runs the full oracle suite.
pub fn run_all(seed: u64, n_paths: usize) -> Vec<CheckResult> {
    vec![
        check_ig_identity(seed, 1000, &|l, p| q_ig(l, p).unwrap()),
        check_id_first_passage(seed.wrapping_add(1), n_paths),
        check_ig_simulator(seed.wrapping_add(2), n_paths),
        check_inversion_round_trip(seed.wrapping_add(3), 20),
        check_fpca_grid(seed.wrapping_add(4)),
        check_arima_closed_forms(seed.wrapping_add(5)),
        check_degenerate_panel(seed.wrapping_add(6)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ig_identity_holds_for_the_real_mortality_function() {
        let r = check_ig_identity(40, 200, &|l, p| q_ig(l, p).unwrap());
        assert!(r.pass, "{}", r.line());
    }

    #[test]
    fn ig_identity_detects_a_corrupted_mortality_function() {
        // Fault injection: a sign flip in the subtracted term must trip the
        // oracle.
        let corrupted = |l: f64, p: &SemParams| {
            if l == 0.0 {
                return 0.0;
            }
            let a = (p.sigma() / p.x()).sqrt();
            let first = crate::special::norm_cdf(a * (l - p.x()));
            let second =
                (2.0 * p.sigma() * l + crate::special::log_norm_cdf(-a * (l + p.x()))).exp();
            (first + second).clamp(0.0, 1.0)
        };
        let r = check_ig_identity(40, 200, &corrupted);
        assert!(!r.pass, "corrupted function must fail the identity check");
    }

    #[test]
    fn small_path_counts_widen_bands_but_stay_consistent() {
        let r = check_id_first_passage(7, 2000);
        assert!(r.pass, "{}", r.line());
    }

    #[test]
    fn arima_closed_forms_check_passes() {
        let r = check_arima_closed_forms(3);
        assert!(r.pass, "{}", r.line());
    }

    #[test]
    fn inversion_round_trip_check_passes() {
        let r = check_inversion_round_trip(5, 5);
        assert!(r.pass, "{}", r.line());
    }

    #[test]
    fn degenerate_panel_check_passes() {
        let r = check_degenerate_panel(0);
        assert!(r.pass, "{}", r.line());
    }
}
