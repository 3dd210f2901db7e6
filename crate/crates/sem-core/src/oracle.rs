//! Independent reference implementations used to cross-check the closed
//! forms.
//!
//! Everything here deliberately avoids the code paths of [`crate::special`]
//! and [`crate::mortality`]: the normal CDF is evaluated by a Maclaurin
//! series / Lentz continued fraction instead of `erfc`, and the
//! inverse-Gaussian distribution function is the textbook formula rather
//! than the survival-form rearrangement the mortality module uses. Checks
//! built on these routines therefore exercise genuinely different
//! arithmetic.

use std::f64::consts::PI;

/// Reference standard normal CDF.
///
/// Maclaurin series `Φ(z) = 1/2 + φ(z)·Σ z^{2k+1}/(2k+1)!!` for `|z| ≤ 1`,
/// Mills-ratio continued fraction for the tails.
pub fn phi_ref(z: f64) -> f64 {
    if z == 0.0 {
        return 0.5;
    }
    let az = z.abs();
    if az <= 1.0 {
        let val = pdf(az) * odd_series(az);
        if z > 0.0 {
            0.5 + val
        } else {
            0.5 - val
        }
    } else if z < 0.0 {
        pdf(az) * mills_cf(az)
    } else {
        1.0 - pdf(az) * mills_cf(az)
    }
}

/// Reference `ln Φ(z)`, finite for arbitrarily negative `z`.
pub fn ln_phi_ref(z: f64) -> f64 {
    if z >= -1.0 {
        phi_ref(z).ln()
    } else {
        let t = -z;
        -0.5 * t * t - 0.5 * (2.0 * PI).ln() + mills_cf(t).ln()
    }
}

fn pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

fn odd_series(az: f64) -> f64 {
    let mut term = az;
    let mut sum = az;
    let mut k = 0u32;
    loop {
        k += 1;
        term *= az * az / (2 * k + 1) as f64;
        sum += term;
        if term < 1e-18 * sum || term == 0.0 || k > 200 {
            return sum;
        }
    }
}

/// Lentz evaluation of `Φ(-t)/φ(t) = 1/(t + 1/(t + 2/(t + 3/(t + ...))))`
/// for `t > 0`.
fn mills_cf(t: f64) -> f64 {
    let tiny = 1e-300;
    let mut f = tiny;
    let mut c = tiny;
    let mut d = 0.0;
    for n in 1..=1000u32 {
        let a = if n == 1 { 1.0 } else { (n - 1) as f64 };
        d = t + a * d;
        if d == 0.0 {
            d = tiny;
        }
        c = t + a / c;
        if c == 0.0 {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-17 {
            break;
        }
    }
    f
}

/// Inverse-Gaussian distribution function `F(y; μ, λ)` with mean `μ > 0` and
/// shape `λ > 0`, by the classical two-term formula.
pub fn ig_cdf(y: f64, mean: f64, shape: f64) -> f64 {
    assert!(mean > 0.0 && shape > 0.0 && y >= 0.0);
    if y == 0.0 {
        return 0.0;
    }
    let r = (shape / y).sqrt();
    let first = phi_ref(r * (y / mean - 1.0));
    let second = (2.0 * shape / mean + ln_phi_ref(-r * (y / mean + 1.0))).exp();
    (first + second).clamp(0.0, 1.0)
}

/// Survival function `P(Y > y)` of the inverse-Gaussian distribution,
/// computed as `1 - F` from [`ig_cdf`].
pub fn ig_survival(y: f64, mean: f64, shape: f64) -> f64 {
    1.0 - ig_cdf(y, mean, shape)
}

/// First-passage CDF `P(τ ≤ t)` of Brownian motion with drift:
/// `X_s = x + μ s + v W_s` started at `x > 0`, absorbed at zero, `μ < 0`.
pub fn brownian_fp_cdf(x: f64, mu: f64, v: f64, t: f64) -> f64 {
    assert!(x > 0.0 && v > 0.0);
    if t <= 0.0 {
        return 0.0;
    }
    let sd = v * t.sqrt();
    let first = phi_ref((-x - mu * t) / sd);
    let second = (-2.0 * mu * x / (v * v) + ln_phi_ref((-x + mu * t) / sd)).exp();
    (first + second).clamp(0.0, 1.0)
}

/// Covariance eigenvalues by direct grid discretisation, the independent
/// check route for the basis-space FPCA eigenproblem.
///
/// The sample covariance kernel is evaluated on a midpoint grid of step `dt`
/// and the eigenvalues of `K̂(t_i, t_j) · dt` approximate the integral
/// operator's spectrum without touching the Gram-matrix algebra.
pub fn grid_covariance_eigvals(fds: &crate::smooth::FunctionalDataSet, dt: f64, top: usize) -> Vec<f64> {
    let (lo, hi) = fds.basis.domain();
    let n = ((hi - lo) / dt).round() as usize;
    let m = fds.n_cohorts();
    let mut curves = nalgebra::DMatrix::zeros(m, n);
    for c in 0..m {
        for i in 0..n {
            let t = lo + (i as f64 + 0.5) * dt;
            curves[(c, i)] = fds.eval_centered(c, t).expect("grid point inside domain");
        }
    }
    let kernel = curves.transpose() * &curves * (dt / (m as f64 - 1.0));
    let eig = kernel.symmetric_eigen();
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
    vals.truncate(top);
    vals
}

/// Two-sample Kolmogorov–Smirnov statistic `sup |F̂_a - F̂_b|`.
pub fn ks_two_sample(a: &mut [f64], b: &mut [f64]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty());
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}
