//! Stochastic simulators for validating the closed forms, plus synthetic
//! cohort-panel generation.
//!
//! Simulation is chunked, each chunk drawing from an independent ChaCha
//! stream derived from the master seed, and chunk counts are summed, so the
//! result is identical no matter how the chunks are scheduled.

use crate::hmd::{CohortMortality, CohortPanel, HmdError};
use crate::mortality::{q_key, MortalityError};
use crate::params::{KeyKind, SemParams};
use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution, InverseGaussian, Normal};
use rayon::prelude::*;
use thiserror::Error;

const CHUNK: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("constant-mode drift must be negative, got {0}")]
    NonNegativeDrift(f64),
    #[error("volatility must be positive, got {0}")]
    NonPositiveVolatility(f64),
    #[error("initial level must be positive, got {0}")]
    NonPositiveStart(f64),
    #[error("need at least one path")]
    NoPaths,
    #[error("time step must be positive, got {0}")]
    BadTimeStep(f64),
    #[error("inadmissible key-curve parameters: {0}")]
    InadmissibleParams(String),
    #[error(transparent)]
    Mortality(#[from] MortalityError),
    #[error(transparent)]
    Hmd(#[from] HmdError),
}

/// A Monte Carlo probability estimate with its binomial standard error.
#[derive(Debug, Clone, Copy)]
pub struct McEstimate {
    pub t: f64,
    pub p_hat: f64,
    pub se: f64,
}

fn estimate(count: u64, n: usize, t: f64) -> McEstimate {
    let p_hat = count as f64 / n as f64;
    let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
    McEstimate { t, p_hat, se }
}

fn chunk_rng(seed: u64, chunk: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// First-passage probabilities `P(τ ≤ t)` of the constant-coefficient
/// diffusion `X_s = x + μ s + v W_s`, with passage times drawn exactly from
/// the inverse-Gaussian first-passage law (no discretisation bias).
pub fn simulate_id_hitting_exact(
    x: f64,
    mu: f64,
    v: f64,
    ages: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McEstimate>, SimError> {
    if !(mu < 0.0) {
        return Err(SimError::NonNegativeDrift(mu));
    }
    if !(v > 0.0) {
        return Err(SimError::NonPositiveVolatility(v));
    }
    if !(x > 0.0) {
        return Err(SimError::NonPositiveStart(x));
    }
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let mean = x / (-mu);
    let shape = x * x / (v * v);
    let dist = InverseGaussian::new(mean, shape).expect("validated parameters");

    let n_chunks = n_paths.div_ceil(CHUNK);
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let in_chunk = CHUNK.min(n_paths - c * CHUNK);
            let mut counts = vec![0u64; ages.len()];
            for _ in 0..in_chunk {
                let tau: f64 = dist.sample(&mut rng);
                for (k, &t) in ages.iter().enumerate() {
                    if tau <= t {
                        counts[k] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; ages.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(ages.iter().zip(counts).map(|(&t, c)| estimate(c, n_paths, t)).collect())
}

/// Euler scheme with Brownian-bridge crossing correction for time-varying
/// drift and volatility. Exists to cover the general model; the exact
/// sampler above is preferred for constant coefficients.
pub fn simulate_id_hitting_euler(
    x: f64,
    drift: impl Fn(f64) -> f64 + Sync,
    vol: impl Fn(f64) -> f64 + Sync,
    ages: &[f64],
    step: f64,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McEstimate>, SimError> {
    if !(x > 0.0) {
        return Err(SimError::NonPositiveStart(x));
    }
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    if !(step > 0.0) {
        return Err(SimError::BadTimeStep(step));
    }
    let t_max = ages.iter().cloned().fold(0.0, f64::max);
    let n_steps = (t_max / step).ceil() as usize;

    let n_chunks = n_paths.div_ceil(CHUNK);
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c as u64);
            let normal = Normal::new(0.0, 1.0).unwrap();
            let uniform = Uniform::new(0.0f64, 1.0);
            let in_chunk = CHUNK.min(n_paths - c * CHUNK);
            let mut counts = vec![0u64; ages.len()];
            for _ in 0..in_chunk {
                let mut pos = x;
                let mut crossing_time = f64::INFINITY;
                for s in 0..n_steps {
                    let t0 = s as f64 * step;
                    let u = drift(t0);
                    let v = vol(t0);
                    let next = pos + u * step + v * step.sqrt() * normal.sample(&mut rng);
                    if next <= 0.0 {
                        crossing_time = t0 + step;
                        break;
                    }
                    // Brownian bridge: probability the path dipped below
                    // zero between the endpoints.
                    let p_cross = (-2.0 * pos * next / (v * v * step)).exp();
                    if rng.sample(uniform) < p_cross {
                        crossing_time = t0 + step;
                        break;
                    }
                    pos = next;
                }
                for (k, &t) in ages.iter().enumerate() {
                    if crossing_time <= t {
                        counts[k] += 1;
                    }
                }
            }
            counts
        })
        .reduce(
            || vec![0u64; ages.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    Ok(ages.iter().zip(counts).map(|(&t, c)| estimate(c, n_paths, t)).collect())
}

/// `P(Y_t ≥ x)` for the inverse-Gaussian energy-loss process, sampling
/// `Y_t` directly as inverse-Gaussian with mean `Λ(t)` and shape `σΛ(t)²`
/// (exact in time; the subordinator is increasing, so `{τ ≤ t} = {Y_t ≥ x}`).
pub fn simulate_ig(
    p: &SemParams,
    lambda: impl Fn(f64) -> f64 + Sync,
    ages: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<McEstimate>, SimError> {
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let mut out = Vec::with_capacity(ages.len());
    for (k, &t) in ages.iter().enumerate() {
        let level = lambda(t);
        if level < 0.0 {
            return Err(SimError::InadmissibleParams(format!("Lambda({t}) = {level} < 0")));
        }
        if level == 0.0 {
            out.push(McEstimate { t, p_hat: 0.0, se: 0.0 });
            continue;
        }
        let dist = InverseGaussian::new(level, p.sigma() * level * level)
            .map_err(|e| SimError::InadmissibleParams(format!("{e:?}")))?;
        let x = p.x();
        let n_chunks = n_paths.div_ceil(CHUNK);
        let count: u64 = (0..n_chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = chunk_rng(seed.wrapping_add(k as u64), c as u64);
                let in_chunk = CHUNK.min(n_paths - c * CHUNK);
                let mut cnt = 0u64;
                for _ in 0..in_chunk {
                    let y: f64 = dist.sample(&mut rng);
                    if y >= x {
                        cnt += 1;
                    }
                }
                cnt
            })
            .sum();
        out.push(estimate(count, n_paths, t));
    }
    Ok(out)
}

/// Draws of the process increment over `[0, t]` split at `s`, using the
/// independent-increments parametrisation (mean `ΔΛ`, shape `σ(ΔΛ)²`).
pub fn sample_ig_split(
    p: &SemParams,
    lambda_s: f64,
    lambda_t: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    if lambda_t < lambda_s || lambda_s < 0.0 {
        return Err(SimError::InadmissibleParams("Lambda must be nondecreasing".into()));
    }
    let d1 = InverseGaussian::new(lambda_s, p.sigma() * lambda_s * lambda_s)
        .map_err(|e| SimError::InadmissibleParams(format!("{e:?}")))?;
    let incr = lambda_t - lambda_s;
    let d2 = InverseGaussian::new(incr, p.sigma() * incr * incr)
        .map_err(|e| SimError::InadmissibleParams(format!("{e:?}")))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| d1.sample(&mut rng) + d2.sample(&mut rng)).collect())
}

/// Parametric key-function families used as synthetic-data generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeyCurve {
    /// `Λ(t) = e^{a t} + b t - 1` (nonnegative increasing, `Λ(0) = 0`).
    IgFamily { a: f64, b: f64 },
    /// `M(t) = -(level + slope · t)`, a negative affine drift integral.
    IdAffine { level: f64, slope: f64 },
}

impl KeyCurve {
    pub fn kind(&self) -> KeyKind {
        match self {
            KeyCurve::IgFamily { .. } => KeyKind::InverseGaussian,
            KeyCurve::IdAffine { .. } => KeyKind::Diffusion,
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            KeyCurve::IgFamily { a, b } => (a * t).exp() + b * t - 1.0,
            KeyCurve::IdAffine { level, slope } => -(level + slope * t),
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        match *self {
            KeyCurve::IgFamily { a, b } => {
                if a < 0.0 || b < 0.0 || (a == 0.0 && b == 0.0) {
                    return Err(SimError::InadmissibleParams(format!(
                        "IG family needs a, b >= 0 and not both zero, got a={a}, b={b}"
                    )));
                }
            }
            KeyCurve::IdAffine { level, slope } => {
                if !(level > 0.0) || slope < 0.0 {
                    return Err(SimError::InadmissibleParams(format!(
                        "ID family needs level > 0 and slope >= 0, got level={level}, slope={slope}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One synthetic cohort: a birth year and the key curve that generates it.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticCohort {
    pub cohort: i32,
    pub curve: KeyCurve,
}

/// Optional binomial sampling noise for synthetic panels.
#[derive(Debug, Clone, Copy)]
pub struct PanelNoise {
    pub cohort_size: u64,
    pub seed: u64,
}

/// Builds a cohort panel from closed-form mortality curves, optionally
/// degraded by binomial sampling noise at a given cohort size.
pub fn generate_synthetic_panel(
    specs: &[SyntheticCohort],
    p: &SemParams,
    noise: Option<PanelNoise>,
) -> Result<CohortPanel, SimError> {
    let w = p.terminal_age();
    let mut curves = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.curve.validate()?;
        let kind = spec.curve.kind();
        let mut q = Vec::with_capacity(w as usize + 1);
        for t in 0..=w {
            let key = spec.curve.eval(t as f64);
            let value = if kind == KeyKind::InverseGaussian && key == 0.0 {
                0.0
            } else {
                q_key(kind, key, p)?
            };
            q.push(value);
        }
        if let Some(noise) = noise {
            q = binomial_thin(&q, noise.cohort_size, noise.seed, spec.cohort);
        }
        curves.push(CohortMortality::new(spec.cohort, q)?);
    }
    Ok(CohortPanel::new(*p, curves)?)
}

/// Replaces a closed-form curve by the empirical curve of a finite cohort:
/// survivors are thinned age by age with the implied conditional death
/// probabilities.
fn binomial_thin(q: &[f64], cohort_size: u64, seed: u64, cohort: i32) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ (cohort as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n0 = cohort_size;
    let mut alive = n0;
    let mut out = Vec::with_capacity(q.len());
    out.push(1.0 - alive as f64 / n0 as f64);
    for t in 1..q.len() {
        if alive > 0 && q[t - 1] < 1.0 {
            let p_die = ((q[t] - q[t - 1]) / (1.0 - q[t - 1])).clamp(0.0, 1.0);
            let deaths = Binomial::new(alive, p_die).unwrap().sample(&mut rng);
            alive -= deaths;
        }
        out.push(1.0 - alive as f64 / n0 as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mortality::{q_id, q_ig};
    use crate::oracle;

    #[test]
    fn exact_sampler_matches_closed_form() {
        let (x, mu, v) = (1.0, -0.2, 1.0);
        let n = 200_000;
        let est = simulate_id_hitting_exact(x, mu, v, &[5.0], n, 12345).unwrap();
        let p = SemParams::new(x, 2.0 * mu / (v * v), 0.001, 20, 110).unwrap();
        let q = q_id(mu * 5.0, &p).unwrap();
        assert!(
            (est[0].p_hat - q).abs() < 3.0 * est[0].se,
            "p_hat {} vs q {} (se {})",
            est[0].p_hat,
            q,
            est[0].se
        );
    }

    #[test]
    fn zero_time_has_zero_probability() {
        let est = simulate_id_hitting_exact(1.0, -0.2, 1.0, &[1e-12], 10_000, 7).unwrap();
        assert_eq!(est[0].p_hat, 0.0);
    }

    #[test]
    fn doubling_paths_shrinks_standard_error() {
        let a = simulate_id_hitting_exact(1.0, -0.3, 1.0, &[3.0], 50_000, 11).unwrap();
        let b = simulate_id_hitting_exact(1.0, -0.3, 1.0, &[3.0], 100_000, 11).unwrap();
        let ratio = a[0].se / b[0].se;
        assert!((ratio - std::f64::consts::SQRT_2).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn positive_drift_is_rejected_in_constant_mode() {
        assert!(matches!(
            simulate_id_hitting_exact(1.0, 0.1, 1.0, &[1.0], 100, 1),
            Err(SimError::NonNegativeDrift(_))
        ));
    }

    #[test]
    fn euler_agrees_with_exact_sampler() {
        let (x, mu, v) = (1.0, -0.25, 1.0);
        let ages = [2.0, 5.0];
        let exact = simulate_id_hitting_exact(x, mu, v, &ages, 120_000, 99).unwrap();
        let euler =
            simulate_id_hitting_euler(x, |_| mu, |_| v, &ages, 0.002, 120_000, 100).unwrap();
        for (e, u) in exact.iter().zip(&euler) {
            let combined = (e.se * e.se + u.se * u.se).sqrt();
            assert!(
                (e.p_hat - u.p_hat).abs() < 3.0 * combined,
                "exact {} vs euler {} at t {}",
                e.p_hat,
                u.p_hat,
                e.t
            );
        }
    }

    #[test]
    fn ig_simulator_matches_closed_form() {
        let p = SemParams::default();
        let est = simulate_ig(&p, |_| 900.0, &[50.0], 200_000, 31).unwrap();
        let q = q_ig(900.0, &p).unwrap();
        assert!((est[0].p_hat - q).abs() < 3.0 * est[0].se, "{} vs {}", est[0].p_hat, q);
    }

    #[test]
    fn zero_level_needs_no_sampling() {
        let p = SemParams::default();
        let est = simulate_ig(&p, |_| 0.0, &[10.0], 100, 3).unwrap();
        assert_eq!(est[0].p_hat, 0.0);
        assert_eq!(est[0].se, 0.0);
    }

    #[test]
    fn ig_moments_match_theory() {
        let p = SemParams::default();
        let lambda = 900.0;
        let n = 1_000_000;
        let dist = InverseGaussian::new(lambda, p.sigma() * lambda * lambda).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        let samples: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((mean - lambda).abs() / lambda < 0.01, "mean {mean}");
        let var_theory = lambda / p.sigma();
        assert!((var - var_theory).abs() / var_theory < 0.01, "var {var} vs {var_theory}");
    }

    #[test]
    fn increment_split_has_the_same_distribution() {
        // Y_t as one draw versus two independent increments over [0,s] and
        // [s,t]: two-sample KS below the 1% critical value.
        let p = SemParams::default();
        let (l_s, l_t) = (400.0, 900.0);
        let n = 100_000;
        let dist = InverseGaussian::new(l_t, p.sigma() * l_t * l_t).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(555);
        let mut direct: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let mut split = sample_ig_split(&p, l_s, l_t, n, 556).unwrap();
        let d = oracle::ks_two_sample(&mut direct, &mut split);
        let critical = 1.628 * ((2 * n) as f64 / (n * n) as f64).sqrt();
        assert!(d < critical, "KS {d} vs critical {critical}");
    }

    #[test]
    fn synthetic_panel_matches_closed_form_without_noise() {
        let p = SemParams::default();
        let specs = vec![
            SyntheticCohort { cohort: 1, curve: KeyCurve::IgFamily { a: 0.085, b: 0.6 } },
            SyntheticCohort { cohort: 2, curve: KeyCurve::IgFamily { a: 0.084, b: 0.62 } },
        ];
        let panel = generate_synthetic_panel(&specs, &p, None).unwrap();
        let curve = panel.get(1).unwrap();
        assert_eq!(curve.w_avail(), 110);
        for t in 0..=110u32 {
            let lam = (0.085 * t as f64).exp() + 0.6 * t as f64 - 1.0;
            let expect = q_ig(lam, &p).unwrap();
            assert_eq!(curve.q()[t as usize], expect);
        }
    }

    #[test]
    fn noisy_panel_stays_within_binomial_bands() {
        let p = SemParams::default();
        let specs =
            vec![SyntheticCohort { cohort: 1, curve: KeyCurve::IgFamily { a: 0.085, b: 0.6 } }];
        let n = 100_000u64;
        let panel =
            generate_synthetic_panel(&specs, &p, Some(PanelNoise { cohort_size: n, seed: 77 })).unwrap();
        let clean = generate_synthetic_panel(&specs, &p, None).unwrap();
        let noisy_q = panel.get(1).unwrap().q();
        let clean_q = clean.get(1).unwrap().q();
        let mut violations = 0;
        for t in 0..=110usize {
            let se = (clean_q[t] * (1.0 - clean_q[t]) / n as f64).sqrt();
            if (noisy_q[t] - clean_q[t]).abs() > 3.0 * se + 1e-12 {
                violations += 1;
            }
        }
        assert!(violations <= 1, "{violations} ages outside 3 SE");
    }

    #[test]
    fn panel_generation_is_deterministic() {
        let p = SemParams::default();
        let specs =
            vec![SyntheticCohort { cohort: 1, curve: KeyCurve::IgFamily { a: 0.08, b: 0.5 } }];
        let noise = Some(PanelNoise { cohort_size: 1000, seed: 9 });
        let a = generate_synthetic_panel(&specs, &p, noise).unwrap();
        let b = generate_synthetic_panel(&specs, &p, noise).unwrap();
        assert_eq!(a.get(1).unwrap().q(), b.get(1).unwrap().q());
    }

    #[test]
    fn inadmissible_families_are_rejected() {
        let p = SemParams::default();
        let bad = vec![SyntheticCohort { cohort: 1, curve: KeyCurve::IgFamily { a: -0.1, b: 0.5 } }];
        assert!(generate_synthetic_panel(&bad, &p, None).is_err());
        let bad_id =
            vec![SyntheticCohort { cohort: 1, curve: KeyCurve::IdAffine { level: -5.0, slope: 1.0 } }];
        assert!(generate_synthetic_panel(&bad_id, &p, None).is_err());
    }
}
