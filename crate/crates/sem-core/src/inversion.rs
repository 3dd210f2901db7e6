//! Pointwise recovery of key-function values from empirical conditional
//! mortality.
//!
//! For fixed constants both mortality closed forms are continuous and
//! strictly monotone in the key, so the least-squares problem at each age has
//! the exact root of `q_kind(k) = target` as its minimiser whenever the
//! target is attainable. Roots are located by bracket expansion plus Brent's
//! method.

use crate::hmd::CohortMortality;
use crate::mortality::{q_key, MortalityError};
use crate::params::{KeyKind, SemParams};
use thiserror::Error;

/// Targets at or above this probability are capped to keep keys finite.
pub const CAP_Q: f64 = 1.0 - 1e-12;

/// Relative width at which the root bracket is considered converged.
const ROOT_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum InversionError {
    #[error("anchor age has q(S) = 1; conditioning is degenerate")]
    DegenerateAnchor,
    #[error("anchor age {s} beyond available data (w_avail = {w_avail})")]
    AnchorBeyondData { s: u32, w_avail: u32 },
    #[error("conditional mortality decreases beyond tolerance at ages {0:?}")]
    NonMonotoneCond(Vec<u32>),
    #[error("failed to bracket target probability {target} for {kind} key")]
    Bracket { kind: KeyKind, target: f64 },
    #[error(transparent)]
    Mortality(#[from] MortalityError),
}

/// Pointwise key estimates for one cohort over `ages`, with the anchor value
/// at the conditioning age and quality flags.
#[derive(Debug, Clone)]
pub struct KeyPointEstimates {
    pub cohort: i32,
    pub kind: KeyKind,
    pub ages: Vec<u32>,
    pub values: Vec<f64>,
    pub key_at_s: f64,
    /// Ages whose conditional mortality hit the cap threshold; the key there
    /// is the finite cap value, not a data-implied estimate.
    pub capped_ages: Vec<u32>,
    /// Ages where an inverse-Gaussian key decreases beyond tolerance.
    /// Flagged, never repaired.
    pub monotonicity_flags: Vec<u32>,
}

/// Solves the unconditional equation `q_kind(key) = target` for
/// `target ∈ [0, 1)`.
pub fn solve_key(kind: KeyKind, target: f64, p: &SemParams) -> Result<f64, InversionError> {
    debug_assert!((0.0..1.0).contains(&target) || target >= CAP_Q);
    let target = target.min(CAP_Q);
    if target <= 0.0 {
        return Ok(boundary_key(kind, p));
    }
    let f = |k: f64| q_key(kind, k, p).map(|q| q - target);
    let (mut lo, mut hi) = match kind {
        // q_id decreases in the key: certain death far left, none near zero.
        KeyKind::Diffusion => (-p.x() * 1e3, -p.x() * 1e-9),
        KeyKind::InverseGaussian => (0.0, p.x() * 1e3),
    };
    expand_bracket(&f, &mut lo, &mut hi, kind, target)?;
    Ok(brent(&f, lo, hi)?)
}

fn boundary_key(kind: KeyKind, p: &SemParams) -> f64 {
    match kind {
        KeyKind::Diffusion => -1e-8 * p.x(),
        KeyKind::InverseGaussian => 0.0,
    }
}

fn expand_bracket(
    f: &impl Fn(f64) -> Result<f64, MortalityError>,
    lo: &mut f64,
    hi: &mut f64,
    kind: KeyKind,
    target: f64,
) -> Result<(), InversionError> {
    for _ in 0..40 {
        let f_lo = f(*lo)?;
        let f_hi = f(*hi)?;
        if f_lo == 0.0 || f_hi == 0.0 || (f_lo < 0.0) != (f_hi < 0.0) {
            return Ok(());
        }
        match kind {
            KeyKind::Diffusion => {
                if f_lo < 0.0 {
                    *lo *= 10.0;
                } else {
                    *hi *= 0.1;
                }
            }
            KeyKind::InverseGaussian => {
                if f_hi < 0.0 {
                    *hi *= 10.0;
                } else {
                    // Target below q(lo) can only happen for lo > 0 anchors.
                    *lo *= 0.1;
                }
            }
        }
        if lo.abs() > 1e300 || hi.abs() > 1e300 {
            break;
        }
    }
    Err(InversionError::Bracket { kind, target })
}

/// Brent's method on a bracketing interval. Runs until the bracket collapses
/// to `ROOT_REL_TOL` relative width, which pins the key itself (not just the
/// probability residual).
fn brent(f: &impl Fn(f64) -> Result<f64, MortalityError>, mut a: f64, mut b: f64) -> Result<f64, MortalityError> {
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    debug_assert!((fa < 0.0) != (fb < 0.0), "brent requires a bracket");
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * ROOT_REL_TOL * b.abs().max(1e-300);
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() < tol || fa.abs() <= fb.abs() {
            d = m;
            e = m;
        } else {
            let s = fb / fa;
            let (mut p_num, mut q_den) = if a == c {
                // Secant step.
                (2.0 * m * s, 1.0 - s)
            } else {
                // Inverse quadratic interpolation.
                let q = fa / fc;
                let r = fb / fc;
                (s * (2.0 * m * q * (q - r) - (b - a) * (r - 1.0)), (q - 1.0) * (r - 1.0) * (s - 1.0))
            };
            if p_num > 0.0 {
                q_den = -q_den;
            } else {
                p_num = -p_num;
            }
            if 2.0 * p_num < (3.0 * m * q_den - (tol * q_den).abs()).min((e * q_den).abs()) {
                e = d;
                d = p_num / q_den;
            } else {
                d = m;
                e = m;
            }
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
        if (fb < 0.0) == (fc < 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Ok(b)
}

/// Anchor key value at the conditioning age, from the unconditional
/// mortality level there.
///
/// The conditional equation carries no information at `t = S` (both sides are
/// identically zero), so the anchor is estimated from `q_data(S)` directly; a
/// zero level maps to the domain-boundary clamp.
pub fn anchor_key_at_s(cm: &CohortMortality, kind: KeyKind, p: &SemParams) -> Result<f64, InversionError> {
    let s = p.cond_age();
    let q_s = cm
        .q_at(s)
        .ok_or(InversionError::AnchorBeyondData { s, w_avail: cm.w_avail() })?;
    if q_s >= 1.0 {
        return Err(InversionError::DegenerateAnchor);
    }
    solve_key(kind, q_s, p)
}

/// Recovers key values from a conditional-mortality vector starting at
/// `start_age`, anchored at `key_s`.
pub fn invert_pointwise(
    cond: &[f64],
    start_age: u32,
    key_s: f64,
    kind: KeyKind,
    p: &SemParams,
    cohort: i32,
) -> Result<KeyPointEstimates, InversionError> {
    let bad: Vec<u32> = cond
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0] - 1e-9)
        .map(|(i, _)| start_age + i as u32 + 1)
        .collect();
    if !bad.is_empty() {
        return Err(InversionError::NonMonotoneCond(bad));
    }

    let q_s = q_key(kind, key_s, p)?;
    let mut values = Vec::with_capacity(cond.len());
    let mut ages = Vec::with_capacity(cond.len());
    let mut capped = Vec::new();
    for (i, &c) in cond.iter().enumerate() {
        let t = start_age + i as u32;
        let k = if c <= 0.0 {
            key_s
        } else {
            let target = c * (1.0 - q_s) + q_s;
            if target >= CAP_Q {
                capped.push(t);
            }
            solve_key(kind, target, p)?
        };
        ages.push(t);
        values.push(k);
    }

    let monotonicity_flags = if kind == KeyKind::InverseGaussian {
        values
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[1] < w[0] - 1e-9 * w[0].abs().max(1.0))
            .map(|(i, _)| start_age + i as u32 + 1)
            .collect()
    } else {
        Vec::new()
    };

    Ok(KeyPointEstimates { cohort, kind, ages, values, key_at_s: key_s, capped_ages: capped, monotonicity_flags })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmd::CohortMortality;
    use crate::mortality::{conditional, q_id, q_ig};

    #[test]
    fn anchor_zero_mortality_clamps_to_boundary() {
        let p = SemParams::default();
        let q = vec![0.0; 31];
        let cm = CohortMortality::new(1781, q).unwrap();
        assert_eq!(anchor_key_at_s(&cm, KeyKind::InverseGaussian, &p).unwrap(), 0.0);
        assert_eq!(anchor_key_at_s(&cm, KeyKind::Diffusion, &p).unwrap(), -1e-8 * p.x());
    }

    #[test]
    fn anchor_recovers_forward_evaluated_ig_key() {
        let p = SemParams::default();
        let q_s = q_ig(150.0, &p).unwrap();
        let mut q = vec![0.0; 21];
        q[20] = q_s;
        let cm = CohortMortality::new(1781, q).unwrap();
        let k = anchor_key_at_s(&cm, KeyKind::InverseGaussian, &p).unwrap();
        assert!((k - 150.0).abs() / 150.0 < 1e-8, "got {k}");
    }

    #[test]
    fn anchor_recovers_forward_evaluated_id_key() {
        // The forward value must be representable in double precision: at the
        // default constants q_id only rises above the underflow threshold for
        // keys around -600 and beyond, so the round trip is exercised there.
        let p = SemParams::default();
        let q_s = q_id(-850.0, &p).unwrap();
        assert!(q_s > 0.0);
        let mut q = vec![0.0; 21];
        q[20] = q_s;
        let cm = CohortMortality::new(1781, q).unwrap();
        let k = anchor_key_at_s(&cm, KeyKind::Diffusion, &p).unwrap();
        assert!((k + 850.0).abs() / 850.0 < 1e-8, "got {k}");
    }

    #[test]
    fn degenerate_anchor_is_an_error() {
        let p = SemParams::default();
        let q = vec![1.0; 21];
        let cm = CohortMortality::new(1781, q).unwrap();
        assert!(matches!(
            anchor_key_at_s(&cm, KeyKind::InverseGaussian, &p),
            Err(InversionError::DegenerateAnchor)
        ));
    }

    #[test]
    fn all_zero_cond_yields_anchor_everywhere() {
        let p = SemParams::default();
        let cond = vec![0.0; 30];
        let est = invert_pointwise(&cond, 20, 0.0, KeyKind::InverseGaussian, &p, 1781).unwrap();
        assert!(est.values.iter().all(|&v| v == 0.0));
        assert!(est.capped_ages.is_empty());
    }

    #[test]
    fn recovers_ig_parametric_family() {
        let p = SemParams::default();
        let s = p.cond_age();
        let lambda = |t: f64| (0.05 * t).exp() + 0.5 * t - 1.0;
        let key_s = lambda(s as f64);
        let q_s = q_ig(key_s, &p).unwrap();
        let cond: Vec<f64> = (s..=p.terminal_age())
            .map(|t| conditional(q_ig(lambda(t as f64), &p).unwrap(), q_s).unwrap())
            .collect();
        let est = invert_pointwise(&cond, s, key_s, KeyKind::InverseGaussian, &p, 1781).unwrap();
        for (&t, &v) in est.ages.iter().zip(&est.values) {
            let truth = lambda(t as f64);
            assert!((v - truth).abs() <= 1e-7 * truth.abs().max(1e-6), "age {t}: {v} vs {truth}");
        }
        assert!(est.monotonicity_flags.is_empty());
    }

    #[test]
    fn recovers_id_linear_drift() {
        // Linear drift with an admissible anchor level; see the anchor test
        // for why the slope alone would underflow at young ages.
        let p = SemParams::default();
        let s = p.cond_age();
        let m_curve = |t: f64| -650.0 - 5.0 * (t - s as f64);
        let key_s = m_curve(s as f64);
        let q_s = q_id(key_s, &p).unwrap();
        let cond: Vec<f64> = (s..=p.terminal_age())
            .map(|t| conditional(q_id(m_curve(t as f64), &p).unwrap(), q_s).unwrap())
            .collect();
        let est = invert_pointwise(&cond, s, key_s, KeyKind::Diffusion, &p, 1781).unwrap();
        for (&t, &v) in est.ages.iter().zip(&est.values) {
            let truth = m_curve(t as f64);
            assert!((v - truth).abs() <= 1e-7 * truth.abs(), "age {t}: {v} vs {truth}");
        }
    }

    #[test]
    fn round_trip_reproduces_conditional_mortality() {
        let p = SemParams::default();
        let s = p.cond_age();
        let lambda = |t: f64| (0.08 * t).exp() + 0.8 * t - 1.0;
        let key_s = lambda(s as f64);
        let q_s = q_ig(key_s, &p).unwrap();
        let cond: Vec<f64> = (s..=p.terminal_age())
            .map(|t| conditional(q_ig(lambda(t as f64), &p).unwrap(), q_s).unwrap())
            .collect();
        let est = invert_pointwise(&cond, s, key_s, KeyKind::InverseGaussian, &p, 1781).unwrap();
        let q_s_hat = q_ig(est.key_at_s, &p).unwrap();
        for (i, &v) in est.values.iter().enumerate() {
            if cond[i] < CAP_Q {
                let back = conditional(q_ig(v, &p).unwrap(), q_s_hat).unwrap();
                assert!((back - cond[i]).abs() < 1e-10, "age {}: {} vs {}", est.ages[i], back, cond[i]);
            }
        }
    }

    #[test]
    fn cond_of_one_caps_the_key() {
        let p = SemParams::default();
        let cond = vec![0.0, 0.5, 1.0];
        let est = invert_pointwise(&cond, 20, 100.0, KeyKind::InverseGaussian, &p, 1781).unwrap();
        assert_eq!(est.capped_ages, vec![22]);
        let q_cap = q_ig(est.values[2], &p).unwrap();
        assert!(q_cap >= CAP_Q - 1e-9 && est.values[2].is_finite());
    }

    #[test]
    fn non_monotone_cond_is_a_data_error() {
        let p = SemParams::default();
        let cond = vec![0.0, 0.3, 0.2, 0.4];
        match invert_pointwise(&cond, 20, 100.0, KeyKind::InverseGaussian, &p, 1781) {
            Err(InversionError::NonMonotoneCond(ages)) => assert_eq!(ages, vec![22]),
            other => panic!("expected monotonicity error, got {other:?}"),
        }
    }

    #[test]
    fn ig_inversion_of_monotone_cond_is_monotone() {
        let p = SemParams::default();
        let cond: Vec<f64> = (0..50).map(|i| i as f64 / 60.0).collect();
        let est = invert_pointwise(&cond, 20, 50.0, KeyKind::InverseGaussian, &p, 1781).unwrap();
        assert!(est.values.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        assert!(est.monotonicity_flags.is_empty());
    }
}
