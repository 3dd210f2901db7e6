//! Interval-constrained refitting of forecasted scores.
//!
//! Once a future cohort has some observed mortality, its forecasted
//! component scores are refit by least squares against that partial data,
//! constrained to the box formed by the per-component δ-prediction
//! intervals. The refit can only use ages the prediction intervals were
//! built to honour, so the search never leaves the box.

use crate::arima::ScoreForecast;
use crate::fpca::{FpcaError, FpcaModel};
use crate::mortality::q_key;
use crate::optim::nelder_mead_box;
use crate::params::{KeyKind, SemParams};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModifyError {
    #[error(
        "cohort {cohort} outside the modification range ({first}..={last}); use the unmodified forecast"
    )]
    OutsideApplicability { cohort: i32, first: i32, last: i32 },
    #[error("no partial mortality data supplied for cohort {0}")]
    EmptyPartialData(i32),
    #[error("forecast for component {component} has no {delta}-interval at horizon {horizon}")]
    MissingInterval { component: usize, delta: f64, horizon: usize },
    #[error("conditioning age {cond_age} outside the basis domain [{lo}, {hi}]")]
    BadCondAge { cond_age: u32, lo: f64, hi: f64 },
    #[error("age {age} not above the conditioning age {cond_age}")]
    AgeNotAboveCondAge { age: u32, cond_age: u32 },
    #[error(transparent)]
    Fpca(#[from] FpcaError),
}

/// Scores refit inside the δ-prediction box.
#[derive(Debug, Clone)]
pub struct ModifiedKey {
    pub cohort: i32,
    pub kind: KeyKind,
    pub delta: f64,
    pub scores_tilde: Vec<f64>,
    pub bounds: Vec<(f64, f64)>,
    /// Ages whose observed conditional mortality entered the fit.
    pub fit_ages: (u32, u32),
    /// Final sum of squared errors at the refit scores.
    pub objective: f64,
    /// Same objective at the unmodified point forecast.
    pub objective_at_forecast: f64,
}

/// Conditional mortality predicted from a reconstructed key curve.
#[derive(Debug, Clone)]
pub struct PredictedMortality {
    pub cohort: i32,
    pub kind: KeyKind,
    pub cond_age: u32,
    pub ages: Vec<u32>,
    pub q_cond: Vec<f64>,
    /// True when the reconstructed key left the admissible domain somewhere
    /// and was clamped to the boundary.
    pub key_clamped: bool,
    /// True when the output is nondecreasing in age (the diffusion model
    /// does not guarantee this; violations are flagged, not repaired).
    pub monotone: bool,
}

fn clamp_key(kind: KeyKind, key: f64, p: &SemParams) -> (f64, bool) {
    match kind {
        KeyKind::Diffusion => {
            let cap = -1e-8 * p.x();
            if key > cap {
                (cap, true)
            } else {
                (key, false)
            }
        }
        KeyKind::InverseGaussian => {
            if key < 0.0 {
                (0.0, true)
            } else {
                (key, false)
            }
        }
    }
}

/// Least-squares objective of a score vector against observed conditional
/// data starting at the conditioning age.
fn objective(
    model: &FpcaModel,
    scores: &[f64],
    partial: &[f64],
    p: &SemParams,
) -> f64 {
    let kind = model.kind;
    let s = p.cond_age();
    let coeffs = match model.reconstruct_coeffs(scores) {
        Ok(c) => c,
        Err(_) => return f64::MAX,
    };
    let anchor = match model.basis.eval(&coeffs, s as f64) {
        Ok(v) => clamp_key(kind, v, p).0,
        Err(_) => return f64::MAX,
    };
    let q_s = match q_key(kind, anchor, p) {
        Ok(q) => q,
        Err(_) => return f64::MAX,
    };
    if q_s >= 1.0 - 1e-15 {
        return f64::MAX;
    }
    let mut sum = 0.0;
    for (i, &observed) in partial.iter().enumerate().skip(1) {
        let t = (s + i as u32) as f64;
        let key = match model.basis.eval(&coeffs, t) {
            Ok(v) => clamp_key(kind, v, p).0,
            Err(_) => return f64::MAX,
        };
        let q_t = match q_key(kind, key, p) {
            Ok(q) => q,
            Err(_) => return f64::MAX,
        };
        let pred = ((q_t - q_s) / (1.0 - q_s)).clamp(0.0, 1.0);
        sum += (pred - observed) * (pred - observed);
    }
    sum
}

/// Refits the forecasted scores of `cohort` inside the δ-prediction box
/// against its observed conditional mortality (`partial`, starting at the
/// conditioning age).
///
/// The optimizer is a box-clamped simplex started at the point forecast with
/// a restart from the box centre (and one more from the incumbent); the best
/// point evaluated is returned, so the objective never exceeds the one at
/// the point forecast.
#[allow(clippy::too_many_arguments)]
pub fn modify_scores(
    forecasts: &[ScoreForecast],
    model: &FpcaModel,
    partial: &[f64],
    p: &SemParams,
    delta: f64,
    cohort: i32,
    last_training_cohort: i32,
) -> Result<ModifiedKey, ModifyError> {
    let first = last_training_cohort + 1;
    let last = last_training_cohort + (p.terminal_age() - p.cond_age()) as i32;
    if cohort < first || cohort > last {
        return Err(ModifyError::OutsideApplicability { cohort, first, last });
    }
    if partial.is_empty() {
        return Err(ModifyError::EmptyPartialData(cohort));
    }
    let horizon_idx = (cohort - last_training_cohort - 1) as usize;
    let k = model.k_selected.min(forecasts.len());

    let mut points = Vec::with_capacity(k);
    let mut bounds = Vec::with_capacity(k);
    for (j, fc) in forecasts.iter().take(k).enumerate() {
        let point = *fc.points.get(horizon_idx).ok_or(ModifyError::MissingInterval {
            component: j,
            delta,
            horizon: horizon_idx + 1,
        })?;
        let (lo, hi) = fc.box_at(delta, horizon_idx).ok_or(ModifyError::MissingInterval {
            component: j,
            delta,
            horizon: horizon_idx + 1,
        })?;
        points.push(point.clamp(lo, hi));
        bounds.push((lo, hi));
    }

    let eval = |z: &[f64]| objective(model, z, partial, p);
    let objective_at_forecast = eval(&points);

    // Optimize only the coordinates whose box has width; zero-width
    // components stay clamped at the point forecast.
    let free: Vec<usize> = (0..k).filter(|&j| bounds[j].1 - bounds[j].0 > 0.0).collect();
    let (best_z, best_f) = if free.is_empty() {
        (points.clone(), objective_at_forecast)
    } else {
        let embed = |zf: &[f64]| {
            let mut full = points.clone();
            for (slot, &j) in free.iter().enumerate() {
                full[j] = zf[slot];
            }
            full
        };
        let mut f_free = |zf: &[f64]| eval(&embed(zf));
        let start: Vec<f64> = free.iter().map(|&j| points[j]).collect();
        let fb: Vec<(f64, f64)> = free.iter().map(|&j| bounds[j]).collect();
        let widths: Vec<f64> = fb.iter().map(|&(lo, hi)| hi - lo).collect();
        let step: Vec<f64> = widths.iter().map(|w| 0.25 * w).collect();
        let center: Vec<f64> = fb.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
        let iters = 500 * free.len();

        let (z1, f1) = nelder_mead_box(&mut f_free, &start, &fb, &step, iters);
        let (z2, f2) = nelder_mead_box(&mut f_free, &center, &fb, &step, iters);
        let (mut zb, mut fb_val) = if f1 <= f2 { (z1, f1) } else { (z2, f2) };
        let small_step: Vec<f64> = widths.iter().map(|w| 1e-3 * w).collect();
        let (z3, f3) = nelder_mead_box(&mut f_free, &zb, &fb, &small_step, iters);
        if f3 < fb_val {
            zb = z3;
            fb_val = f3;
        }
        if fb_val <= objective_at_forecast {
            (embed(&zb), fb_val)
        } else {
            (points.clone(), objective_at_forecast)
        }
    };

    let fit_last = p.cond_age() + (partial.len() as u32 - 1);
    Ok(ModifiedKey {
        cohort,
        kind: model.kind,
        delta,
        scores_tilde: best_z,
        bounds,
        fit_ages: (p.cond_age(), fit_last),
        objective: best_f,
        objective_at_forecast,
    })
}

/// Conditional mortality implied by a key curve (given as basis
/// coefficients), anchored at `cond_age`.
pub fn predicted_mortality(
    coeffs: &DVector<f64>,
    model: &FpcaModel,
    p: &SemParams,
    ages: &[u32],
    cond_age: u32,
    cohort: i32,
) -> Result<PredictedMortality, ModifyError> {
    let kind = model.kind;
    let (lo, hi) = model.basis.domain();
    if (cond_age as f64) < lo || (cond_age as f64) > hi {
        return Err(ModifyError::BadCondAge { cond_age, lo, hi });
    }
    let mut clamped = false;
    let anchor_raw = model.basis.eval(coeffs, cond_age as f64).map_err(FpcaError::from)?;
    let (anchor, c0) = clamp_key(kind, anchor_raw, p);
    clamped |= c0;
    let q_s = q_key(kind, anchor, p).expect("clamped key is admissible");

    let mut q_cond = Vec::with_capacity(ages.len());
    let mut monotone = true;
    let mut prev = 0.0;
    for &t in ages {
        if t <= cond_age {
            return Err(ModifyError::AgeNotAboveCondAge { age: t, cond_age });
        }
        let raw = model.basis.eval(coeffs, t as f64).map_err(FpcaError::from)?;
        let (key, c) = clamp_key(kind, raw, p);
        clamped |= c;
        let q_t = q_key(kind, key, p).expect("clamped key is admissible");
        let value = if q_s >= 1.0 - 1e-15 { 1.0 } else { ((q_t - q_s) / (1.0 - q_s)).clamp(0.0, 1.0) };
        if value < prev - 1e-12 {
            monotone = false;
        }
        prev = value;
        q_cond.push(value);
    }
    Ok(PredictedMortality { cohort, kind, cond_age, ages: ages.to_vec(), q_cond, key_clamped: clamped, monotone })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arima::DeltaIntervals;
    use crate::bspline::make_basis;
    use crate::mortality::{conditional, q_ig};
    use crate::smooth::fit_coeffs;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;

    /// A hand-built two-component IG model with W-orthonormal modes.
    fn toy_model() -> FpcaModel {
        let basis = make_basis(20.0, 110.0, 8, 4).unwrap();
        let ages: Vec<f64> = (20..=110).map(|t| t as f64).collect();
        let mean_vals: Vec<f64> = ages.iter().map(|&t| (0.07 * t).exp() + 0.5 * t - 1.0).collect();
        let mean_coeffs = fit_coeffs(&ages, &mean_vals, &basis).unwrap().coeffs;

        // Two raw directions, W-orthonormalised by Gram-Schmidt.
        let w = basis.gram().clone();
        let raw1 = DVector::from_fn(8, |i, _| 1.0 + 0.3 * i as f64);
        let raw2 = DVector::from_fn(8, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let norm1 = (raw1.transpose() * &w * &raw1)[(0, 0)].sqrt();
        let e1 = raw1 / norm1;
        let proj = (raw2.transpose() * &w * &e1)[(0, 0)];
        let orth = raw2 - &e1 * proj;
        let norm2 = (orth.transpose() * &w * &orth)[(0, 0)].sqrt();
        let e2 = orth / norm2;
        let mut eig_coeffs = DMatrix::zeros(8, 2);
        eig_coeffs.set_column(0, &e1);
        eig_coeffs.set_column(1, &e2);

        FpcaModel {
            kind: KeyKind::InverseGaussian,
            basis,
            cohorts: vec![1781, 1782],
            mean_coeffs,
            eig_coeffs,
            eigvals: vec![4.0, 1.0],
            scores: DMatrix::zeros(2, 2),
            contrib: vec![0.8, 1.0],
            k_selected: 2,
            degenerate: false,
        }
    }

    fn forecast_with_box(point: f64, half_width: f64, horizon: usize) -> ScoreForecast {
        ScoreForecast {
            component: 0,
            horizon,
            points: vec![point; horizon],
            intervals: vec![DeltaIntervals {
                delta: 0.95,
                lower: vec![point - half_width; horizon],
                upper: vec![point + half_width; horizon],
            }],
        }
    }

    fn conditional_from_scores(model: &FpcaModel, scores: &[f64], p: &SemParams, n_ages: usize) -> Vec<f64> {
        let coeffs = model.reconstruct_coeffs(scores).unwrap();
        let s = p.cond_age();
        let q_s = q_ig(model.basis.eval(&coeffs, s as f64).unwrap().max(0.0), p).unwrap();
        (0..n_ages)
            .map(|i| {
                let t = (s + i as u32) as f64;
                let q_t = q_ig(model.basis.eval(&coeffs, t).unwrap().max(0.0), p).unwrap();
                conditional(q_t, q_s).unwrap()
            })
            .collect()
    }

    #[test]
    fn self_consistent_data_keeps_the_point_forecast() {
        let model = toy_model();
        let p = SemParams::default();
        let partial = conditional_from_scores(&model, &[30.0, -12.0], &p, 40);
        let forecasts = vec![forecast_with_box(30.0, 50.0, 3), forecast_with_box(-12.0, 40.0, 3)];
        let modified = modify_scores(&forecasts, &model, &partial, &p, 0.95, 1783, 1782).unwrap();
        assert!(modified.objective <= 1e-18, "objective {}", modified.objective);
        assert_abs_diff_eq!(modified.scores_tilde[0], 30.0, epsilon = 1e-3);
        assert_abs_diff_eq!(modified.scores_tilde[1], -12.0, epsilon = 1e-3);
        assert_abs_diff_eq!(modified.objective_at_forecast, 0.0, epsilon = 1e-18);
    }

    #[test]
    fn corner_optimum_is_recovered() {
        let model = toy_model();
        let p = SemParams::default();
        // Truth sits exactly at a corner of the box around the (wrong) point
        // forecast.
        let truth = [90.0, -44.0];
        let partial = conditional_from_scores(&model, &truth, &p, 50);
        let forecasts = vec![forecast_with_box(50.0, 40.0, 2), forecast_with_box(-20.0, 24.0, 2)];
        let modified = modify_scores(&forecasts, &model, &partial, &p, 0.95, 1783, 1782).unwrap();
        assert!((modified.scores_tilde[0] - 90.0).abs() <= 1e-4 * 80.0, "{:?}", modified.scores_tilde);
        assert!((modified.scores_tilde[1] + 44.0).abs() <= 1e-4 * 48.0, "{:?}", modified.scores_tilde);
        assert!(modified.objective <= modified.objective_at_forecast);
    }

    #[test]
    fn zero_width_box_pins_the_component() {
        let model = toy_model();
        let p = SemParams::default();
        let partial = conditional_from_scores(&model, &[75.0, 3.0], &p, 45);
        let forecasts = vec![forecast_with_box(12.0, 0.0, 1), forecast_with_box(0.0, 30.0, 1)];
        let modified = modify_scores(&forecasts, &model, &partial, &p, 0.95, 1783, 1782).unwrap();
        assert_eq!(modified.scores_tilde[0], 12.0);
        assert!(modified.objective <= modified.objective_at_forecast);
    }

    #[test]
    fn applicability_window_is_enforced() {
        let model = toy_model();
        let p = SemParams::default();
        let partial = vec![0.0, 0.01];
        let forecasts = vec![forecast_with_box(0.0, 1.0, 200), forecast_with_box(0.0, 1.0, 200)];
        // Last admissible cohort is 1782 + (110 - 20) = 1872.
        assert!(modify_scores(&forecasts, &model, &partial, &p, 0.95, 1873, 1782).is_err());
        assert!(modify_scores(&forecasts, &model, &partial, &p, 0.95, 1782, 1782).is_err());
        assert!(matches!(
            modify_scores(&forecasts, &model, &[], &p, 0.95, 1800, 1782),
            Err(ModifyError::EmptyPartialData(1800))
        ));
    }

    #[test]
    fn constant_key_gives_zero_conditional_mortality() {
        let model = toy_model();
        let p = SemParams::default();
        // A curve identically equal to its value at the conditioning age.
        let mut flat = model.clone();
        flat.mean_coeffs = DVector::from_element(8, 500.0);
        let coeffs = flat.reconstruct_coeffs(&[]).unwrap();
        let ages: Vec<u32> = (21..=110).collect();
        let pred = predicted_mortality(&coeffs, &flat, &p, &ages, 20, 1783).unwrap();
        for &v in &pred.q_cond {
            assert!(v.abs() < 1e-12);
        }
        assert!(pred.monotone);
    }

    #[test]
    fn prediction_matches_direct_composition() {
        let model = toy_model();
        let p = SemParams::default();
        let coeffs = model.reconstruct_coeffs(&[10.0, 5.0]).unwrap();
        let ages: Vec<u32> = (21..=110).collect();
        let pred = predicted_mortality(&coeffs, &model, &p, &ages, 20, 1783).unwrap();
        let q_s = q_ig(model.basis.eval(&coeffs, 20.0).unwrap(), &p).unwrap();
        for (&t, &v) in pred.ages.iter().zip(&pred.q_cond) {
            let q_t = q_ig(model.basis.eval(&coeffs, t as f64).unwrap(), &p).unwrap();
            let direct = conditional(q_t, q_s).unwrap();
            assert_abs_diff_eq!(v, direct, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_scores_predict_the_mean_curve() {
        let model = toy_model();
        let p = SemParams::default();
        let coeffs = model.reconstruct_coeffs(&[]).unwrap();
        let ages: Vec<u32> = (21..=110).collect();
        let pred = predicted_mortality(&coeffs, &model, &p, &ages, 20, 1783).unwrap();
        let q_s = q_ig(model.basis.eval(&model.mean_coeffs, 20.0).unwrap(), &p).unwrap();
        let q_t = q_ig(model.basis.eval(&model.mean_coeffs, 60.0).unwrap(), &p).unwrap();
        let direct = conditional(q_t, q_s).unwrap();
        assert_abs_diff_eq!(pred.q_cond[39], direct, epsilon = 1e-12);
    }

    #[test]
    fn inadmissible_keys_are_clamped_and_flagged() {
        let model = toy_model();
        let p = SemParams::default();
        let mut neg = model.clone();
        neg.mean_coeffs = DVector::from_element(8, -50.0);
        let coeffs = neg.reconstruct_coeffs(&[]).unwrap();
        let ages: Vec<u32> = (21..=110).collect();
        let pred = predicted_mortality(&coeffs, &neg, &p, &ages, 20, 1783).unwrap();
        assert!(pred.key_clamped);
        assert!(pred.q_cond.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ages_at_or_below_cond_age_are_rejected() {
        let model = toy_model();
        let p = SemParams::default();
        let coeffs = model.reconstruct_coeffs(&[]).unwrap();
        assert!(matches!(
            predicted_mortality(&coeffs, &model, &p, &[20], 20, 1783),
            Err(ModifyError::AgeNotAboveCondAge { .. })
        ));
    }
}
