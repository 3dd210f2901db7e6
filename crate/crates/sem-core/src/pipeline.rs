//! End-to-end orchestration: inversion → smoothing → FPCA → score
//! forecasting → modification → evaluation, for one key kind at a time.

use crate::arima::{fit_arima, forecast, ArimaError, ArimaSearch, ArimaSpec, ScoreForecast};
use crate::bspline::{make_basis, BasisError};
use crate::evaluate::{mse, EvalError, MseReport, Variant};
use crate::fpca::{fit_fpca, FpcaError, FpcaModel};
use crate::hmd::{conditional_data, CohortMortality, CohortPanel, HmdError};
use crate::inversion::{anchor_key_at_s, invert_pointwise, InversionError, KeyPointEstimates};
use crate::modify::{modify_scores, predicted_mortality, ModifiedKey, ModifyError, PredictedMortality};
use crate::params::{KeyKind, SemParams};
use crate::smooth::{center, fit_key_coeffs, FunctionalDataSet, SmoothError};
use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("cohort {0} not present in the panel")]
    MissingCohort(i32),
    #[error("training cohort {cohort} observed only to age {w_avail}, terminal age {w} required")]
    TrainingIncomplete { cohort: i32, w_avail: u32, w: u32 },
    #[error("need at least 2 training cohorts, got {0}")]
    TooFewTrainingCohorts(usize),
    #[error("target cohort {target} is not beyond the last training cohort {last}")]
    TargetNotInFuture { target: i32, last: i32 },
    #[error("target cohort {target} beyond the forecast horizon {horizon}")]
    BeyondHorizon { target: i32, horizon: usize },
    #[error("evaluation start age {c_tilde} below the evaluation conditioning age {cond_age}")]
    EvalRangeBelowCondAge { c_tilde: i32, cond_age: u32 },
    #[error("cohort {cohort}: data reach age {w_avail}, evaluation needs ages through {w}")]
    EvalDataMissing { cohort: i32, w_avail: u32, w: u32 },
    #[error(transparent)]
    Hmd(#[from] HmdError),
    #[error(transparent)]
    Inversion(#[from] InversionError),
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error(transparent)]
    Smooth(#[from] SmoothError),
    #[error(transparent)]
    Fpca(#[from] FpcaError),
    #[error(transparent)]
    Arima(#[from] ArimaError),
    #[error(transparent)]
    Modify(#[from] ModifyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Tunable pipeline settings; defaults reproduce the standard setup
/// (20 cubic B-splines, θ = 0.995, δ = 0.95, evaluation conditioning age 30).
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub basis_len: usize,
    pub basis_order: usize,
    pub theta: f64,
    pub deltas: Vec<f64>,
    pub search: ArimaSearch,
    pub eval_cond_age: u32,
    /// When set, the evaluation sum starts one age after the data horizon
    /// instead of at it.
    pub eval_from_next_age: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            basis_len: 20,
            basis_order: 4,
            theta: 0.995,
            deltas: vec![0.95],
            search: ArimaSearch::default(),
            eval_cond_age: 30,
            eval_from_next_age: false,
        }
    }
}

/// Key estimation and FPCA output for one kind.
#[derive(Debug, Clone)]
pub struct FittedKind {
    pub kind: KeyKind,
    pub key_estimates: Vec<KeyPointEstimates>,
    pub fds: FunctionalDataSet,
    pub model: FpcaModel,
    /// Cohorts whose coefficient fit needed the ridge term.
    pub ridged_cohorts: Vec<i32>,
}

/// Inversion, smoothing, and FPCA over the training range (inclusive).
pub fn fit_kind(
    panel: &CohortPanel,
    train: (i32, i32),
    kind: KeyKind,
    cfg: &PipelineConfig,
) -> Result<FittedKind, PipelineError> {
    let p = panel.params();
    let s = p.cond_age();
    let w = p.terminal_age();
    let basis = make_basis(s as f64, w as f64, cfg.basis_len, cfg.basis_order)?;

    let mut key_estimates = Vec::new();
    let mut rows = Vec::new();
    let mut cohorts = Vec::new();
    let mut ridged = Vec::new();
    for cohort in train.0..=train.1 {
        let curve = panel.get(cohort).ok_or(PipelineError::MissingCohort(cohort))?;
        if curve.w_avail() < w {
            return Err(PipelineError::TrainingIncomplete { cohort, w_avail: curve.w_avail(), w });
        }
        let anchor = anchor_key_at_s(curve, kind, p)?;
        let cond = conditional_data(curve, s)?;
        let est = invert_pointwise(&cond, s, anchor, kind, p, cohort)?;
        let fit = fit_key_coeffs(&est, &basis)?;
        if fit.ridge_applied {
            ridged.push(cohort);
        }
        key_estimates.push(est);
        rows.push(fit.coeffs);
        cohorts.push(cohort);
    }
    if cohorts.len() < 2 {
        return Err(PipelineError::TooFewTrainingCohorts(cohorts.len()));
    }
    let fds = center(basis, cohorts, &rows)?;
    let model = fit_fpca(&fds, kind, cfg.theta)?;
    Ok(FittedKind { kind, key_estimates, fds, model, ridged_cohorts: ridged })
}

/// ARIMA fits and forecasts for the retained score series of a model.
#[derive(Debug, Clone)]
pub struct KindForecasts {
    pub kind: KeyKind,
    pub last_training: i32,
    pub horizon: usize,
    pub specs: Vec<ArimaSpec>,
    pub forecasts: Vec<ScoreForecast>,
}

/// Fits one ARIMA model per selected component and forecasts `horizon`
/// cohorts ahead. Intervals are produced for the configured δ levels plus
/// the 80% and 95% bands used by the dumps.
pub fn forecast_scores(
    model: &FpcaModel,
    cfg: &PipelineConfig,
    horizon: usize,
) -> Result<KindForecasts, PipelineError> {
    let mut deltas = cfg.deltas.clone();
    for extra in [0.8, 0.95] {
        if !deltas.iter().any(|&d| (d - extra).abs() < 1e-12) {
            deltas.push(extra);
        }
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let last_training = *model.cohorts.last().expect("fitted model has cohorts");
    let mut specs = Vec::with_capacity(model.k_selected);
    let mut forecasts = Vec::with_capacity(model.k_selected);
    for j in 0..model.k_selected {
        let series = model.score_series(j);
        let spec = fit_arima(&series, &cfg.search)?;
        let mut fc = forecast(&spec, &series, horizon, &deltas)?;
        fc.component = j;
        specs.push(spec);
        forecasts.push(fc);
    }
    Ok(KindForecasts { kind: model.kind, last_training, horizon, specs, forecasts })
}

/// Prediction bundle for one target cohort at one δ level.
#[derive(Debug, Clone)]
pub struct TargetPrediction {
    pub kind: KeyKind,
    pub cohort: i32,
    pub delta: f64,
    pub point_scores: Vec<f64>,
    pub unmodified: PredictedMortality,
    pub modified_key: Option<ModifiedKey>,
    pub modified: Option<PredictedMortality>,
    /// Set when modification was not applicable (with the reason).
    pub notice: Option<String>,
}

/// Forecast, and where applicable modify, the mortality prediction of one
/// target cohort.
///
/// `last_data_year` bounds the observed data: the target's curve is
/// truncated to age `last_data_year - cohort` before the constrained refit,
/// matching the data horizon the score intervals were built under.
pub fn predict_target(
    model: &FpcaModel,
    kfc: &KindForecasts,
    panel: &CohortPanel,
    cohort: i32,
    delta: f64,
    last_data_year: i32,
) -> Result<TargetPrediction, PipelineError> {
    let p = panel.params();
    let s = p.cond_age();
    let w = p.terminal_age();
    if cohort <= kfc.last_training {
        return Err(PipelineError::TargetNotInFuture { target: cohort, last: kfc.last_training });
    }
    let horizon_idx = (cohort - kfc.last_training - 1) as usize;
    if horizon_idx >= kfc.horizon {
        return Err(PipelineError::BeyondHorizon { target: cohort, horizon: kfc.horizon });
    }

    let point_scores: Vec<f64> =
        kfc.forecasts.iter().take(model.k_selected).map(|fc| fc.points[horizon_idx]).collect();
    let ages: Vec<u32> = (s + 1..=w).collect();
    let unmod_coeffs = model.reconstruct_coeffs(&point_scores)?;
    let unmodified = predicted_mortality(&unmod_coeffs, model, p, &ages, s, cohort)?;

    let mut notice = None;
    let mut modified_key = None;
    let mut modified = None;
    let observable_age = last_data_year - cohort;
    let partial: Option<Vec<f64>> = match panel.get(cohort) {
        Some(curve) if observable_age >= s as i32 => {
            let truncated = curve.truncated(observable_age.min(w as i32) as u32);
            Some(conditional_data(&truncated, s)?)
        }
        _ => None,
    };
    match partial {
        Some(partial) => {
            match modify_scores(&kfc.forecasts, model, &partial, p, delta, cohort, kfc.last_training) {
                Ok(mk) => {
                    let coeffs = model.reconstruct_coeffs(&mk.scores_tilde)?;
                    modified = Some(predicted_mortality(&coeffs, model, p, &ages, s, cohort)?);
                    modified_key = Some(mk);
                }
                Err(ModifyError::OutsideApplicability { first, last, .. }) => {
                    notice = Some(format!(
                        "modification not applicable to cohort {cohort} (window {first}..={last}); unmodified forecast only"
                    ));
                }
                Err(e) => return Err(e.into()),
            }
        }
        None => {
            notice = Some(format!(
                "no observed mortality at or beyond age {s} for cohort {cohort} by year {last_data_year}; unmodified forecast only"
            ));
        }
    }

    Ok(TargetPrediction {
        kind: model.kind,
        cohort,
        delta,
        point_scores,
        unmodified,
        modified_key,
        modified,
        notice,
    })
}

/// Conditional mortality at the evaluation conditioning age, from a key
/// curve's basis coefficients, over `ages` (entries equal to the
/// conditioning age contribute the defining zero).
fn conditional_curve_from_coeffs(
    coeffs: &DVector<f64>,
    model: &FpcaModel,
    p: &SemParams,
    cond_age: u32,
    ages: &[u32],
    cohort: i32,
) -> Result<Vec<f64>, PipelineError> {
    let above: Vec<u32> = ages.iter().copied().filter(|&t| t > cond_age).collect();
    let pred = predicted_mortality(coeffs, model, p, &above, cond_age, cohort)?;
    let mut out = Vec::with_capacity(ages.len());
    let mut it = pred.q_cond.iter();
    for &t in ages {
        if t > cond_age {
            out.push(*it.next().expect("one value per age"));
        } else {
            out.push(0.0);
        }
    }
    Ok(out)
}

/// Empirical conditional mortality at `cond_age` over `ages`.
fn conditional_data_at(
    curve: &CohortMortality,
    cond_age: u32,
    ages: &[u32],
) -> Result<Vec<f64>, PipelineError> {
    let cond = conditional_data(curve, cond_age)?;
    let mut out = Vec::with_capacity(ages.len());
    for &t in ages {
        let idx = (t - cond_age) as usize;
        out.push(cond[idx]);
    }
    Ok(out)
}

/// Scores one prediction variant against the target's realised mortality
/// with the horizon-aware MSE.
pub fn evaluate_target(
    model: &FpcaModel,
    scores: &[f64],
    data_full: &CohortMortality,
    p: &SemParams,
    cfg: &PipelineConfig,
    last_data_year: i32,
    variant: Variant,
) -> Result<MseReport, PipelineError> {
    let cohort = data_full.cohort();
    let w = p.terminal_age();
    let s0 = cfg.eval_cond_age;
    let c_tilde = last_data_year - cohort;
    if c_tilde < s0 as i32 {
        return Err(PipelineError::EvalRangeBelowCondAge { c_tilde, cond_age: s0 });
    }
    if data_full.w_avail() < w {
        return Err(PipelineError::EvalDataMissing { cohort, w_avail: data_full.w_avail(), w });
    }
    let lo = c_tilde as u32 + u32::from(cfg.eval_from_next_age);
    let ages: Vec<u32> = (lo..=w).collect();
    let coeffs = model.reconstruct_coeffs(scores)?;
    let pred = conditional_curve_from_coeffs(&coeffs, model, p, s0, &ages, cohort)?;
    let data = conditional_data_at(data_full, s0, &ages)?;
    let value = mse(&pred, &data, lo, w)?;
    Ok(MseReport { kind: model.kind, cohort, variant, mse: value, age_lo: lo, age_hi: w, n_ages: ages.len() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{generate_synthetic_panel, KeyCurve, SyntheticCohort};

    fn ig_panel(n_train: usize, n_extra: usize) -> CohortPanel {
        let p = SemParams::default();
        let specs: Vec<SyntheticCohort> = (0..n_train + n_extra)
            .map(|i| SyntheticCohort {
                cohort: 1781 + i as i32,
                curve: KeyCurve::IgFamily { a: 0.085 - 1e-4 * i as f64, b: 0.6 + 4e-3 * i as f64 },
            })
            .collect();
        generate_synthetic_panel(&specs, &p, None).unwrap()
    }

    #[test]
    fn fit_kind_produces_a_usable_model() {
        let panel = ig_panel(12, 0);
        let cfg = PipelineConfig { basis_len: 12, ..Default::default() };
        let fitted = fit_kind(&panel, (1781, 1792), KeyKind::InverseGaussian, &cfg).unwrap();
        assert_eq!(fitted.key_estimates.len(), 12);
        assert!(fitted.model.k_selected >= 1);
        assert!(fitted.ridged_cohorts.is_empty());
    }

    #[test]
    fn training_gap_is_reported() {
        let panel = ig_panel(5, 0);
        let cfg = PipelineConfig::default();
        match fit_kind(&panel, (1781, 1790), KeyKind::InverseGaussian, &cfg) {
            Err(PipelineError::MissingCohort(1786)) => {}
            other => panic!("expected missing cohort, got {other:?}"),
        }
    }

    #[test]
    fn forecast_and_predict_near_cohort() {
        let panel = ig_panel(20, 2);
        let cfg = PipelineConfig { basis_len: 12, ..Default::default() };
        let fitted = fit_kind(&panel, (1781, 1800), KeyKind::InverseGaussian, &cfg).unwrap();
        let kfc = forecast_scores(&fitted.model, &cfg, 5).unwrap();
        assert_eq!(kfc.forecasts.len(), fitted.model.k_selected);
        let last_data_year = 1800 + 110;
        let tp = predict_target(&fitted.model, &kfc, &panel, 1801, 0.95, last_data_year).unwrap();
        assert!(tp.modified.is_some(), "notice: {:?}", tp.notice);
        let mk = tp.modified_key.unwrap();
        assert!(mk.objective <= mk.objective_at_forecast);
    }

    #[test]
    fn beyond_window_yields_notice_not_error() {
        let panel = ig_panel(20, 0);
        let cfg = PipelineConfig { basis_len: 12, ..Default::default() };
        let fitted = fit_kind(&panel, (1781, 1800), KeyKind::InverseGaussian, &cfg).unwrap();
        // Horizon far beyond the modification window 1801..=1890.
        let kfc = forecast_scores(&fitted.model, &cfg, 120).unwrap();
        let tp = predict_target(&fitted.model, &kfc, &panel, 1915, 0.95, 1800 + 110).unwrap();
        assert!(tp.modified.is_none());
        assert!(tp.notice.is_some());
    }
}
