//! Univariate ARIMA fitting and forecasting for principal-component score
//! series.
//!
//! Orders are selected by differencing first (KPSS level-stationarity
//! statistic) and then an exhaustive `(p, q)` grid scored by AICc.
//! Parameters are estimated by conditional sum of squares: partial
//! autocorrelations are mapped through `tanh` so stationarity and
//! invertibility hold throughout the search, and a BFGS polish runs on the
//! unconstrained parameters.

use crate::optim::bfgs;
use crate::special::norm_quantile;
use nalgebra::DMatrix;
use thiserror::Error;

/// Root-modulus margin required of the AR and MA polynomials.
const ROOT_MARGIN: f64 = 1.0 + 1e-6;

/// KPSS 5% critical value for level stationarity.
const KPSS_CRITICAL: f64 = 0.463;

#[derive(Debug, Error, PartialEq)]
pub enum ArimaError {
    #[error("series too short: {len} observations, need at least {needed} after differencing")]
    SeriesTooShort { len: usize, needed: usize },
    #[error("forecast horizon must be at least 1")]
    ZeroHorizon,
    #[error("prediction level must lie in (0, 1), got {0}")]
    BadDelta(f64),
}

/// A fitted ARIMA(p, d, q) model.
#[derive(Debug, Clone)]
pub struct ArimaSpec {
    pub p: usize,
    pub d: usize,
    pub q: usize,
    /// AR coefficients φ (length `p`), stationary.
    pub phi: Vec<f64>,
    /// MA coefficients θ (length `q`), invertible.
    pub theta_ma: Vec<f64>,
    /// Constant of the differenced-series equation (the drift when `d = 1`).
    pub intercept: f64,
    /// Innovation variance.
    pub sigma2: f64,
    /// Corrected Akaike score of the fit.
    pub aicc: f64,
    /// Set when no admissible candidate existed and the random-walk-with-
    /// drift fallback was used.
    pub fallback: bool,
}

/// Order-search bounds.
#[derive(Debug, Clone, Copy)]
pub struct ArimaSearch {
    pub max_p: usize,
    pub max_d: usize,
    pub max_q: usize,
}

impl Default for ArimaSearch {
    fn default() -> Self {
        Self { max_p: 2, max_d: 2, max_q: 2 }
    }
}

impl ArimaSpec {
    /// Mean of the differenced-series equation, `c / (1 - Σφ)`; for `d = 1`
    /// this is the long-run drift per step.
    pub fn implied_mean(&self) -> f64 {
        let phi_sum: f64 = self.phi.iter().sum();
        self.intercept / (1.0 - phi_sum)
    }
}

/// Prediction band at one coverage level.
#[derive(Debug, Clone)]
pub struct DeltaIntervals {
    pub delta: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Point forecasts and prediction intervals for one score component.
#[derive(Debug, Clone)]
pub struct ScoreForecast {
    pub component: usize,
    pub horizon: usize,
    pub points: Vec<f64>,
    pub intervals: Vec<DeltaIntervals>,
}

impl ScoreForecast {
    pub fn interval(&self, delta: f64) -> Option<&DeltaIntervals> {
        self.intervals.iter().find(|iv| (iv.delta - delta).abs() < 1e-12)
    }

    /// `(lower, upper)` box edge for the given level at horizon index
    /// `h_idx` (0-based).
    pub fn box_at(&self, delta: f64, h_idx: usize) -> Option<(f64, f64)> {
        let iv = self.interval(delta)?;
        Some((*iv.lower.get(h_idx)?, *iv.upper.get(h_idx)?))
    }
}

/// `d`-fold differencing.
pub fn difference(series: &[f64], d: usize) -> Vec<f64> {
    let mut w = series.to_vec();
    for _ in 0..d {
        w = w.windows(2).map(|pair| pair[1] - pair[0]).collect();
    }
    w
}

/// KPSS statistic for level stationarity with a Bartlett long-run variance.
pub fn kpss_level_stat(y: &[f64]) -> f64 {
    let n = y.len();
    assert!(n >= 2);
    let mean = y.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut cum = 0.0;
    let mut num = 0.0;
    for &v in &e {
        cum += v;
        num += cum * cum;
    }
    num /= (n * n) as f64;

    let bandwidth = ((12.0 * (n as f64 / 100.0).powf(0.25)) as usize).min(n - 1);
    let gamma = |lag: usize| -> f64 {
        e.iter().zip(&e[lag..]).map(|(a, b)| a * b).sum::<f64>() / n as f64
    };
    let mut lrv = gamma(0);
    for lag in 1..=bandwidth {
        let w = 1.0 - lag as f64 / (bandwidth as f64 + 1.0);
        lrv += 2.0 * w * gamma(lag);
    }
    if lrv <= 1e-300 {
        return if num <= 1e-300 { 0.0 } else { f64::INFINITY };
    }
    num / lrv
}

/// Differencing order: the smallest `d` whose differenced series passes the
/// KPSS level-stationarity check.
pub fn select_d(series: &[f64], max_d: usize) -> usize {
    let mut d = 0;
    while d < max_d {
        let w = difference(series, d);
        if w.len() < 12 || kpss_level_stat(&w) <= KPSS_CRITICAL {
            return d;
        }
        d += 1;
    }
    d
}

/// Fits an ARIMA model with automatic order selection.
pub fn fit_arima(series: &[f64], search: &ArimaSearch) -> Result<ArimaSpec, ArimaError> {
    let d = select_d(series, search.max_d);
    fit_with_d(series, d, search)
}

/// Fits an ARIMA model with all three orders fixed.
pub fn fit_arima_fixed(series: &[f64], p: usize, d: usize, q: usize) -> Result<ArimaSpec, ArimaError> {
    check_length(series, d)?;
    let w = difference(series, d);
    let include_mean = d <= 1;
    match fit_arma(&w, p, q, include_mean) {
        Some(c) => Ok(spec_from_candidate(c, p, d, q)),
        None => Ok(fallback_model(series)),
    }
}

fn fit_with_d(series: &[f64], d: usize, search: &ArimaSearch) -> Result<ArimaSpec, ArimaError> {
    check_length(series, d)?;
    let w = difference(series, d);
    let include_mean = d <= 1;
    let mut best: Option<(usize, usize, Candidate)> = None;
    for p in 0..=search.max_p {
        for q in 0..=search.max_q {
            if let Some(cand) = fit_arma(&w, p, q, include_mean) {
                let better = match &best {
                    Some((_, _, b)) => cand.aicc < b.aicc,
                    None => true,
                };
                if better {
                    best = Some((p, q, cand));
                }
            }
        }
    }
    match best {
        Some((p, q, cand)) => Ok(spec_from_candidate(cand, p, d, q)),
        None => Ok(fallback_model(series)),
    }
}

fn check_length(series: &[f64], d: usize) -> Result<(), ArimaError> {
    if series.len() < d + 10 {
        return Err(ArimaError::SeriesTooShort { len: series.len(), needed: d + 10 });
    }
    Ok(())
}

fn spec_from_candidate(c: Candidate, p: usize, d: usize, q: usize) -> ArimaSpec {
    ArimaSpec {
        p,
        d,
        q,
        phi: c.phi,
        theta_ma: c.theta,
        intercept: c.intercept,
        sigma2: c.sigma2,
        aicc: c.aicc,
        fallback: false,
    }
}

/// Random walk with drift, the last-resort model when every grid candidate
/// is inadmissible.
fn fallback_model(series: &[f64]) -> ArimaSpec {
    let w = difference(series, 1);
    let n = w.len() as f64;
    let drift = w.iter().sum::<f64>() / n;
    let sigma2 = (w.iter().map(|v| (v - drift).powi(2)).sum::<f64>() / n).max(1e-300);
    ArimaSpec {
        p: 0,
        d: 1,
        q: 0,
        phi: vec![],
        theta_ma: vec![],
        intercept: drift,
        sigma2,
        aicc: f64::INFINITY,
        fallback: true,
    }
}

struct Candidate {
    phi: Vec<f64>,
    theta: Vec<f64>,
    intercept: f64,
    sigma2: f64,
    aicc: f64,
}

/// Residuals and conditional sum of squares of the ARMA equation on the
/// (differenced) series, conditioning on the first `p` observations and
/// zero pre-sample innovations.
fn css_residuals(w: &[f64], intercept: f64, phi: &[f64], theta: &[f64]) -> (Vec<f64>, f64) {
    let n = w.len();
    let p = phi.len();
    let mut eps = vec![0.0; n];
    let mut css = 0.0;
    for t in p..n {
        let mut e = w[t] - intercept;
        for (i, &ph) in phi.iter().enumerate() {
            e -= ph * w[t - 1 - i];
        }
        for (j, &th) in theta.iter().enumerate() {
            if t >= j + 1 {
                e -= th * eps[t - 1 - j];
            }
        }
        eps[t] = e;
        css += e * e;
    }
    (eps, css)
}

fn fit_arma(w: &[f64], p: usize, q: usize, include_mean: bool) -> Option<Candidate> {
    let n = w.len();
    let n_used = n.checked_sub(p)?;
    let k_params = p + q + usize::from(include_mean) + 1;
    if n_used <= k_params + 1 {
        return None;
    }
    let mean = w.iter().sum::<f64>() / n as f64;

    let (phi, theta, intercept, css) = if p == 0 && q == 0 {
        let c = if include_mean { mean } else { 0.0 };
        let (_, css) = css_residuals(w, c, &[], &[]);
        (vec![], vec![], c, css)
    } else {
        let mut objective = |v: &[f64]| {
            let (c, phi, theta) = decode(v, p, q, include_mean);
            let (_, css) = css_residuals(w, c, &phi, &theta);
            css
        };
        let starts = starting_points(w, p, q, include_mean, mean);
        let mut best: Option<(Vec<f64>, f64)> = None;
        for start in &starts {
            let (v, fv) = bfgs(&mut objective, start, 300);
            if best.as_ref().map_or(true, |(_, b)| fv < *b) {
                best = Some((v, fv));
            }
        }
        let (v, css) = best?;
        let (c, phi, theta) = decode(&v, p, q, include_mean);
        // The tanh map keeps parameters inside the admissible region but can
        // approach its boundary; enforce the root margin.
        if min_root_modulus(&phi) <= ROOT_MARGIN {
            return None;
        }
        let neg_theta: Vec<f64> = theta.iter().map(|t| -t).collect();
        if min_root_modulus(&neg_theta) <= ROOT_MARGIN {
            return None;
        }
        (phi, theta, c, css)
    };

    let sigma2 = (css / n_used as f64).max(1e-300);
    let loglik = -0.5 * n_used as f64 * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0);
    let kf = k_params as f64;
    let denom = n_used as f64 - kf - 1.0;
    let aicc = if denom > 0.0 { -2.0 * loglik + 2.0 * kf + 2.0 * kf * (kf + 1.0) / denom } else { f64::INFINITY };
    Some(Candidate { phi, theta, intercept, sigma2, aicc })
}

/// Unconstrained parameter vector -> (intercept, φ, θ) through the
/// tanh/partial-autocorrelation map.
fn decode(v: &[f64], p: usize, q: usize, include_mean: bool) -> (f64, Vec<f64>, Vec<f64>) {
    let offset = usize::from(include_mean);
    let c = if include_mean { v[0] } else { 0.0 };
    let pacs_ar: Vec<f64> = v[offset..offset + p].iter().map(|x| x.tanh()).collect();
    let phi = pacf_to_coeffs(&pacs_ar);
    let pacs_ma: Vec<f64> = v[offset + p..offset + p + q].iter().map(|x| x.tanh()).collect();
    let theta: Vec<f64> = pacf_to_coeffs(&pacs_ma).iter().map(|a| -a).collect();
    (c, phi, theta)
}

fn starting_points(w: &[f64], p: usize, q: usize, include_mean: bool, mean: f64) -> Vec<Vec<f64>> {
    let dim = usize::from(include_mean) + p + q;
    let mut zero_start = vec![0.0; dim];
    if include_mean {
        zero_start[0] = mean;
    }
    let mut starts = vec![zero_start];
    if let Some((c0, phi0, theta0)) = hannan_rissanen(w, p, q) {
        let mut v = Vec::with_capacity(dim);
        if include_mean {
            v.push(c0);
        }
        if let (Some(ar), Some(ma)) = (encode_pacf(&phi0), encode_pacf(&theta0.iter().map(|t| -t).collect::<Vec<_>>())) {
            v.extend(ar);
            v.extend(ma);
            starts.push(v);
        }
    }
    starts
}

/// Hannan–Rissanen initial values: a long autoregression supplies residual
/// proxies, then one least-squares pass gives (c, φ, θ).
fn hannan_rissanen(w: &[f64], p: usize, q: usize) -> Option<(f64, Vec<f64>, Vec<f64>)> {
    let n = w.len();
    let k = (n / 4).clamp(p + q + 1, 12.min(n.saturating_sub(2)));
    if n < k + p.max(q) + p + q + 3 {
        return None;
    }
    // Step 1: AR(k) residuals.
    let resid = {
        let rows = n - k;
        let mut design = DMatrix::zeros(rows, k + 1);
        let mut y = DMatrix::zeros(rows, 1);
        for t in k..n {
            design[(t - k, 0)] = 1.0;
            for i in 0..k {
                design[(t - k, i + 1)] = w[t - 1 - i];
            }
            y[(t - k, 0)] = w[t];
        }
        let beta = ols(&design, &y)?;
        let mut resid = vec![0.0; n];
        for t in k..n {
            let mut fitted = beta[0];
            for i in 0..k {
                fitted += beta[i + 1] * w[t - 1 - i];
            }
            resid[t] = w[t] - fitted;
        }
        resid
    };
    // Step 2: regression on lagged values and lagged residuals.
    let t0 = k + p.max(q);
    let rows = n - t0;
    let cols = 1 + p + q;
    if rows <= cols {
        return None;
    }
    let mut design = DMatrix::zeros(rows, cols);
    let mut y = DMatrix::zeros(rows, 1);
    for t in t0..n {
        design[(t - t0, 0)] = 1.0;
        for i in 0..p {
            design[(t - t0, 1 + i)] = w[t - 1 - i];
        }
        for j in 0..q {
            design[(t - t0, 1 + p + j)] = resid[t - 1 - j];
        }
        y[(t - t0, 0)] = w[t];
    }
    let beta = ols(&design, &y)?;
    let c = beta[0];
    let phi: Vec<f64> = (0..p).map(|i| beta[1 + i]).collect();
    let theta: Vec<f64> = (0..q).map(|j| beta[1 + p + j]).collect();
    Some((c, phi, theta))
}

fn ols(design: &DMatrix<f64>, y: &DMatrix<f64>) -> Option<Vec<f64>> {
    let normal = design.transpose() * design;
    let rhs = design.transpose() * y;
    let chol = normal.cholesky()?;
    Some(chol.solve(&rhs).column(0).iter().copied().collect())
}

/// Durbin–Levinson map from partial autocorrelations to AR coefficients;
/// `|pac| < 1` guarantees all polynomial roots outside the unit circle.
fn pacf_to_coeffs(pacs: &[f64]) -> Vec<f64> {
    let p = pacs.len();
    let mut coeffs = vec![0.0; p];
    for k in 0..p {
        let prev = coeffs.clone();
        coeffs[k] = pacs[k];
        for i in 0..k {
            coeffs[i] = prev[i] - pacs[k] * prev[k - 1 - i];
        }
    }
    coeffs
}

/// Inverse of [`pacf_to_coeffs`] followed by `atanh`, for translating
/// initial values into the unconstrained space. Fails outside the
/// stationarity region.
fn encode_pacf(coeffs: &[f64]) -> Option<Vec<f64>> {
    let p = coeffs.len();
    let mut work = coeffs.to_vec();
    let mut pacs = vec![0.0; p];
    for k in (0..p).rev() {
        let r = work[k];
        if r.abs() >= 1.0 {
            return None;
        }
        pacs[k] = r;
        let prev = work.clone();
        let denom = 1.0 - r * r;
        for i in 0..k {
            work[i] = (prev[i] + r * prev[k - 1 - i]) / denom;
        }
    }
    Some(pacs.iter().map(|r| r.clamp(-0.999, 0.999).atanh()).collect())
}

/// Smallest root modulus of `1 - c_1 z - ... - c_p z^p` (infinite when all
/// coefficients vanish).
fn min_root_modulus(coeffs: &[f64]) -> f64 {
    let mut eff = coeffs.len();
    while eff > 0 && coeffs[eff - 1].abs() < 1e-12 {
        eff -= 1;
    }
    if eff == 0 {
        return f64::INFINITY;
    }
    // Characteristic roots are eigenvalues of the companion matrix; the
    // polynomial roots are their reciprocals.
    let mut companion = DMatrix::zeros(eff, eff);
    for i in 0..eff {
        companion[(0, i)] = coeffs[i];
    }
    for i in 1..eff {
        companion[(i, i - 1)] = 1.0;
    }
    let eigs = companion.complex_eigenvalues();
    let max_char = eigs.iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if max_char <= 1e-300 {
        f64::INFINITY
    } else {
        1.0 / max_char
    }
}

/// ψ-weights of the full ARIMA process (AR polynomial times `(1-B)^d`),
/// used for the forecast error variance.
fn psi_weights(spec: &ArimaSpec, h: usize) -> Vec<f64> {
    // Combined lag polynomial 1 - a_1 B - ... - a_{p+d} B^{p+d}.
    let mut poly = vec![1.0];
    for &ph in &spec.phi {
        poly.push(-ph);
    }
    for _ in 0..spec.d {
        let mut next = vec![0.0; poly.len() + 1];
        for (i, &c) in poly.iter().enumerate() {
            next[i] += c;
            next[i + 1] -= c;
        }
        poly = next;
    }
    let a: Vec<f64> = poly[1..].iter().map(|c| -c).collect();
    let mut psi = vec![0.0; h];
    for k in 0..h {
        if k == 0 {
            psi[0] = 1.0;
            continue;
        }
        let mut v = if k <= spec.q { spec.theta_ma[k - 1] } else { 0.0 };
        for (i, &ai) in a.iter().enumerate() {
            if k > i {
                v += ai * psi[k - 1 - i];
            }
        }
        psi[k] = v;
    }
    psi
}

/// Point forecasts with Gaussian δ-prediction intervals.
pub fn forecast(
    spec: &ArimaSpec,
    series: &[f64],
    h: usize,
    deltas: &[f64],
) -> Result<ScoreForecast, ArimaError> {
    if h == 0 {
        return Err(ArimaError::ZeroHorizon);
    }
    for &delta in deltas {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(ArimaError::BadDelta(delta));
        }
    }
    let w = difference(series, spec.d);
    let (eps, _) = css_residuals(&w, spec.intercept, &spec.phi, &spec.theta_ma);
    let n = w.len();

    // Forecast the differenced series.
    let mut w_ext = w.clone();
    let mut eps_ext = eps;
    for _ in 0..h {
        let t = w_ext.len();
        let mut v = spec.intercept;
        for (i, &ph) in spec.phi.iter().enumerate() {
            v += ph * w_ext[t - 1 - i];
        }
        for (j, &th) in spec.theta_ma.iter().enumerate() {
            if t >= j + 1 {
                v += th * eps_ext[t - 1 - j];
            }
        }
        w_ext.push(v);
        eps_ext.push(0.0);
    }
    let mut points: Vec<f64> = w_ext[n..].to_vec();

    // Undifference: integrate back through the stored level tails.
    if spec.d > 0 {
        let mut tails = Vec::with_capacity(spec.d);
        let mut cur = series.to_vec();
        for _ in 0..spec.d {
            tails.push(*cur.last().expect("nonempty series"));
            cur = difference(&cur, 1);
        }
        for &tail in tails.iter().rev() {
            let mut level = tail;
            for v in points.iter_mut() {
                level += *v;
                *v = level;
            }
        }
    }

    let psi = psi_weights(spec, h);
    let mut cum_var = Vec::with_capacity(h);
    let mut acc = 0.0;
    for &w_j in &psi {
        acc += w_j * w_j;
        cum_var.push(spec.sigma2 * acc);
    }

    let mut intervals = Vec::with_capacity(deltas.len());
    for &delta in deltas {
        let z = norm_quantile(0.5 * (1.0 + delta));
        let lower: Vec<f64> =
            points.iter().zip(&cum_var).map(|(&pt, &v)| pt - z * v.sqrt()).collect();
        let upper: Vec<f64> =
            points.iter().zip(&cum_var).map(|(&pt, &v)| pt + z * v.sqrt()).collect();
        intervals.push(DeltaIntervals { delta, lower, upper });
    }

    Ok(ScoreForecast { component: 0, horizon: h, points, intervals })
}
