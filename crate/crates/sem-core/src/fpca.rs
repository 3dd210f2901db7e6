//! Functional principal component analysis of centered coefficient data.
//!
//! B-splines are not orthonormal, so the sample-covariance eigenproblem is
//! solved in the metric of the Gram matrix `W`: with `C = (m-1)^{-1} AᵀA`,
//! the symmetric eigenproblem of `W^{1/2} C W^{1/2}` is solved and its
//! eigenvectors are mapped back through `W^{-1/2}`, which makes the
//! eigenfunctions exactly orthonormal in `L²`.

use crate::bspline::{make_basis, BasisError, BsplineBasis};
use crate::params::KeyKind;
use crate::smooth::FunctionalDataSet;
use nalgebra::{DMatrix, DVector};
use std::io::{BufRead, Write};
use thiserror::Error;

/// Eigenvalues below `RANK_CUTOFF * λ₁` are treated as numerical zeros.
pub const RANK_CUTOFF: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FpcaError {
    #[error("need at least 2 cohorts, got {0}")]
    TooFewCohorts(usize),
    #[error("contribution threshold must lie in (0, 1], got {0}")]
    BadTheta(f64),
    #[error("internal invariant violation: Gram matrix is not positive definite")]
    GramNotPd,
    #[error("scores row has length {got}, expected at most {max}")]
    ScoresLength { got: usize, max: usize },
    #[error(transparent)]
    Basis(#[from] BasisError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file line {line}: {msg}")]
    BadModelFile { line: usize, msg: String },
}

/// Fitted FPCA model: mean curve, eigenstructure, and training scores.
#[derive(Debug, Clone)]
pub struct FpcaModel {
    pub kind: KeyKind,
    pub basis: BsplineBasis,
    pub cohorts: Vec<i32>,
    pub mean_coeffs: DVector<f64>,
    /// `L x K`; column `j` holds the basis coefficients of eigenfunction
    /// `ê_j`.
    pub eig_coeffs: DMatrix<f64>,
    /// Retained eigenvalues, nonincreasing.
    pub eigvals: Vec<f64>,
    /// `m x K` principal-component scores of the training cohorts.
    pub scores: DMatrix<f64>,
    /// Cumulative contribution ratios; the final entry is exactly 1.
    pub contrib: Vec<f64>,
    pub k_selected: usize,
    /// True when the centered data vanished (all eigenvalues zero).
    pub degenerate: bool,
}

/// Smallest `k` whose cumulative contribution ratio reaches `theta`; the
/// flag is set when all eigenvalues are zero (`k = 1` by convention).
pub fn select_k(eigvals: &[f64], theta: f64) -> (usize, bool) {
    let total: f64 = eigvals.iter().sum();
    if !(total > 0.0) {
        return (1, true);
    }
    let mut cum = 0.0;
    for (i, &v) in eigvals.iter().enumerate() {
        cum += v;
        let ratio = if i + 1 == eigvals.len() { 1.0 } else { cum / total };
        if ratio >= theta {
            return (i + 1, false);
        }
    }
    (eigvals.len(), false)
}

/// Fits the FPCA model on centered functional data.
pub fn fit_fpca(fds: &FunctionalDataSet, kind: KeyKind, theta: f64) -> Result<FpcaModel, FpcaError> {
    let m = fds.n_cohorts();
    if m < 2 {
        return Err(FpcaError::TooFewCohorts(m));
    }
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(FpcaError::BadTheta(theta));
    }
    let l = fds.basis.len();
    let w = fds.basis.gram().clone();
    let (w_half, w_half_inv) = symmetric_sqrt(&w).ok_or(FpcaError::GramNotPd)?;

    let cov = fds.centered.transpose() * &fds.centered / (m as f64 - 1.0);
    let mut mat = &w_half * cov * &w_half;
    let sym = (&mat + mat.transpose()) * 0.5;
    mat = sym;
    let eig = mat.symmetric_eigen();
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());

    let lambda1 = eig.eigenvalues[order[0]].max(0.0);
    let cutoff = RANK_CUTOFF * lambda1;
    let mut retained: Vec<usize> = order.iter().copied().filter(|&j| eig.eigenvalues[j] > cutoff).collect();
    let degenerate = retained.is_empty();
    if degenerate {
        retained.push(order[0]);
    }
    let k = retained.len();

    let mut eig_coeffs = DMatrix::zeros(l, k);
    let mut eigvals = Vec::with_capacity(k);
    let (lo, _) = fds.basis.domain();
    for (col, &j) in retained.iter().enumerate() {
        let u = eig.eigenvectors.column(j);
        let mut b = &w_half_inv * u;
        // Deterministic sign: positive integral, ties broken at the left
        // endpoint.
        let integral = fds.basis.integrals().dot(&b);
        let sign = if integral.abs() > 1e-12 {
            integral.signum()
        } else {
            let at_lo = fds.basis.eval(&b, lo).unwrap_or(0.0);
            if at_lo < 0.0 {
                -1.0
            } else {
                1.0
            }
        };
        b *= sign;
        eig_coeffs.set_column(col, &b);
        eigvals.push(if degenerate { 0.0 } else { eig.eigenvalues[j].max(0.0) });
    }

    let scores = if degenerate { DMatrix::zeros(m, k) } else { &fds.centered * &w * &eig_coeffs };

    let total: f64 = eigvals.iter().sum();
    let mut contrib = Vec::with_capacity(k);
    let mut cum = 0.0;
    for (i, &v) in eigvals.iter().enumerate() {
        cum += v;
        contrib.push(if i + 1 == k || total <= 0.0 { 1.0 } else { cum / total });
    }
    let (k_selected, _) = select_k(&eigvals, theta);

    Ok(FpcaModel {
        kind,
        basis: fds.basis.clone(),
        cohorts: fds.cohorts.clone(),
        mean_coeffs: fds.mean_coeffs.clone(),
        eig_coeffs,
        eigvals,
        scores,
        contrib,
        k_selected,
        degenerate,
    })
}

/// Symmetric square root and inverse square root of an SPD matrix.
fn symmetric_sqrt(w: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let eig = w.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    if eig.eigenvalues.iter().any(|&v| v <= 1e-14 * max) {
        return None;
    }
    let q = &eig.eigenvectors;
    let half = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.sqrt()));
    let half_inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v.sqrt()));
    Some((q * half * q.transpose(), q * half_inv * q.transpose()))
}

impl FpcaModel {
    pub fn n_components(&self) -> usize {
        self.eigvals.len()
    }

    /// Basis coefficients of the curve with the given component scores
    /// (mean plus score-weighted eigenfunctions).
    pub fn reconstruct_coeffs(&self, scores: &[f64]) -> Result<DVector<f64>, FpcaError> {
        if scores.len() > self.n_components() {
            return Err(FpcaError::ScoresLength { got: scores.len(), max: self.n_components() });
        }
        let mut coeffs = self.mean_coeffs.clone();
        for (j, &z) in scores.iter().enumerate() {
            coeffs += self.eig_coeffs.column(j) * z;
        }
        Ok(coeffs)
    }

    /// Curve value at age `t` for the given scores.
    pub fn reconstruct(&self, scores: &[f64], t: f64) -> Result<f64, FpcaError> {
        let coeffs = self.reconstruct_coeffs(scores)?;
        Ok(self.basis.eval(&coeffs, t)?)
    }

    /// Eigenfunction `ê_j` evaluated at `t`.
    pub fn eigenfunction(&self, j: usize, t: f64) -> Result<f64, FpcaError> {
        let col = self.eig_coeffs.column(j).into_owned();
        Ok(self.basis.eval(&col, t)?)
    }

    /// Score series of component `j` across the training cohorts.
    pub fn score_series(&self, j: usize) -> Vec<f64> {
        self.scores.column(j).iter().copied().collect()
    }

    /// Writes the versioned model file.
    pub fn write<W: Write>(&self, mut out: W) -> Result<(), FpcaError> {
        let (lo, hi) = self.basis.domain();
        writeln!(out, "sem-fpca-model v1")?;
        writeln!(out, "kind {}", self.kind.tag())?;
        writeln!(out, "domain {} {}", lo, hi)?;
        writeln!(out, "basis {} {}", self.basis.len(), self.basis.order())?;
        writeln!(out, "cohorts {}", join(self.cohorts.iter()))?;
        writeln!(out, "k_selected {}", self.k_selected)?;
        writeln!(out, "degenerate {}", self.degenerate)?;
        writeln!(out, "eigvals {}", join(self.eigvals.iter()))?;
        writeln!(out, "contrib {}", join(self.contrib.iter()))?;
        writeln!(out, "mean {}", join(self.mean_coeffs.iter()))?;
        for j in 0..self.n_components() {
            writeln!(out, "eigvec {}", join(self.eig_coeffs.column(j).iter()))?;
        }
        for c in 0..self.scores.nrows() {
            writeln!(out, "scores {}", join(self.scores.row(c).iter()))?;
        }
        writeln!(out, "end")?;
        Ok(())
    }

    /// Reads a model file written by [`FpcaModel::write`].
    pub fn read<R: BufRead>(reader: R) -> Result<Self, FpcaError> {
        let mut lines = reader.lines().enumerate();
        let mut read_line = move || -> Option<(usize, std::io::Result<String>)> { lines.next() };
        let mut next = move |expect: &str| -> Result<(usize, Vec<String>), FpcaError> {
            match read_line() {
                Some((i, Ok(line))) => {
                    let mut parts = line.split_whitespace().map(str::to_string);
                    let tag = parts.next().unwrap_or_default();
                    if tag != expect {
                        return Err(FpcaError::BadModelFile {
                            line: i + 1,
                            msg: format!("expected {expect:?}, found {tag:?}"),
                        });
                    }
                    Ok((i + 1, parts.collect()))
                }
                Some((i, Err(e))) => Err(FpcaError::BadModelFile { line: i + 1, msg: e.to_string() }),
                None => Err(FpcaError::BadModelFile { line: 0, msg: format!("missing {expect:?} line") }),
            }
        };

        let (line, version) = next("sem-fpca-model")?;
        if version != vec!["v1".to_string()] {
            return Err(FpcaError::BadModelFile { line, msg: format!("unsupported version {version:?}") });
        }

        let (line, kind) = next("kind")?;
        let kind = kind
            .first()
            .and_then(|s| KeyKind::parse_tag(s))
            .ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad kind".into() })?;
        let (line, domain) = next("domain")?;
        let (lo, hi) = parse_two(&domain).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad domain".into() })?;
        let (line, basis_spec) = next("basis")?;
        let (l, order): (usize, usize) =
            parse_two(&basis_spec).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad basis".into() })?;
        let basis = make_basis(lo, hi, l, order)
            .map_err(|e| FpcaError::BadModelFile { line, msg: e.to_string() })?;
        let (line, cohorts) = next("cohorts")?;
        let cohorts: Vec<i32> = parse_all(&cohorts)
            .ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad cohorts".into() })?;
        let (line, ks) = next("k_selected")?;
        let k_selected: usize =
            parse_one(&ks).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad k_selected".into() })?;
        let (line, deg) = next("degenerate")?;
        let degenerate: bool =
            parse_one(&deg).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad degenerate".into() })?;
        let (line, ev) = next("eigvals")?;
        let eigvals: Vec<f64> =
            parse_all(&ev).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad eigvals".into() })?;
        let k = eigvals.len();
        let (line, contrib) = next("contrib")?;
        let contrib: Vec<f64> =
            parse_all(&contrib).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad contrib".into() })?;
        let (line, mean) = next("mean")?;
        let mean: Vec<f64> =
            parse_all(&mean).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad mean".into() })?;
        if mean.len() != l || contrib.len() != k || k_selected > k || k == 0 {
            return Err(FpcaError::BadModelFile { line, msg: "inconsistent dimensions".into() });
        }
        let mut eig_coeffs = DMatrix::zeros(l, k);
        for j in 0..k {
            let (line, row) = next("eigvec")?;
            let row: Vec<f64> =
                parse_all(&row).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad eigvec".into() })?;
            if row.len() != l {
                return Err(FpcaError::BadModelFile { line, msg: "eigvec length mismatch".into() });
            }
            eig_coeffs.set_column(j, &DVector::from_column_slice(&row));
        }
        let m = cohorts.len();
        let mut scores = DMatrix::zeros(m, k);
        for c in 0..m {
            let (line, row) = next("scores")?;
            let row: Vec<f64> =
                parse_all(&row).ok_or_else(|| FpcaError::BadModelFile { line, msg: "bad scores".into() })?;
            if row.len() != k {
                return Err(FpcaError::BadModelFile { line, msg: "scores length mismatch".into() });
            }
            for j in 0..k {
                scores[(c, j)] = row[j];
            }
        }
        next("end")?;

        Ok(FpcaModel {
            kind,
            basis,
            cohorts,
            mean_coeffs: DVector::from_column_slice(&mean),
            eig_coeffs,
            eigvals,
            scores,
            contrib,
            k_selected,
            degenerate,
        })
    }
}

fn join<T: std::fmt::Display>(items: impl Iterator<Item = T>) -> String {
    items.map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn parse_one<T: std::str::FromStr>(parts: &[String]) -> Option<T> {
    parts.first().and_then(|s| s.parse().ok())
}

fn parse_two<T: std::str::FromStr, U: std::str::FromStr>(parts: &[String]) -> Option<(T, U)> {
    Some((parts.first()?.parse().ok()?, parts.get(1)?.parse().ok()?))
}

fn parse_all<T: std::str::FromStr>(parts: &[String]) -> Option<Vec<T>> {
    parts.iter().map(|s| s.parse().ok()).collect()
}
