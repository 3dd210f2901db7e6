//! B-spline basis on an age interval, with the Gram matrix of pairwise
//! `L²` inner products.
//!
//! The basis is clamped with equally spaced interior knots. B-splines are not
//! orthonormal, so everything downstream that needs `L²` geometry (the FPCA
//! eigenproblem, scores, eigenfunction normalisation) works through the Gram
//! matrix computed here.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BasisError {
    #[error("need at least as many basis functions as the order: L = {l} < order = {order}")]
    TooFewBasisFunctions { l: usize, order: usize },
    #[error("spline order must be at least 1, got 0")]
    ZeroOrder,
    #[error("domain is empty: [{lo}, {hi}]")]
    EmptyDomain { lo: f64, hi: f64 },
    #[error("evaluation point {t} outside the basis domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },
}

/// Clamped B-spline basis of `n_basis` functions on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BsplineBasis {
    order: usize,
    n_basis: usize,
    lo: f64,
    hi: f64,
    knots: Vec<f64>,
    gram: DMatrix<f64>,
    integrals: DVector<f64>,
}

/// Builds the basis with equally spaced interior knots and precomputes the
/// Gram matrix by per-interval Gauss–Legendre quadrature (exact for the
/// piecewise-polynomial products).
pub fn make_basis(lo: f64, hi: f64, n_basis: usize, order: usize) -> Result<BsplineBasis, BasisError> {
    if order == 0 {
        return Err(BasisError::ZeroOrder);
    }
    if n_basis < order {
        return Err(BasisError::TooFewBasisFunctions { l: n_basis, order });
    }
    if !(lo < hi) {
        return Err(BasisError::EmptyDomain { lo, hi });
    }
    let n_interior = n_basis - order;
    let n_intervals = n_interior + 1;
    let mut knots = Vec::with_capacity(n_basis + order);
    knots.extend(std::iter::repeat(lo).take(order));
    for i in 1..=n_interior {
        knots.push(lo + (hi - lo) * i as f64 / n_intervals as f64);
    }
    knots.extend(std::iter::repeat(hi).take(order));

    let mut basis = BsplineBasis {
        order,
        n_basis,
        lo,
        hi,
        knots,
        gram: DMatrix::zeros(n_basis, n_basis),
        integrals: DVector::zeros(n_basis),
    };
    basis.compute_gram();
    Ok(basis)
}

impl BsplineBasis {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.n_basis
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Gram matrix `W` with `W[k][l] = ∫ h_k h_l dt`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Integrals `∫ h_l dt` of the individual basis functions.
    pub fn integrals(&self) -> &DVector<f64> {
        &self.integrals
    }

    /// Values of the `order` basis functions that are nonzero at `t`,
    /// together with the index of the first one.
    pub fn basis_values(&self, t: f64) -> Result<(usize, Vec<f64>), BasisError> {
        if !(t >= self.lo && t <= self.hi) || !t.is_finite() {
            return Err(BasisError::OutOfDomain { t, lo: self.lo, hi: self.hi });
        }
        Ok(self.basis_values_unchecked(t))
    }

    fn basis_values_unchecked(&self, t: f64) -> (usize, Vec<f64>) {
        let span = self.find_span(t);
        let k = self.order;
        let mut vals = vec![0.0; k];
        vals[0] = 1.0;
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        for j in 1..k {
            left[j] = t - self.knots[span + 1 - j];
            right[j] = self.knots[span + j] - t;
            let mut saved = 0.0;
            for r in 0..j {
                let tmp = vals[r] / (right[r + 1] + left[j - r]);
                vals[r] = saved + right[r + 1] * tmp;
                saved = left[j - r] * tmp;
            }
            vals[j] = saved;
        }
        (span + 1 - k, vals)
    }

    /// Knot span index `k` with `knots[k] <= t < knots[k+1]` (the last
    /// nonempty span for `t = hi`).
    fn find_span(&self, t: f64) -> usize {
        let last = self.n_basis - 1;
        if t >= self.hi {
            return last;
        }
        let mut lo = self.order - 1;
        let mut hi = last;
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            if self.knots[mid] <= t {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Evaluates the expansion `Σ coeffs[l] h_l(t)` by de Boor's algorithm.
    pub fn eval(&self, coeffs: &DVector<f64>, t: f64) -> Result<f64, BasisError> {
        assert_eq!(coeffs.len(), self.n_basis, "coefficient length mismatch");
        let (first, vals) = self.basis_values(t)?;
        Ok(vals.iter().enumerate().map(|(i, v)| coeffs[first + i] * v).sum())
    }

    /// Design matrix of basis values at the given points.
    pub fn design_matrix(&self, ts: &[f64]) -> Result<DMatrix<f64>, BasisError> {
        let mut m = DMatrix::zeros(ts.len(), self.n_basis);
        for (row, &t) in ts.iter().enumerate() {
            let (first, vals) = self.basis_values(t)?;
            for (i, v) in vals.iter().enumerate() {
                m[(row, first + i)] = *v;
            }
        }
        Ok(m)
    }

    fn compute_gram(&mut self) {
        let (nodes, weights) = gauss_legendre(self.order + 1);
        let mut gram = DMatrix::zeros(self.n_basis, self.n_basis);
        let mut ints = DVector::zeros(self.n_basis);
        for iv in (self.order - 1)..self.n_basis {
            let (a, b) = (self.knots[iv], self.knots[iv + 1]);
            if b <= a {
                continue;
            }
            let half = 0.5 * (b - a);
            let mid = 0.5 * (a + b);
            for (&xi, &wi) in nodes.iter().zip(&weights) {
                let t = mid + half * xi;
                let w = half * wi;
                let (first, vals) = self.basis_values_unchecked(t);
                for i in 0..self.order {
                    ints[first + i] += w * vals[i];
                    for j in 0..self.order {
                        gram[(first + i, first + j)] += w * vals[i] * vals[j];
                    }
                }
            }
        }
        self.gram = gram;
        self.integrals = ints;
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    // (1 - x^2) P_n'(x) = n (P_{n-1}(x) - x P_n(x)).
    let d = n as f64 * (p0 - x * p1) / (1.0 - x * x);
    (p1, d)
}
