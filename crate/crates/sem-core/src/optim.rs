//! Small dense optimizers shared by score modification (simplex with box
//! clamping) and ARIMA estimation (quasi-Newton polish).

use nalgebra::{DMatrix, DVector};

/// Nelder–Mead simplex restricted to a box by projecting every trial point
/// onto the feasible region. Returns the best point ever evaluated, so the
/// result never falls behind the start value.
pub(crate) fn nelder_mead_box<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    start: &[f64],
    bounds: &[(f64, f64)],
    init_step: &[f64],
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let n = start.len();
    assert!(n > 0 && bounds.len() == n && init_step.len() == n);
    let project = |x: &mut [f64]| {
        for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = xi.clamp(lo, hi);
        }
    };

    let mut best_x = start.to_vec();
    project(&mut best_x);
    let mut best_f = f(&best_x);

    // Initial simplex: start plus one perturbed vertex per coordinate.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((best_x.clone(), best_f));
    for i in 0..n {
        let mut v = best_x.clone();
        let step = if v[i] + init_step[i] <= bounds[i].1 { init_step[i] } else { -init_step[i] };
        v[i] += step;
        project(&mut v);
        let fv = f(&v);
        if fv < best_f {
            best_f = fv;
            best_x = v.clone();
        }
        simplex.push((v, fv));
    }

    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[n].1 - simplex[0].1;
        let diam: f64 = (0..n)
            .map(|i| {
                let lo = simplex.iter().map(|(v, _)| v[i]).fold(f64::INFINITY, f64::min);
                let hi = simplex.iter().map(|(v, _)| v[i]).fold(f64::NEG_INFINITY, f64::max);
                hi - lo
            })
            .fold(0.0, f64::max);
        if spread <= 1e-15 * (1.0 + simplex[0].1.abs()) && diam <= 1e-12 * (1.0 + best_x.iter().fold(0.0f64, |a, &v| a.max(v.abs()))) {
            break;
        }

        let centroid: Vec<f64> =
            (0..n).map(|i| simplex[..n].iter().map(|(v, _)| v[i]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let mut trial = |coef: f64| -> (Vec<f64>, f64) {
            let mut x: Vec<f64> =
                centroid.iter().zip(&worst.0).map(|(&c, &w)| c + coef * (c - w)).collect();
            project(&mut x);
            let fx = f(&x);
            (x, fx)
        };

        let (xr, fr) = trial(alpha);
        let replacement = if fr < simplex[0].1 {
            let (xe, fe) = trial(gamma);
            if fe < fr {
                (xe, fe)
            } else {
                (xr, fr)
            }
        } else if fr < simplex[n - 1].1 {
            (xr, fr)
        } else {
            let (xc, fc) = if fr < worst.1 { trial(rho) } else { trial(-rho) };
            if fc < worst.1.min(fr) {
                (xc, fc)
            } else {
                // Shrink toward the best vertex.
                for i in 1..=n {
                    let mut v: Vec<f64> = simplex[0]
                        .0
                        .iter()
                        .zip(&simplex[i].0)
                        .map(|(&b, &w)| b + sigma * (w - b))
                        .collect();
                    project(&mut v);
                    let fv = f(&v);
                    if fv < best_f {
                        best_f = fv;
                        best_x = v.clone();
                    }
                    simplex[i] = (v, fv);
                }
                continue;
            }
        };
        if replacement.1 < best_f {
            best_f = replacement.1;
            best_x = replacement.0.clone();
        }
        simplex[n] = replacement;
    }
    (best_x, best_f)
}

/// BFGS with central-difference gradients and Armijo backtracking.
pub(crate) fn bfgs<F: FnMut(&[f64]) -> f64>(f: &mut F, start: &[f64], max_iter: usize) -> (Vec<f64>, f64) {
    let n = start.len();
    if n == 0 {
        let fx = f(start);
        return (start.to_vec(), fx);
    }
    let grad = |f: &mut F, x: &DVector<f64>| -> DVector<f64> {
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let h = 6e-6 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            g[i] = (f(xp.as_slice()) - f(xm.as_slice())) / (2.0 * h);
        }
        g
    };

    let mut x = DVector::from_column_slice(start);
    let mut fx = f(x.as_slice());
    let mut h_inv = DMatrix::identity(n, n);
    let mut g = grad(f, &x);

    for _ in 0..max_iter {
        if g.norm() <= 1e-10 * (1.0 + fx.abs()) {
            break;
        }
        let mut dir = -(&h_inv * &g);
        if dir.dot(&g) >= 0.0 {
            // Not a descent direction; reset to steepest descent.
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
        }
        let mut step = 1.0;
        let slope = g.dot(&dir);
        let mut x_new = &x + &dir * step;
        let mut f_new = f(x_new.as_slice());
        let mut ls = 0;
        while f_new > fx + 1e-4 * step * slope && ls < 40 {
            step *= 0.5;
            x_new = &x + &dir * step;
            f_new = f(x_new.as_slice());
            ls += 1;
        }
        if f_new >= fx {
            break;
        }
        let g_new = grad(f, &x_new);
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::identity(n, n);
            let left = &i - &s * y.transpose() * rho;
            let right = &i - &y * s.transpose() * rho;
            h_inv = left * h_inv * right + &s * s.transpose() * rho;
        }
        let delta = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if delta <= 1e-14 * (1.0 + fx.abs()) {
            break;
        }
    }
    (x.as_slice().to_vec(), fx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn simplex_finds_interior_quadratic_minimum() {
        let mut f = |x: &[f64]| (x[0] - 0.3).powi(2) + 2.0 * (x[1] + 0.7).powi(2);
        let (x, fx) = nelder_mead_box(
            &mut f,
            &[0.0, 0.0],
            &[(-2.0, 2.0), (-2.0, 2.0)],
            &[0.5, 0.5],
            2000,
        );
        assert_abs_diff_eq!(x[0], 0.3, epsilon = 1e-6);
        assert_abs_diff_eq!(x[1], -0.7, epsilon = 1e-6);
        assert!(fx < 1e-11);
    }

    #[test]
    fn simplex_converges_to_box_corner() {
        // Unconstrained optimum (2, 2) lies outside the box; the constrained
        // optimum is the corner (1, 1).
        let mut f = |x: &[f64]| (x[0] - 2.0).powi(2) + (x[1] - 2.0).powi(2);
        let (x, _) = nelder_mead_box(&mut f, &[0.0, 0.0], &[(-1.0, 1.0), (-1.0, 1.0)], &[0.4, 0.4], 4000);
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-7);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-7);
    }

    #[test]
    fn bfgs_minimizes_rosenbrock() {
        let mut f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let (x, fx) = bfgs(&mut f, &[-1.2, 1.0], 500);
        assert!(fx < 1e-10, "f = {fx} at {x:?}");
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-4);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-4);
    }
}
