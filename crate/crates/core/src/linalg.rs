//! Small linear-algebra kernels: preconditioned conjugate gradient for the
//! SPD systems of the heat flow, and a cyclic tridiagonal solver used by the
//! 1-D transport routines.

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Clone, Debug)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖b − A x‖₂` recomputed from scratch at exit.
    pub residual: f64,
}

/// Jacobi-preconditioned CG for `A x = b` with SPD `A` given as an action.
/// Converges when the true residual is at most `tol·‖b‖₂`; restarts from
/// the recomputed residual to shed rounding drift.
pub fn conjugate_gradient<F>(
    apply: F,
    diag: &[f64],
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = b.len();
    let target = tol * norm2(b);
    let mut x = x0.map_or_else(|| vec![0.0; n], <[f64]>::to_vec);
    let true_residual = |x: &[f64]| -> Vec<f64> {
        let ax = apply(x);
        b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
    };
    let mut r = true_residual(&x);
    let mut res = norm2(&r);
    let mut iterations = 0;
    let restart = n.max(8) * 2;
    while res > target && iterations < max_iter {
        let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, d)| ri / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for _ in 0..restart {
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            let ap = apply(&p);
            let pap = dot(&p, &ap);
            if pap <= 0.0 {
                break;
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            if norm2(&r) <= 0.5 * target {
                break;
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        r = true_residual(&x);
        let new_res = norm2(&r);
        if new_res >= res && new_res > target {
            // Stagnated at rounding level.
            res = new_res;
            break;
        }
        res = new_res;
    }
    if res > target {
        return Err(Error::LinearSolve {
            residual: res / norm2(b).max(f64::MIN_POSITIVE),
            tolerance: tol,
        });
    }
    Ok(CgOutcome {
        x,
        iterations,
        residual: res,
    })
}

/// Solves a tridiagonal system with `lower[i]` multiplying `x[i−1]` and
/// `upper[i]` multiplying `x[i+1]` (`lower[0]`, `upper[n−1]` ignored).
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / denom } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Cyclic tridiagonal system: like [`solve_tridiagonal`] plus the corner
/// couplings `lower[0]·x[n−1]` in row 0 and `upper[n−1]·x[0]` in row n−1.
/// Sherman–Morrison on the open chain; requires `n ≥ 3`.
pub fn solve_cyclic_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &[f64],
) -> Vec<f64> {
    let n = diag.len();
    assert!(n >= 3, "cyclic tridiagonal solve needs n >= 3");
    let alpha = upper[n - 1];
    let beta = lower[0];
    let gamma = -diag[0];
    let mut bb = diag.to_vec();
    bb[0] -= gamma;
    bb[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(lower, &bb, upper, rhs);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(lower, &bb, upper, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    #[test]
    fn cg_matches_dense_solve() {
        let n = 12;
        let a = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                4.0 + i as f64 * 0.1
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        });
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let apply = |x: &[f64]| (&a * DVector::from_column_slice(x)).as_slice().to_vec();
        let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        let out = conjugate_gradient(apply, &diag, &b, None, 1e-13, 1000).unwrap();
        let exact = a
            .clone()
            .lu()
            .solve(&DVector::from_column_slice(&b))
            .unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(out.x[i], exact[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn cyclic_solver_matches_dense() {
        let n = 7;
        let lower: Vec<f64> = (0..n).map(|i| -0.5 - 0.1 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| -0.3 - 0.05 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 3.0 + i as f64 * 0.2).collect();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = diag[i];
            a[(i, (i + n - 1) % n)] += lower[i];
            a[(i, (i + 1) % n)] += upper[i];
        }
        let x = solve_cyclic_tridiagonal(&lower, &diag, &upper, &rhs);
        let exact = a.lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        for i in 0..n {
            assert_abs_diff_eq!(x[i], exact[i], epsilon = 1e-12);
        }
    }
}
