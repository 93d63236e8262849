//! Dense Cholesky factorization and triangular solves.
//!
//! Large matrices are factored blockwise so that most flops go through
//! nalgebra's matrix product.

use alloc::string::String;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math;

const BLOCK: usize = 64;

/// Relative pivot floor: a pivot at or below `PIVOT_FLOOR * max(diag)` counts as failure.
pub const PIVOT_FLOOR: f64 = 1e-12;
/// Diagonal jitter added for the single retry after a failed factorization.
pub const JITTER: f64 = 1e-10;

/// Largest dimension for which dense `n x n` work is allowed.
pub const DENSE_LIMIT: usize = 4000;

pub fn dense_guard(n: usize) -> Result<()> {
    if n > DENSE_LIMIT {
        Err(Error::DenseGuard {
            n,
            limit: DENSE_LIMIT,
        })
    } else {
        Ok(())
    }
}

pub(crate) fn max_diag(a: &DMatrix<f64>) -> f64 {
    (0..a.nrows()).map(|i| a[(i, i)]).fold(0.0, f64::max)
}

fn unblocked(a: &mut DMatrix<f64>, off: usize, nb: usize, tol: f64) -> core::result::Result<(), usize> {
    for j in off..off + nb {
        let mut d = a[(j, j)];
        for k in off..j {
            d -= a[(j, k)] * a[(j, k)];
        }
        if !(d > tol) {
            return Err(j);
        }
        let d = math::sqrt(d);
        a[(j, j)] = d;
        for i in j + 1..off + nb {
            let mut s = a[(i, j)];
            for k in off..j {
                s -= a[(i, k)] * a[(j, k)];
            }
            a[(i, j)] = s / d;
        }
    }
    Ok(())
}

/// In-place lower Cholesky factor. On failure returns the offending pivot index.
/// The strict upper triangle is zeroed on success.
pub fn cholesky_in_place(a: &mut DMatrix<f64>) -> core::result::Result<(), usize> {
    let tol = PIVOT_FLOOR * max_diag(a);
    cholesky_in_place_floor(a, tol)
}

/// As [`cholesky_in_place`] with an absolute pivot floor.
pub fn cholesky_in_place_floor(a: &mut DMatrix<f64>, tol: f64) -> core::result::Result<(), usize> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "cholesky of a non-square matrix");
    let mut k = 0;
    while k < n {
        let nb = BLOCK.min(n - k);
        unblocked(a, k, nb, tol)?;
        let m = n - k - nb;
        if m > 0 {
            let l11 = a.view((k, k), (nb, nb)).clone_owned();
            // L21 = A21 L11^{-T}
            let mut a21t = a.view((k + nb, k), (m, nb)).transpose();
            l11.solve_lower_triangular_mut(&mut a21t);
            a.view_mut((k + nb, k), (m, nb)).copy_from(&a21t.transpose());
            let l21 = a.view((k + nb, k), (m, nb)).clone_owned();
            let mut a22 = a.view_mut((k + nb, k + nb), (m, m));
            a22.gemm(-1.0, &l21, &a21t, 1.0);
        }
        k += nb;
    }
    for j in 1..n {
        for i in 0..j {
            a[(i, j)] = 0.0;
        }
    }
    Ok(())
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
pub fn cholesky(a: &DMatrix<f64>) -> core::result::Result<DMatrix<f64>, usize> {
    let mut l = a.clone();
    cholesky_in_place(&mut l)?;
    Ok(l)
}

/// Cholesky with the library jitter policy: one retry with `JITTER * I` added,
/// then [`Error::NotPositiveDefinite`] naming the pivot and `context`.
pub fn cholesky_jittered(a: &DMatrix<f64>, context: impl FnOnce() -> String) -> Result<DMatrix<f64>> {
    match cholesky(a) {
        Ok(l) => Ok(l),
        Err(first) => {
            let mut b = a.clone();
            for i in 0..b.nrows() {
                b[(i, i)] += JITTER;
            }
            let ctx = context();
            match cholesky(&b) {
                Ok(l) => {
                    warn!("cholesky pivot {first} failed in {ctx}; succeeded with jitter {JITTER:e}");
                    Ok(l)
                }
                Err(pivot) => Err(Error::NotPositiveDefinite { pivot, context: ctx }),
            }
        }
    }
}

/// Solves `L X = B` in place for lower triangular `L`.
pub fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    assert_eq!(n, b.nrows());
    let c = b.ncols();
    let mut k = 0;
    while k < n {
        let nb = BLOCK.min(n - k);
        let lkk = l.view((k, k), (nb, nb)).clone_owned();
        let mut xk = b.view((k, 0), (nb, c)).clone_owned();
        lkk.solve_lower_triangular_mut(&mut xk);
        b.view_mut((k, 0), (nb, c)).copy_from(&xk);
        let m = n - k - nb;
        if m > 0 {
            let lik = l.view((k + nb, k), (m, nb));
            let mut rest = b.view_mut((k + nb, 0), (m, c));
            rest.gemm(-1.0, &lik, &xk, 1.0);
        }
        k += nb;
    }
}

/// Solves `L' X = B` in place for lower triangular `L`.
pub fn solve_lower_transpose_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    assert_eq!(n, b.nrows());
    let c = b.ncols();
    let mut end = n;
    while end > 0 {
        let nb = BLOCK.min(end);
        let k = end - nb;
        let lkk = l.view((k, k), (nb, nb)).clone_owned();
        let mut xk = b.view((k, 0), (nb, c)).clone_owned();
        lkk.tr_solve_lower_triangular_mut(&mut xk);
        b.view_mut((k, 0), (nb, c)).copy_from(&xk);
        if k > 0 {
            // rows above: B[0..k] -= L[k..end, 0..k]' X_k
            let lik = l.view((k, 0), (nb, k));
            let mut rest = b.view_mut((0, 0), (k, c));
            rest.gemm_tr(-1.0, &lik, &xk, 1.0);
        }
        end = k;
    }
}

pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.solve_lower_triangular_mut(&mut x);
    x
}

pub fn solve_lower_transpose_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut x = b.clone();
    l.tr_solve_lower_triangular_mut(&mut x);
    x
}

/// `A^{-1} b` given the Cholesky factor of `A`.
pub fn cholesky_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    solve_lower_transpose_vec(l, &solve_lower_vec(l, b))
}

/// `log det(L L')`.
pub fn log_det_from_cholesky(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| math::ln(l[(i, i)])).sum::<f64>()
}

/// Inverse of a lower triangular matrix.
pub fn lower_inverse(l: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = DMatrix::identity(l.nrows(), l.nrows());
    solve_lower_in_place(l, &mut x);
    x
}

/// `(A + A') / 2` in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DMatrix<f64> {
        let g = DMatrix::from_fn(n, n, |i, j| math::sin((i * 7 + j * 3) as f64 + 0.3));
        &g * g.transpose() + DMatrix::identity(n, n) * (n as f64)
    }

    #[test]
    fn blocked_matches_reconstruction() {
        for n in [1, 5, 64, 65, 150] {
            let a = spd(n);
            let l = cholesky(&a).unwrap();
            let err = (&l * l.transpose() - &a).abs().max();
            assert!(err < 1e-9 * a.abs().max(), "n={n} err={err}");
            for j in 0..n {
                for i in 0..j {
                    assert_eq!(l[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn reports_failing_pivot() {
        let mut a = DMatrix::<f64>::identity(4, 4);
        a[(2, 2)] = -1.0;
        assert_eq!(cholesky(&a).unwrap_err(), 2);
    }

    #[test]
    fn jitter_rescues_semidefinite() {
        let v = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let a = &v * v.transpose();
        assert!(cholesky(&a).is_err());
        let l = cholesky_jittered(&a, || "rank one".into()).unwrap();
        assert!((&l * l.transpose() - &a).abs().max() < 1e-8);
        let err = cholesky_jittered(&(-DMatrix::<f64>::identity(2, 2)), || "neg".into()).unwrap_err();
        assert_eq!(err, Error::NotPositiveDefinite { pivot: 0, context: "neg".into() });
    }

    #[test]
    fn triangular_solves() {
        for n in [3, 70, 130] {
            let l = cholesky(&spd(n)).unwrap();
            let b = DMatrix::from_fn(n, 4, |i, j| (i as f64 - j as f64) * 0.1);
            let mut x = b.clone();
            solve_lower_in_place(&l, &mut x);
            assert!((&l * &x - &b).abs().max() < 1e-10);
            let mut y = b.clone();
            solve_lower_transpose_in_place(&l, &mut y);
            assert!((l.transpose() * &y - &b).abs().max() < 1e-10);
        }
    }

    #[test]
    fn log_det_matches_product_of_pivots() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 2.0, 2.0, 3.0]);
        let l = cholesky(&a).unwrap();
        assert!((log_det_from_cholesky(&l) - math::ln(8.0)).abs() < 1e-14);
    }
}
