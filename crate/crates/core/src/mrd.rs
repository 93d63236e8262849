//! The multi-resolution decomposition of a covariance matrix.
//!
//! Regions are processed level by level from the root. For region `q` with
//! ancestors `a_0, ..., a_{l-1}`:
//!
//! ```text
//! W_q = Sigma[I_q, K_q] - sum_k B_{a_k}[I_q, :] B_{a_k}[K_q, :]'
//! B_q = W_q chol(W_q[K_q, :])^{-T}
//! ```
//!
//! Only `Sigma[I_q, K_q]` is ever requested from the oracle, so the number of
//! covariance entries touched is at most `n N`.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::covariance::{materialize, CovarianceOracle};
use crate::dense;
use crate::error::{ensure_dim, Result};
use crate::factor::MultiResFactor;
use crate::partition::PartitionTree;

/// Decomposes `sigma` (given in the tree's internal order).
pub fn mrd<O: CovarianceOracle + ?Sized>(sigma: &O, tree: &Arc<PartitionTree>) -> Result<MultiResFactor> {
    ensure_dim("covariance dimension", tree.n(), sigma.dim())?;
    let mut b = MultiResFactor::zeros(tree.clone());
    for level in 0..=tree.levels() {
        for q in tree.level(level) {
            let reg = tree.region(q);
            if reg.knots.is_empty() {
                continue;
            }
            let rows: Vec<usize> = reg.range.clone().collect();
            let mut w = sigma.block(&rows, &reg.knots);
            for &a in &tree.chain(q)[..level] {
                if tree.region(a).knots.is_empty() {
                    continue;
                }
                let ba_rows = b.rows_of(a, q);
                let ba_knots = b.gather_rows(a, &reg.knots);
                w.gemm(-1.0, &ba_rows, &ba_knots.transpose(), 1.0);
            }
            for (local, k) in reg.range.clone().enumerate() {
                if tree.region(tree.knot_region(k)).level < level {
                    w.row_mut(local).fill(0.0);
                }
            }
            let mut v = DMatrix::from_fn(reg.knots.len(), reg.knots.len(), |i, j| {
                w[(reg.knots[i] - reg.range.start, j)]
            });
            dense::symmetrize(&mut v);
            let l = dense::cholesky_jittered(&v, || format!("decomposition at region {}", reg.path_string()))?;
            // B_q = W L^{-T}
            let mut bt = w.transpose();
            l.solve_lower_triangular_mut(&mut bt);
            b.block_mut(q).copy_from(&bt.transpose());
        }
    }
    Ok(b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionError {
    pub max_abs: f64,
    pub frobenius_relative: f64,
}

/// Compares `sigma` with `B B'` for `B = mrd(sigma)`. Dense, so `n <= 4000`.
pub fn mrd_error_report<O: CovarianceOracle + ?Sized>(
    sigma: &O,
    tree: &Arc<PartitionTree>,
) -> Result<DecompositionError> {
    dense::dense_guard(tree.n())?;
    let b = mrd(sigma, tree)?;
    let s = materialize(sigma);
    let diff = b.outer_internal() - &s;
    Ok(DecompositionError {
        max_abs: diff.abs().max(),
        frobenius_relative: diff.norm() / s.norm(),
    })
}
