//! Block-sparse multi-resolution factors and the matrices derived from them.
//!
//! A [`MultiResFactor`] `B` is square: rows are internal grid indices, columns
//! are knots ordered finest level first. Region `q` owns the dense block
//! `B[I_q, K_q]`; everything else is structurally zero. Within a block, rows at
//! knots of strict ancestors of `q` are exactly zero, so `B` is block
//! triangular once its rows are permuted into knot order.
//!
//! Matrices indexed by knots on both sides (`B' R B`, its Cholesky factor and
//! the inverse of that factor) are nonzero only between a region and its
//! ancestors. They are stored per region as [`ChainBlocks`].

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::covariance::CovarianceOracle;
use crate::dense;
use crate::error::{ensure_dim, Error, Result};
use crate::math;
use crate::partition::PartitionTree;
use crate::sparse::SparseMatrix;
use crate::ssm::ObservationBlocks;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiResFactor {
    tree: Arc<PartitionTree>,
    blocks: Vec<DMatrix<f64>>,
}

impl MultiResFactor {
    pub fn zeros(tree: Arc<PartitionTree>) -> Self {
        let blocks = tree
            .regions()
            .iter()
            .map(|r| DMatrix::zeros(r.len(), r.knots.len()))
            .collect();
        Self { tree, blocks }
    }

    pub fn from_blocks(tree: Arc<PartitionTree>, blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        ensure_dim("factor block count", tree.regions().len(), blocks.len())?;
        for (r, b) in tree.regions().iter().zip(&blocks) {
            ensure_dim("factor block rows", r.len(), b.nrows())?;
            ensure_dim("factor block columns", r.knots.len(), b.ncols())?;
        }
        Ok(Self { tree, blocks })
    }

    pub fn tree(&self) -> &Arc<PartitionTree> {
        &self.tree
    }

    pub fn n(&self) -> usize {
        self.tree.n()
    }

    /// `B[I_q, K_q]`.
    pub fn block(&self, q: usize) -> &DMatrix<f64> {
        &self.blocks[q]
    }

    pub fn block_mut(&mut self, q: usize) -> &mut DMatrix<f64> {
        &mut self.blocks[q]
    }

    /// Rows of `B[I_q, K_q]` that belong to the descendant region `f`.
    pub fn rows_of(&self, q: usize, f: usize) -> nalgebra::DMatrixView<'_, f64> {
        let start = self.tree.region(f).range.start - self.tree.region(q).range.start;
        let b = &self.blocks[q];
        b.view((start, 0), (self.tree.region(f).len(), b.ncols()))
    }

    /// Rows of `B[I_q, K_q]` at the internal indices `rows` (all inside `I_q`).
    pub fn gather_rows(&self, q: usize, rows: &[usize]) -> DMatrix<f64> {
        let start = self.tree.region(q).range.start;
        let b = &self.blocks[q];
        DMatrix::from_fn(rows.len(), b.ncols(), |a, c| b[(rows[a] - start, c)])
    }

    /// Stored entries per row (equal for all rows of a finest region).
    pub fn row_nnz(&self, k: usize) -> usize {
        let f = self.tree.finest_of(k);
        self.tree.chain(f).iter().map(|&q| self.tree.region(q).knots.len()).sum()
    }

    /// Whether `(row, col)` lies in the stored pattern.
    pub fn in_pattern(&self, row: usize, col: usize) -> bool {
        let q = self.tree.knot_region(self.tree.point_of_column(col));
        self.tree.chain(self.tree.finest_of(row)).contains(&q)
    }

    pub fn stored_entries(&self) -> usize {
        self.blocks.iter().map(|b| b.len()).sum()
    }

    /// Dense `B` (internal rows, knot columns).
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (r, b) in self.tree.regions().iter().zip(&self.blocks) {
            m.view_mut((r.range.start, r.columns.start), (b.nrows(), b.ncols())).copy_from(b);
        }
        m
    }

    /// Dense `B B'` in internal order.
    pub fn outer_internal(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut m = DMatrix::zeros(n, n);
        for (r, b) in self.tree.regions().iter().zip(&self.blocks) {
            if b.ncols() == 0 {
                continue;
            }
            let mut v = m.view_mut((r.range.start, r.range.start), (b.nrows(), b.nrows()));
            v.gemm(1.0, b, &b.transpose(), 1.0);
        }
        m
    }

    /// Dense `B B'` in the grid's original order.
    pub fn covariance_original(&self) -> DMatrix<f64> {
        let inner = self.outer_internal();
        let pos = self.tree.position();
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| inner[(pos[i], pos[j])])
    }

    /// `diag(B B')` in internal order.
    pub fn variances_internal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n()];
        for (r, b) in self.tree.regions().iter().zip(&self.blocks) {
            for (a, k) in r.range.clone().enumerate() {
                d[k] += b.row(a).norm_squared();
            }
        }
        d
    }

    pub fn variances_original(&self) -> Vec<f64> {
        self.tree.to_original(&self.variances_internal()).expect("lengths agree")
    }

    pub fn scale(&mut self, c: f64) {
        for b in &mut self.blocks {
            *b *= c;
        }
    }

    /// `B u` for a knot-indexed `u`.
    pub fn mul_vec(&self, u: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("factor product", self.n(), u.len())?;
        let mut y = vec![0.0; self.n()];
        for (r, b) in self.tree.regions().iter().zip(&self.blocks) {
            if b.ncols() == 0 {
                continue;
            }
            let ur = DVector::from_column_slice(&u[r.columns.clone()]);
            let v = b * ur;
            for (k, x) in r.range.clone().zip(v.iter()) {
                y[k] += x;
            }
        }
        Ok(y)
    }

    /// `B' z` for an internally ordered `z`.
    pub fn tr_mul_vec(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_dim("factor transpose product", self.n(), z.len())?;
        let mut u = vec![0.0; self.n()];
        for (r, b) in self.tree.regions().iter().zip(&self.blocks) {
            if b.ncols() == 0 {
                continue;
            }
            let zr = DVector::from_column_slice(&z[r.range.clone()]);
            let v = b.tr_mul(&zr);
            u[r.columns.clone()].copy_from_slice(v.as_slice());
        }
        Ok(u)
    }

    /// `B[K_q, K_q]`, the diagonal block in knot-row order.
    fn knot_block(&self, q: usize) -> DMatrix<f64> {
        self.gather_rows(q, &self.tree.region(q).knots)
    }

    /// Solves `B X = R` by block substitution in knot order, coarse to fine.
    /// `R` has internally ordered rows; `X` has knot-ordered rows.
    pub fn solve_matrix(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        ensure_dim("solve right-hand side", self.n(), rhs.nrows())?;
        let c = rhs.ncols();
        let mut x = DMatrix::zeros(self.n(), c);
        for q in 0..self.tree.regions().len() {
            let reg = self.tree.region(q);
            if reg.knots.is_empty() {
                continue;
            }
            let k = reg.knots.len();
            let mut r = DMatrix::from_fn(k, c, |a, j| rhs[(reg.knots[a], j)]);
            for &a in &self.tree.chain(q)[..reg.level] {
                let ar = self.tree.region(a);
                if ar.knots.is_empty() {
                    continue;
                }
                let ba = self.gather_rows(a, &reg.knots);
                let xa = x.rows(ar.columns.start, ar.knots.len()).clone_owned();
                r.gemm(-1.0, &ba, &xa, 1.0);
            }
            let lu = self.knot_block(q).lu();
            if !lu.solve_mut(&mut r) {
                return Err(Error::Degenerate(format!(
                    "factor block of region {} is singular",
                    reg.path_string()
                )));
            }
            x.rows_mut(reg.columns.start, k).copy_from(&r);
        }
        Ok(x)
    }

    /// `log |det B|`.
    pub fn log_abs_det(&self) -> f64 {
        (0..self.tree.regions().len())
            .filter(|&q| !self.tree.region(q).knots.is_empty())
            .map(|q| {
                let u = self.knot_block(q).lu().u();
                (0..u.nrows()).map(|i| math::ln(u[(i, i)].abs())).sum::<f64>()
            })
            .sum()
    }

    /// Largest magnitude stored at rows that are knots of a strict ancestor.
    /// Exact arithmetic makes these zero; the library keeps them at zero.
    pub fn ancestor_knot_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for (q, reg) in self.tree.regions().iter().enumerate() {
            for &a in &self.tree.chain(q)[..reg.level] {
                let inside: Vec<usize> =
                    self.tree.region(a).knots.iter().copied().filter(|k| reg.range.contains(k)).collect();
                if !inside.is_empty() {
                    worst = worst.max(self.gather_rows(q, &inside).abs().max());
                }
            }
        }
        worst
    }
}

/// Largest magnitude of `dense` (internal rows, knot columns) outside the
/// multi-resolution pattern of `tree`.
pub fn out_of_pattern_max(tree: &PartitionTree, dense: &DMatrix<f64>) -> f64 {
    let n = tree.n();
    let mut worst = 0.0f64;
    for c in 0..n {
        let q = tree.knot_region(tree.point_of_column(c));
        for k in 0..n {
            if !tree.chain(tree.finest_of(k)).contains(&q) {
                worst = worst.max(dense[(k, c)].abs());
            }
        }
    }
    worst
}

/// Row-sparse matrix with knot-indexed columns (the evolved factor `A B`).
#[derive(Debug, Clone, PartialEq)]
pub struct RowSparse {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl RowSparse {
    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.indptr[i]..self.indptr[i + 1];
        (&self.indices[r.clone()], &self.values[r])
    }

    pub fn max_row_nnz(&self) -> usize {
        self.indptr.windows(2).map(|w| w[1] - w[0]).max().unwrap_or(0)
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                m[(i, j)] = x;
            }
        }
        m
    }
}

/// `A B` for `A` in internal order.
pub fn evolve_factor(a: &SparseMatrix, b: &MultiResFactor) -> Result<RowSparse> {
    let n = b.n();
    ensure_dim("evolution operator rows", n, a.nrows())?;
    ensure_dim("evolution operator columns", n, a.ncols())?;
    let tree = b.tree();
    let mut acc = vec![0.0; n];
    let mut mark = vec![false; n];
    let mut touched = Vec::new();
    let mut indptr = Vec::with_capacity(n + 1);
    let mut indices = Vec::new();
    let mut values = Vec::new();
    indptr.push(0);
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&k, &w) in cols.iter().zip(vals) {
            for &q in tree.chain(tree.finest_of(k)) {
                let reg = tree.region(q);
                let blk = &b.blocks[q];
                let local = k - reg.range.start;
                for (c, col) in reg.columns.clone().enumerate() {
                    if !mark[col] {
                        mark[col] = true;
                        touched.push(col);
                    }
                    acc[col] += w * blk[(local, c)];
                }
            }
        }
        touched.sort_unstable();
        for &col in &touched {
            indices.push(col);
            values.push(acc[col]);
            acc[col] = 0.0;
            mark[col] = false;
        }
        touched.clear();
        indptr.push(indices.len());
    }
    Ok(RowSparse {
        ncols: n,
        indptr,
        indices,
        values,
    })
}

/// Forecast covariance `F F' + Q` with `F` row-sparse and `Q` given by an oracle,
/// both in internal order.
pub struct ForecastCovariance<'a, O: ?Sized> {
    pub evolved: &'a RowSparse,
    pub innovation: &'a O,
}

impl<O: CovarianceOracle + ?Sized> CovarianceOracle for ForecastCovariance<'_, O> {
    fn dim(&self) -> usize {
        self.evolved.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        let (ci, vi) = self.evolved.row(i);
        let (cj, vj) = self.evolved.row(j);
        let (mut a, mut b, mut s) = (0, 0, 0.0);
        while a < ci.len() && b < cj.len() {
            match ci[a].cmp(&cj[b]) {
                core::cmp::Ordering::Less => a += 1,
                core::cmp::Ordering::Greater => b += 1,
                core::cmp::Ordering::Equal => {
                    s += vi[a] * vj[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        s + self.innovation.entry(i, j)
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let mut out = self.innovation.block(rows, cols);
        let mut work = vec![0.0; self.evolved.ncols];
        for (b, &j) in cols.iter().enumerate() {
            let (cj, vj) = self.evolved.row(j);
            for (&c, &v) in cj.iter().zip(vj) {
                work[c] = v;
            }
            for (a, &i) in rows.iter().enumerate() {
                let (ci, vi) = self.evolved.row(i);
                out[(a, b)] += ci.iter().zip(vi).map(|(&c, &v)| v * work[c]).sum::<f64>();
            }
            for &c in cj {
                work[c] = 0.0;
            }
        }
        out
    }
}

/// Knot-by-knot matrix stored per region `q` as the blocks `M[K_a, K_q]` for
/// the ancestors `a` of `q` from the root down to `q` itself. For symmetric
/// matrices this is the lower triangle in knot column order.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainBlocks {
    tree: Arc<PartitionTree>,
    blocks: Vec<Vec<DMatrix<f64>>>,
}

impl ChainBlocks {
    pub fn zeros(tree: Arc<PartitionTree>) -> Self {
        let blocks = (0..tree.regions().len())
            .map(|q| {
                let kq = tree.region(q).knots.len();
                tree.chain(q)
                    .iter()
                    .map(|&a| DMatrix::zeros(tree.region(a).knots.len(), kq))
                    .collect()
            })
            .collect();
        Self { tree, blocks }
    }

    pub fn tree(&self) -> &Arc<PartitionTree> {
        &self.tree
    }

    /// `M[K_a, K_q]` where `a` is the ancestor of `q` at level `k`.
    pub fn block(&self, q: usize, k: usize) -> &DMatrix<f64> {
        &self.blocks[q][k]
    }

    pub fn block_mut(&mut self, q: usize, k: usize) -> &mut DMatrix<f64> {
        &mut self.blocks[q][k]
    }

    /// Dense knot-by-knot matrix holding the stored blocks only.
    pub fn to_dense_lower(&self) -> DMatrix<f64> {
        let n = self.tree.n();
        let mut m = DMatrix::zeros(n, n);
        for q in 0..self.blocks.len() {
            let cq = self.tree.region(q).columns.start;
            for (k, &a) in self.tree.chain(q).iter().enumerate() {
                let ca = self.tree.region(a).columns.start;
                let b = &self.blocks[q][k];
                m.view_mut((ca, cq), (b.nrows(), b.ncols())).copy_from(b);
            }
        }
        m
    }

    /// Dense symmetric matrix from the stored lower part.
    pub fn to_dense_symmetric(&self) -> DMatrix<f64> {
        let mut m = self.to_dense_lower();
        let n = m.nrows();
        for q in 0..self.blocks.len() {
            let level = self.tree.region(q).level;
            let cq = self.tree.region(q).columns.clone();
            for &a in &self.tree.chain(q)[..level] {
                let ca = self.tree.region(a).columns.clone();
                for i in ca.clone() {
                    for j in cq.clone() {
                        m[(j, i)] = m[(i, j)];
                    }
                }
            }
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }

    pub fn stored_entries(&self) -> usize {
        self.blocks.iter().flatten().map(|b| b.len()).sum()
    }
}

/// `B' H' R^{-1} H B`, accumulated over observed finest regions.
pub fn gram(b: &MultiResFactor, obs: &ObservationBlocks) -> ChainBlocks {
    let tree = b.tree().clone();
    let mut g = ChainBlocks::zeros(tree.clone());
    for ob in &obs.blocks {
        let f = ob.region;
        let chain = tree.chain(f);
        let rows: Vec<DMatrix<f64>> = chain.iter().map(|&q| b.rows_of(q, f).clone_owned()).collect();
        for (l, &ql) in chain.iter().enumerate() {
            if rows[l].ncols() == 0 {
                continue;
            }
            let t = &ob.precision * &rows[l];
            for k in 0..=l {
                if rows[k].ncols() == 0 {
                    continue;
                }
                g.blocks[ql][k].gemm_tr(1.0, &rows[k], &t, 1.0);
            }
        }
    }
    g
}

/// `I + B' H' R^{-1} H B`.
pub fn inner_product_matrix(b: &MultiResFactor, obs: &ObservationBlocks) -> ChainBlocks {
    let mut g = gram(b, obs);
    for q in 0..g.blocks.len() {
        let level = g.tree.region(q).level;
        let d = &mut g.blocks[q][level];
        for i in 0..d.nrows() {
            d[(i, i)] += 1.0;
        }
    }
    g
}

/// Cholesky factor `L` of a [`ChainBlocks`] matrix and its inverse, both with
/// the same block pattern.
#[derive(Debug, Clone)]
pub struct BlockCholesky {
    pub factor: ChainBlocks,
    pub inverse: ChainBlocks,
    /// `log det L`.
    pub log_det: f64,
}

fn factor_once(m: &ChainBlocks, jitter: f64, floor: f64) -> core::result::Result<ChainBlocks, (usize, usize)> {
    let tree = m.tree.clone();
    let mut s = m.clone();
    if jitter > 0.0 {
        for q in 0..s.blocks.len() {
            let level = tree.region(q).level;
            let d = &mut s.blocks[q][level];
            for i in 0..d.nrows() {
                d[(i, i)] += jitter;
            }
        }
    }
    let mut l = ChainBlocks::zeros(tree.clone());
    let big_m = tree.levels();
    for level in (0..=big_m).rev() {
        for d in tree.level(level) {
            if tree.region(d).knots.is_empty() {
                continue;
            }
            let chain = tree.chain(d).to_vec();
            let mut ldd = s.blocks[d][level].clone();
            dense::symmetrize(&mut ldd);
            dense::cholesky_in_place_floor(&mut ldd, floor).map_err(|p| (d, p))?;
            for k in 0..level {
                // L[a, d] = S[a, d] L_dd^{-T}
                let mut xt = s.blocks[d][k].transpose();
                ldd.solve_lower_triangular_mut(&mut xt);
                l.blocks[d][k] = xt.transpose();
            }
            for ll in 0..level {
                let cl = chain[ll];
                for k in 0..=ll {
                    let (lk, lr) = (&l.blocks[d][k], &l.blocks[d][ll]);
                    if lk.nrows() == 0 || lr.nrows() == 0 {
                        continue;
                    }
                    s.blocks[cl][k].gemm(-1.0, lk, &lr.transpose(), 1.0);
                }
            }
            l.blocks[d][level] = ldd;
        }
    }
    Ok(l)
}

fn invert(l: &ChainBlocks) -> ChainBlocks {
    let tree = l.tree.clone();
    let mut x = ChainBlocks::zeros(tree.clone());
    let diag_inv: Vec<DMatrix<f64>> = (0..tree.regions().len())
        .map(|q| dense::lower_inverse(&l.blocks[q][tree.region(q).level]))
        .collect();
    for q in 0..tree.regions().len() {
        let level = tree.region(q).level;
        let chain = tree.chain(q);
        x.blocks[q][level] = diag_inv[q].clone();
        if tree.region(q).knots.is_empty() {
            continue;
        }
        for k in (0..level).rev() {
            let ck = chain[k];
            let mut acc = DMatrix::zeros(tree.region(ck).knots.len(), tree.region(q).knots.len());
            for j in k + 1..=level {
                let cj = chain[j];
                if tree.region(cj).knots.is_empty() {
                    continue;
                }
                acc.gemm(1.0, &l.blocks[cj][k], &x.blocks[q][j], 1.0);
            }
            x.blocks[q][k] = -(&diag_inv[ck] * acc);
        }
    }
    x
}

/// Block Cholesky of a symmetric positive definite [`ChainBlocks`] matrix and
/// the inverse of the factor. Produces no fill outside the ancestor pattern.
/// Retries once with diagonal jitter before reporting the failing pivot.
pub fn cholesky_and_invert(m: &ChainBlocks) -> Result<BlockCholesky> {
    let tree = m.tree.clone();
    let max_diag = (0..m.blocks.len())
        .map(|q| dense::max_diag(&m.blocks[q][tree.region(q).level]))
        .fold(0.0, f64::max);
    let floor = dense::PIVOT_FLOOR * max_diag;
    let factor = match factor_once(m, 0.0, floor) {
        Ok(l) => l,
        Err((q, p)) => {
            warn!(
                "inner-product Cholesky failed at region {} pivot {p}; retrying with jitter {:e}",
                tree.region(q).path_string(),
                dense::JITTER
            );
            factor_once(m, dense::JITTER, floor).map_err(|(q, p)| Error::NotPositiveDefinite {
                pivot: tree.region(q).columns.start + p,
                context: format!("inner-product matrix at region {}", tree.region(q).path_string()),
            })?
        }
    };
    let log_det = (0..tree.regions().len())
        .map(|q| {
            let d = &factor.blocks[q][tree.region(q).level];
            (0..d.nrows()).map(|i| math::ln(d[(i, i)])).sum::<f64>()
        })
        .sum();
    let inverse = invert(&factor);
    Ok(BlockCholesky {
        factor,
        inverse,
        log_det,
    })
}

/// `B X'` for a knot-by-knot `X` with the ancestor pattern (such as `L^{-1}`).
/// The result keeps the multi-resolution pattern of `B`.
pub fn apply_inverse_transpose(b: &MultiResFactor, x: &ChainBlocks) -> MultiResFactor {
    let tree = b.tree().clone();
    let mut out = MultiResFactor::zeros(tree.clone());
    for f in tree.finest_regions() {
        let chain = tree.chain(f);
        let rows: Vec<DMatrix<f64>> = chain.iter().map(|&q| b.rows_of(q, f).clone_owned()).collect();
        let rf = tree.region(f).range.clone();
        for (k, &ck) in chain.iter().enumerate() {
            let kk = tree.region(ck).knots.len();
            if kk == 0 {
                continue;
            }
            let mut acc = DMatrix::zeros(rf.len(), kk);
            for (j, &cj) in chain.iter().enumerate().skip(k) {
                if rows[j].ncols() == 0 {
                    continue;
                }
                acc.gemm(1.0, &rows[j], &x.blocks[cj][k].transpose(), 1.0);
            }
            let start = rf.start - tree.region(ck).range.start;
            out.blocks[ck].view_mut((start, 0), (rf.len(), kk)).copy_from(&acc);
        }
    }
    out
}
