//! Data behind the basis-function and sparsity-pattern figures.

use std::path::Path;
use std::sync::Arc;

use anyhow::Result;
use mrf_core::covariance::Permuted;
use mrf_core::factor::{cholesky_and_invert, gram, inner_product_matrix, ChainBlocks, MultiResFactor};
use mrf_core::mrd::mrd;
use mrf_core::partition::{build_partition, PartitionTree};
use mrf_core::sparse::SparseMatrix;
use mrf_core::ssm::{Observation, ObservationBlocks};
use serde::{Deserialize, Serialize};

use crate::config::BasisConfig;
use crate::io;

/// Tree and `B = mrd(Sigma)` for a basis configuration.
pub fn decompose(cfg: &BasisConfig) -> Result<MultiResFactor> {
    let grid = cfg.grid()?;
    let tree = Arc::new(build_partition(&grid, &cfg.tree.partition()?)?);
    let cov = cfg.covariance()?;
    let oracle = cov.on(&grid);
    let p = Permuted { inner: &oracle, order: tree.order() };
    Ok(mrd(&p, &tree)?)
}

/// Factor columns ordered coarse to fine, then by region and knot.
pub fn columns_by_level(tree: &PartitionTree) -> Vec<(usize, String)> {
    let mut cols = Vec::new();
    for m in 0..=tree.levels() {
        for q in tree.level(m) {
            let r = tree.region(q);
            for (j, c) in r.columns.clone().enumerate() {
                cols.push((c, format!("L{m}:{}:{j}", r.path_string())));
            }
        }
    }
    cols
}

/// One row per grid point (original order) with its coordinates and the
/// value of every basis function there.
pub fn write_basis(path: &Path, b: &MultiResFactor, coords: &[Vec<f64>]) -> Result<()> {
    let tree = b.tree();
    let dense = b.to_dense();
    let cols = columns_by_level(tree);
    let dim = coords.first().map_or(0, |c| c.len());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["index".to_string()];
    header.extend(["x", "y", "z"].iter().take(dim).map(|s| s.to_string()));
    header.extend(cols.iter().map(|(_, name)| name.clone()));
    w.write_record(&header)?;
    for (i, c) in coords.iter().enumerate() {
        let k = tree.position()[i];
        let mut rec = vec![i.to_string()];
        rec.extend(c.iter().map(|v| v.to_string()));
        rec.extend(cols.iter().map(|&(col, _)| dense[(k, col)].to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_basis(cfg: &BasisConfig, out: &Path) -> Result<MultiResFactor> {
    std::fs::create_dir_all(out)?;
    let grid = cfg.grid()?;
    let b = decompose(cfg)?;
    let coords: Vec<Vec<f64>> = (0..grid.len()).map(|i| grid.point(i).to_vec()).collect();
    write_basis(&out.join("basis.csv"), &b, &coords)?;
    io::write_tree(&out.join("tree.json"), b.tree())?;
    Ok(b)
}

/// One structural nonzero; rows and columns in the factor's internal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub matrix: String,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

fn factor_pattern(b: &MultiResFactor) -> Vec<(usize, usize, f64)> {
    let tree = b.tree();
    let mut out = Vec::new();
    for f in tree.finest_regions() {
        let rows = tree.region(f).range.clone();
        for &q in tree.chain(f) {
            let blk = b.rows_of(q, f);
            for (i, k) in rows.clone().enumerate() {
                for (j, c) in tree.region(q).columns.clone().enumerate() {
                    out.push((k, c, blk[(i, j)]));
                }
            }
        }
    }
    out
}

/// Stored entries of a factor, internal order.
pub fn factor_matrix(b: &MultiResFactor) -> Result<SparseMatrix> {
    let n = b.n();
    Ok(SparseMatrix::from_triplets(n, n, &factor_pattern(b))?)
}

fn chain_pattern(m: &ChainBlocks, symmetric: bool) -> Vec<(usize, usize, f64)> {
    let tree = m.tree();
    let mut out = Vec::new();
    for q in 0..tree.regions().len() {
        let cq = tree.region(q).columns.clone();
        for (k, &a) in tree.chain(q).iter().enumerate() {
            let blk = m.block(q, k);
            for (i, r) in tree.region(a).columns.clone().enumerate() {
                for (j, c) in cq.clone().enumerate() {
                    if !symmetric && r < c {
                        continue;
                    }
                    out.push((r, c, blk[(i, j)]));
                    if symmetric && a != q {
                        out.push((c, r, blk[(i, j)]));
                    }
                }
            }
        }
    }
    out
}

/// Patterns of `B`, `B'B`, `L` and `L^{-1}` with `H = I` and `R = I`, so
/// that `L L' = I + B'B`.
pub fn patterns(b: &MultiResFactor) -> Result<Vec<(&'static str, usize, usize, Vec<(usize, usize, f64)>)>> {
    let tree = b.tree();
    let n = tree.n();
    let all: Vec<usize> = (0..n).collect();
    let obs = ObservationBlocks::new(&Observation::direct(n, &all, 1.0)?, tree)?;
    let chol = cholesky_and_invert(&inner_product_matrix(b, &obs))?;
    Ok(vec![
        ("B", n, n, factor_pattern(b)),
        ("BtB", n, n, chain_pattern(&gram(b, &obs), true)),
        ("L", n, n, chain_pattern(&chol.factor, false)),
        ("Linv", n, n, chain_pattern(&chol.inverse, false)),
    ])
}

pub fn export_pattern(cfg: &BasisConfig, out: &Path) -> Result<Vec<PatternEntry>> {
    std::fs::create_dir_all(out)?;
    let b = decompose(cfg)?;
    let mut entries = Vec::new();
    for (name, nr, nc, mut trip) in patterns(&b)? {
        trip.sort_by_key(|&(r, c, _)| (r, c));
        let mm = SparseMatrix::from_triplets(nr, nc, &trip)?;
        io::write_matrix_market(&out.join(format!("{name}.mtx")), &mm)?;
        entries.extend(trip.into_iter().map(|(row, col, value)| PatternEntry { matrix: name.into(), row, col, value }));
    }
    io::write_csv(&out.join("pattern.csv"), &entries)?;
    io::write_tree(&out.join("tree.json"), b.tree())?;
    Ok(entries)
}
