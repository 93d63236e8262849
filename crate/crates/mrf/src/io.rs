//! File formats: CSV tables, Matrix Market matrices and tree JSON.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use mrf_core::metrics::ScoreRow;
use mrf_core::partition::{PartitionTree, TreeLayout};
use mrf_core::sparse::SparseMatrix;
use nalgebra_sparse::coo::CooMatrix;
use serde::{Deserialize, Serialize};

/// One value of a space-time field: truth, data, means or variances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub t: usize,
    pub index: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub t: usize,
    pub phase: String,
    pub millis: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>();
    rows.with_context(|| format!("parsing {}", path.display()))
}

/// Score table; the header is written even when there are no rows.
pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    if rows.is_empty() {
        w.write_record(["scenario", "method", "rep", "t", "kl", "rmspe_ratio", "coverage_90", "runtime_ms"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Particle trace with one column per parameter.
pub fn write_particles(path: &Path, names: &[String], rows: &[(usize, usize, Vec<f64>, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["t".to_string(), "particle".to_string()];
    header.extend(names.iter().cloned());
    header.push("weight".into());
    header.push("ess".into());
    w.write_record(&header)?;
    for (t, p, theta, weight, ess) in rows {
        let mut rec = vec![t.to_string(), p.to_string()];
        rec.extend(theta.iter().map(|v| v.to_string()));
        rec.push(weight.to_string());
        rec.push(ess.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_market(path: &Path) -> Result<SparseMatrix> {
    let coo: CooMatrix<f64> = nalgebra_sparse::io::load_coo_from_matrix_market_file(path)
        .with_context(|| format!("reading Matrix Market file {}", path.display()))?;
    let trip: Vec<(usize, usize, f64)> = coo.triplet_iter().map(|(i, j, v)| (i, j, *v)).collect();
    Ok(SparseMatrix::from_triplets(coo.nrows(), coo.ncols(), &trip)?)
}

pub fn write_matrix_market(path: &Path, m: &SparseMatrix) -> Result<()> {
    let (mut r, mut c, mut v) = (Vec::new(), Vec::new(), Vec::new());
    for (i, j, x) in m.triplets() {
        r.push(i);
        c.push(j);
        v.push(x);
    }
    let coo = CooMatrix::try_from_triplets(m.nrows(), m.ncols(), r, c, v)
        .map_err(|e| anyhow::anyhow!("building sparse matrix: {e}"))?;
    nalgebra_sparse::io::save_to_matrix_market_file(&coo, path)
        .with_context(|| format!("writing Matrix Market file {}", path.display()))
}

pub fn write_tree(path: &Path, tree: &PartitionTree) -> Result<()> {
    let f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(f, &tree.layout())?;
    Ok(())
}

pub fn read_tree(path: &Path) -> Result<PartitionTree> {
    let layout: TreeLayout = crate::config::read_json(path)?;
    Ok(PartitionTree::from_layout(&layout)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

/// Series rows for `values[t]` at grid indices `index[t]` (or `0..len` when `None`).
pub fn series(t0: usize, values: &[Vec<f64>], index: Option<&[Vec<usize>]>) -> Result<Vec<SeriesRow>> {
    let mut rows = Vec::new();
    for (k, v) in values.iter().enumerate() {
        let idx: Vec<usize> = match index {
            Some(ix) => {
                if ix[k].len() != v.len() {
                    bail!("index and value lengths differ at t = {}", t0 + k);
                }
                ix[k].clone()
            }
            None => (0..v.len()).collect(),
        };
        rows.extend(idx.into_iter().zip(v).map(|(index, &value)| SeriesRow { t: t0 + k, index, value }));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_market_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.mtx");
        let a = SparseMatrix::from_triplets(3, 4, &[(0, 1, 1.5), (2, 3, -2.0), (1, 0, 1e-3)]).unwrap();
        write_matrix_market(&p, &a).unwrap();
        assert_eq!(read_matrix_market(&p).unwrap(), a);
    }

    #[test]
    fn empty_scores_still_have_a_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_scores(&p, &[]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.trim(), "scenario,method,rep,t,kl,rmspe_ratio,coverage_90,runtime_ms");
    }
}
