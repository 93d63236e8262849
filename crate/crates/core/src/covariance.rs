//! Covariance matrices given implicitly through entry oracles.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::math;

/// Read access to a symmetric covariance matrix by entries or blocks.
pub trait CovarianceOracle {
    fn dim(&self) -> usize;

    fn entry(&self, i: usize, j: usize) -> f64;

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |a, b| self.entry(rows[a], cols[b]))
    }
}

/// Materializes the full matrix.
pub fn materialize<O: CovarianceOracle + ?Sized>(o: &O) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..o.dim()).collect();
    o.block(&idx, &idx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Metric {
    Euclidean,
    /// Arc length on a one-dimensional circle of the given circumference.
    Circular { period: f64 },
}

impl Metric {
    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            Metric::Euclidean => math::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()),
            Metric::Circular { period } => {
                let d = libm::fmod((a[0] - b[0]).abs(), period);
                d.min(period - d)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    #[serde(rename = "0.5")]
    Half,
    #[serde(rename = "1.5")]
    ThreeHalves,
}

impl Smoothness {
    pub fn from_nu(nu: f64) -> Result<Self> {
        if nu == 0.5 {
            Ok(Self::Half)
        } else if nu == 1.5 {
            Ok(Self::ThreeHalves)
        } else {
            Err(Error::InvalidConfig(alloc::format!(
                "Matern smoothness {nu} unsupported (use 0.5 or 1.5)"
            )))
        }
    }

    pub fn nu(self) -> f64 {
        match self {
            Self::Half => 0.5,
            Self::ThreeHalves => 1.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Matern {
    pub smoothness: Smoothness,
    pub range: f64,
    pub variance: f64,
}

impl Matern {
    pub fn new(nu: f64, range: f64, variance: f64) -> Result<Self> {
        if !(range > 0.0) || !(variance >= 0.0) {
            return Err(Error::InvalidConfig(alloc::format!(
                "Matern range must be positive and variance non-negative (got {range}, {variance})"
            )));
        }
        Ok(Self {
            smoothness: Smoothness::from_nu(nu)?,
            range,
            variance,
        })
    }

    pub fn correlation(&self, d: f64) -> f64 {
        let x = d / self.range;
        match self.smoothness {
            Smoothness::Half => math::exp(-x),
            Smoothness::ThreeHalves => {
                let s = math::sqrt(3.0) * x;
                (1.0 + s) * math::exp(-s)
            }
        }
    }

    pub fn covariance(&self, d: f64) -> f64 {
        self.variance * self.correlation(d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Zero,
    ScaledIdentity(f64),
    Kernel { kernel: Matern, metric: Metric },
    Dense(DMatrix<f64>),
}

impl Covariance {
    pub fn is_zero(&self) -> bool {
        match self {
            Covariance::Zero => true,
            Covariance::ScaledIdentity(s) => *s == 0.0,
            Covariance::Kernel { kernel, .. } => kernel.variance == 0.0,
            Covariance::Dense(m) => m.iter().all(|&v| v == 0.0),
        }
    }

    pub fn on<'a>(&'a self, grid: &'a Grid) -> GridCovariance<'a> {
        GridCovariance { cov: self, grid }
    }
}

/// A [`Covariance`] evaluated on a grid, in the grid's index order.
#[derive(Clone, Copy)]
pub struct GridCovariance<'a> {
    cov: &'a Covariance,
    grid: &'a Grid,
}

impl CovarianceOracle for GridCovariance<'_> {
    fn dim(&self) -> usize {
        self.grid.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        match self.cov {
            Covariance::Zero => 0.0,
            Covariance::ScaledIdentity(s) => {
                if i == j {
                    *s
                } else {
                    0.0
                }
            }
            Covariance::Kernel { kernel, metric } => {
                kernel.covariance(metric.distance(self.grid.point(i), self.grid.point(j)))
            }
            Covariance::Dense(m) => m[(i, j)],
        }
    }
}

/// Views an oracle through a permutation: entry `(i, j)` is `inner(order[i], order[j])`.
pub struct Permuted<'a, O: ?Sized> {
    pub inner: &'a O,
    pub order: &'a [usize],
}

impl<O: CovarianceOracle + ?Sized> CovarianceOracle for Permuted<'_, O> {
    fn dim(&self) -> usize {
        self.order.len()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self.inner.entry(self.order[i], self.order[j])
    }

    fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        let r: Vec<usize> = rows.iter().map(|&i| self.order[i]).collect();
        let c: Vec<usize> = cols.iter().map(|&j| self.order[j]).collect();
        self.inner.block(&r, &c)
    }
}

impl CovarianceOracle for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn entry(&self, i: usize, j: usize) -> f64 {
        self[(i, j)]
    }
}
