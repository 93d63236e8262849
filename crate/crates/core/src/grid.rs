//! Spatial grids: one coordinate tuple per state index.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    dim: usize,
    coords: Vec<f64>,
}

impl Grid {
    /// `coords` holds `dim` numbers per point, point after point.
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("grid dimension must be positive".into()));
        }
        if coords.is_empty() || !coords.len().is_multiple_of(dim) {
            return Err(Error::InvalidConfig(format!(
                "{} coordinates do not form {dim}-dimensional points",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("grid coordinates must be finite".into()));
        }
        Ok(Self { dim, coords })
    }

    /// `n` equispaced points `(i + 0.5) / n` on the unit interval.
    pub fn regular_1d(n: usize) -> Result<Self> {
        Self::new(1, (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect())
    }

    /// `nx * ny` cell centres of the unit square, index `j * nx + i` for column `i`, row `j`.
    pub fn regular_2d(nx: usize, ny: usize) -> Result<Self> {
        let mut c = Vec::with_capacity(2 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                c.push((i as f64 + 0.5) / nx as f64);
                c.push((j as f64 + 0.5) / ny as f64);
            }
        }
        Self::new(2, c)
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }
}
