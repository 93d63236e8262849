//! Comparison filters: the ensemble Kalman filter with covariance tapering,
//! the low-rank filter and the multi-resolution approximation without
//! temporal updating.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::covariance::{materialize, Metric};
use crate::dense;
use crate::error::{ensure_dim, Error, Result};
use crate::filter::{FilterMoments, MultiResFilter};
use crate::grid::Grid;
use crate::math;
use crate::partition::{build_partition, PartitionConfig, PartitionTree};
use crate::rng;
use crate::sparse::SparseMatrix;
use crate::ssm::StateSpaceModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaperFamily {
    #[default]
    Kanter,
    Wendland,
}

/// Kanter's compactly supported correlation function, support `[0, 1)`.
pub fn kanter(x: f64) -> f64 {
    use core::f64::consts::PI;
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        let a = 2.0 * PI * x;
        (1.0 - x) * math::sin(a) / a + (1.0 - math::cos(a)) / (2.0 * PI * PI * x)
    }
}

/// Wendland's `psi_{3,2}`-type function `(1 - x)^6 (35 x^2 + 18 x + 3) / 3`.
pub fn wendland(x: f64) -> f64 {
    if x >= 1.0 {
        0.0
    } else {
        let x = x.max(0.0);
        math::powi(1.0 - x, 6) * (35.0 * x * x + 18.0 * x + 3.0) / 3.0
    }
}

impl TaperFamily {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Self::Kanter => kanter(x),
            Self::Wendland => wendland(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Taper {
    pub matrix: SparseMatrix,
    pub radius: f64,
}

/// Taper matrix whose support radius gives each row the smallest achievable
/// number of nonzeros that is at least `target_nnz` (taken at the median row).
pub fn build_taper(grid: &Grid, metric: Metric, family: TaperFamily, target_nnz: usize) -> Result<Taper> {
    let n = grid.len();
    if target_nnz == 0 || target_nnz > n {
        return Err(Error::InvalidConfig(format!("taper needs 1..={n} nonzeros per row, got {target_nnz}")));
    }
    let mut choices: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).map(|j| metric.distance(grid.point(i), grid.point(j))).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
            let dk = d[target_nnz - 1];
            let cut = dk * (1.0 + 1e-9) + 1e-12;
            let next = d.iter().copied().find(|&x| x > cut).unwrap_or(dk * 2.0 + 1.0);
            (dk, next)
        })
        .collect();
    choices.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    let (dk, next) = choices[n / 2];
    let radius = 0.5 * (dk + next);
    let mut trip = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let d = metric.distance(grid.point(i), grid.point(j));
            if d < radius {
                trip.push((i, j, family.eval(d / radius)));
            }
        }
    }
    Ok(Taper {
        matrix: SparseMatrix::from_triplets(n, n, &trip)?,
        radius,
    })
}

/// Ensemble members as columns, grid in original order.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub t: usize,
    pub members: DMatrix<f64>,
}

impl Ensemble {
    pub fn size(&self) -> usize {
        self.members.ncols()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.members.column_mean()
    }

    pub fn deviations(&self) -> DMatrix<f64> {
        let m = self.mean();
        let mut d = self.members.clone();
        for mut c in d.column_iter_mut() {
            c -= &m;
        }
        d
    }

    /// Sample covariance, Schur-multiplied by the taper when given.
    pub fn covariance(&self, taper: Option<&Taper>) -> DMatrix<f64> {
        let d = self.deviations();
        let scale = 1.0 / (self.size() as f64 - 1.0);
        match taper {
            None => &d * d.transpose() * scale,
            Some(tp) => {
                let n = d.nrows();
                let mut c = DMatrix::zeros(n, n);
                for (i, j, w) in tp.matrix.triplets() {
                    c[(i, j)] = w * d.row(i).dot(&d.row(j)) * scale;
                }
                c
            }
        }
    }

    pub fn variances(&self) -> Vec<f64> {
        let d = self.deviations();
        let scale = 1.0 / (self.size() as f64 - 1.0);
        d.row_iter().map(|r| r.norm_squared() * scale).collect()
    }
}

/// Stochastic ensemble Kalman filter with perturbed observations.
pub struct EnsembleFilter<'m> {
    model: &'m StateSpaceModel,
    size: usize,
    taper: Option<Taper>,
    innovation_chol: Option<DMatrix<f64>>,
}

impl<'m> EnsembleFilter<'m> {
    pub fn new(model: &'m StateSpaceModel, size: usize, taper: Option<Taper>) -> Result<Self> {
        model.validate()?;
        if size < 2 {
            return Err(Error::InvalidConfig("an ensemble needs at least two members".into()));
        }
        if let Some(t) = &taper {
            ensure_dim("taper dimension", model.n(), t.matrix.nrows())?;
        }
        let innovation_chol = if model.innovation.is_zero() {
            None
        } else {
            dense::dense_guard(model.n())?;
            let q = materialize(&model.innovation_oracle());
            Some(dense::cholesky_jittered(&q, || "innovation covariance".into())?)
        };
        Ok(Self { model, size, taper, innovation_chol })
    }

    pub fn taper(&self) -> Option<&Taper> {
        self.taper.as_ref()
    }

    pub fn initialize<R: RngCore>(&self, rng: &mut R) -> Result<Ensemble> {
        let n = self.model.n();
        dense::dense_guard(n)?;
        let s0 = materialize(&self.model.initial_oracle());
        let l0 = if self.model.initial_covariance.is_zero() {
            DMatrix::zeros(n, n)
        } else {
            dense::cholesky_jittered(&s0, || "initial covariance".into())?
        };
        let mu = DVector::from_column_slice(&self.model.initial_mean);
        let z = DMatrix::from_fn(n, self.size, |_, _| rng::standard_normal(rng));
        let mut members = l0 * z;
        for mut c in members.column_iter_mut() {
            c += &mu;
        }
        Ok(Ensemble { t: 0, members })
    }

    pub fn forecast<R: RngCore>(&self, ens: &Ensemble, rng: &mut R) -> Result<Ensemble> {
        let n = self.model.n();
        let mut members = self.model.evolution.mul_dense(&ens.members)?;
        if let Some(d) = &self.model.drift {
            let d = DVector::from_column_slice(d);
            for mut c in members.column_iter_mut() {
                c += &d;
            }
        }
        if let Some(l) = &self.innovation_chol {
            let z = DMatrix::from_fn(n, self.size, |_, _| rng::standard_normal(rng));
            members.gemm(1.0, l, &z, 1.0);
        }
        Ok(Ensemble { t: ens.t + 1, members })
    }

    pub fn update<R: RngCore>(&self, prior: &Ensemble, y: &[f64], rng: &mut R) -> Result<Ensemble> {
        let obs = self.model.observation(prior.t)?;
        ensure_dim("observation vector", obs.len(), y.len())?;
        if obs.is_empty() {
            return Ok(prior.clone());
        }
        let h = &obs.operator;
        let n_obs = obs.len();
        let d = prior.deviations();
        let scale = 1.0 / (self.size as f64 - 1.0);
        let pht = match &self.taper {
            None => {
                let hd = h.mul_dense(&d)?;
                &d * hd.transpose() * scale
            }
            Some(tp) => {
                let mut pht = DMatrix::zeros(self.model.n(), n_obs);
                for o in 0..n_obs {
                    let (cols, vals) = h.row(o);
                    for (&k, &hv) in cols.iter().zip(vals) {
                        let (tj, tv) = tp.matrix.row(k);
                        for (&j, &w) in tj.iter().zip(tv) {
                            pht[(j, o)] += hv * w * d.row(j).dot(&d.row(k)) * scale;
                        }
                    }
                }
                pht
            }
        };
        let r = obs.noise.to_dense();
        let mut s = h.mul_dense(&pht)? + &r;
        dense::symmetrize(&mut s);
        let ls = dense::cholesky_jittered(&s, || format!("ensemble innovation covariance at t = {}", prior.t))?;
        let lr = dense::cholesky(&r).map_err(|p| Error::NotPositiveDefinite {
            pivot: p,
            context: format!("observation noise at t = {}", prior.t),
        })?;
        let v = DMatrix::from_fn(n_obs, self.size, |_, _| rng::standard_normal(rng));
        let mut innov = &lr * v - h.mul_dense(&prior.members)?;
        let yv = DVector::from_column_slice(y);
        for mut c in innov.column_iter_mut() {
            c += &yv;
        }
        dense::solve_lower_in_place(&ls, &mut innov);
        dense::solve_lower_transpose_in_place(&ls, &mut innov);
        let mut members = prior.members.clone();
        members.gemm(1.0, &pht, &innov, 1.0);
        Ok(Ensemble { t: prior.t, members })
    }

    pub fn step<R: RngCore>(&self, prev: &Ensemble, y: &[f64], rng: &mut R) -> Result<(Ensemble, Ensemble)> {
        let prior = self.forecast(prev, rng)?;
        let post = self.update(&prior, y, rng)?;
        Ok((prior, post))
    }
}

/// The one-level tree behind the low-rank filter: `rank` knots spread over
/// the domain, and every other point a finest region of its own.
pub fn low_rank_tree(grid: &Grid, rank: usize) -> Result<PartitionTree> {
    build_partition(grid, &PartitionConfig::low_rank(grid.len(), rank)?)
}

pub fn low_rank_filter(model: &StateSpaceModel, rank: usize) -> Result<MultiResFilter<'_>> {
    MultiResFilter::new(model, Arc::new(low_rank_tree(&model.grid, rank)?))
}

/// Data-free prior moments of the approximation without temporal updating.
#[derive(Debug, Clone)]
pub struct MraState {
    pub prior: FilterMoments,
}

/// Multi-resolution approximation applied to each time point separately:
/// the prior is propagated without data and conditioned on `y_t` alone.
pub struct MraFilter<'m> {
    inner: MultiResFilter<'m>,
}

impl<'m> MraFilter<'m> {
    pub fn new(model: &'m StateSpaceModel, tree: Arc<PartitionTree>) -> Result<Self> {
        Ok(Self { inner: MultiResFilter::new(model, tree)? })
    }

    pub fn initialize(&self) -> Result<MraState> {
        Ok(MraState { prior: self.inner.initialize()? })
    }

    /// Returns the next state and the filtering moments at `t`.
    pub fn step(&self, state: &MraState, y: &[f64]) -> Result<(MraState, FilterMoments)> {
        let prior = self.inner.forecast(&state.prior)?;
        let post = self.inner.update(&prior, y)?.moments;
        Ok((MraState { prior }, post))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssm::AdvectionDiffusion1d;

    #[test]
    fn taper_functions() {
        assert_eq!(kanter(0.0), 1.0);
        assert_eq!(kanter(1.0), 0.0);
        assert!((0..100).map(|i| i as f64 / 100.0).all(|x| kanter(x) > 0.0));
        assert!((0..99).all(|i| kanter(i as f64 / 100.0) > kanter((i + 1) as f64 / 100.0)));
        assert_eq!(wendland(0.0), 1.0);
        assert_eq!(wendland(1.5), 0.0);
    }

    #[test]
    fn taper_row_counts_on_the_circle() {
        let g = Grid::regular_1d(80).unwrap();
        let t = build_taper(&g, Metric::Circular { period: 1.0 }, TaperFamily::Kanter, 8).unwrap();
        for i in 0..80 {
            assert_eq!(t.matrix.row(i).0.len(), 9);
        }
        let t = build_taper(&g, Metric::Circular { period: 1.0 }, TaperFamily::Kanter, 9).unwrap();
        assert_eq!(t.matrix.max_row_nnz(), 9);
    }

    #[test]
    fn large_ensemble_without_taper_tracks_kalman() {
        let model = AdvectionDiffusion1d { n: 20, steps: 2, ..Default::default() }.build().unwrap();
        let sim = crate::ssm::simulate_truth(&model, 5).unwrap();
        let kf = crate::filter::KalmanFilter::new(&model).unwrap();
        let exact = crate::filter::run_kalman(&kf, &sim.observations).unwrap();
        let ef = EnsembleFilter::new(&model, 4000, None).unwrap();
        let mut r = rng::stream(9, &[]);
        let mut e = ef.initialize(&mut r).unwrap();
        for y in &sim.observations {
            e = ef.step(&e, y, &mut r).unwrap().1;
        }
        let last = &exact.last().unwrap().posterior;
        let err = (e.mean() - &last.mean).norm();
        let se = (last.cov.trace() / 4000.0).sqrt();
        assert!(err < 4.0 * se, "err {err} se {se}");
    }

    #[test]
    fn low_rank_tree_shape() {
        let g = Grid::regular_1d(40).unwrap();
        let t = low_rank_tree(&g, 8).unwrap();
        assert_eq!(t.region(0).knots.len(), 8);
        assert_eq!(t.finest_regions().len(), 40);
        assert_eq!(t.max_chain_knots(), 9);
    }
}
