//! The exact Kalman filter (dense, for moderate `n`) and the multi-resolution filter.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec::Vec;

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::covariance::{materialize, Permuted};
use crate::dense;
use crate::error::{ensure_dim, Error, Result};
use crate::factor::{apply_inverse_transpose, cholesky_and_invert, evolve_factor, inner_product_matrix, ForecastCovariance, MultiResFactor};
use crate::math::{self, LN_2PI};
use crate::mrd::mrd;
use crate::partition::PartitionTree;
use crate::sparse::SparseMatrix;
use crate::ssm::{evolution_locality, ObservationBlocks, StateSpaceModel};

/// Mean and dense covariance in the grid's original order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMoments {
    pub t: usize,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct KalmanStep {
    pub prior: DenseMoments,
    pub posterior: DenseMoments,
    /// `log p(y_t | y_{1:t-1})`.
    pub loglik: f64,
}

/// Exact Kalman filter with dense covariances.
pub struct KalmanFilter<'m> {
    model: &'m StateSpaceModel,
    innovation: DMatrix<f64>,
}

impl<'m> KalmanFilter<'m> {
    pub fn new(model: &'m StateSpaceModel) -> Result<Self> {
        dense::dense_guard(model.n())?;
        model.validate()?;
        Ok(Self {
            model,
            innovation: materialize(&model.innovation_oracle()),
        })
    }

    pub fn initialize(&self) -> DenseMoments {
        DenseMoments {
            t: 0,
            mean: DVector::from_column_slice(&self.model.initial_mean),
            cov: materialize(&self.model.initial_oracle()),
        }
    }

    pub fn forecast(&self, prev: &DenseMoments) -> Result<DenseMoments> {
        let a = &self.model.evolution;
        let mean = DVector::from_vec(self.model.propagate_mean(prev.mean.as_slice())?);
        let asig = a.mul_dense(&prev.cov)?;
        let mut cov = a.dense_mul_transpose(&asig)? + &self.innovation;
        dense::symmetrize(&mut cov);
        Ok(DenseMoments { t: prev.t + 1, mean, cov })
    }

    /// Conditions `prior` on `y_t`; returns the posterior and `log p(y_t | past)`.
    pub fn update(&self, prior: &DenseMoments, y: &[f64]) -> Result<(DenseMoments, f64)> {
        let obs = self.model.observation(prior.t)?;
        ensure_dim("observation vector", obs.len(), y.len())?;
        if obs.is_empty() {
            return Ok((prior.clone(), 0.0));
        }
        let h = &obs.operator;
        let pht = h.dense_mul_transpose(&prior.cov)?;
        let mut s = h.mul_dense(&pht)? + obs.noise.to_dense();
        dense::symmetrize(&mut s);
        let l = dense::cholesky_jittered(&s, || format!("innovation covariance at t = {}", prior.t))?;
        let e = DVector::from_column_slice(y) - DVector::from_vec(h.mul_vec(prior.mean.as_slice())?);
        let w = dense::solve_lower_vec(&l, &e);
        let mut g = pht.transpose();
        dense::solve_lower_in_place(&l, &mut g);
        let mean = &prior.mean + g.transpose() * &w;
        let mut cov = prior.cov.clone();
        cov.gemm_tr(-1.0, &g, &g, 1.0);
        dense::symmetrize(&mut cov);
        let loglik = -0.5 * (dense::log_det_from_cholesky(&l) + w.norm_squared() + y.len() as f64 * LN_2PI);
        Ok((DenseMoments { t: prior.t, mean, cov }, loglik))
    }

    pub fn step(&self, prev: &DenseMoments, y: &[f64]) -> Result<KalmanStep> {
        let prior = self.forecast(prev)?;
        let (posterior, loglik) = self.update(&prior, y)?;
        Ok(KalmanStep { prior, posterior, loglik })
    }
}

/// Mean (internal order) and multi-resolution covariance factor.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterMoments {
    pub t: usize,
    pub mean: Vec<f64>,
    pub factor: MultiResFactor,
}

impl FilterMoments {
    pub fn tree(&self) -> &Arc<PartitionTree> {
        self.factor.tree()
    }

    pub fn mean_original(&self) -> Vec<f64> {
        self.tree().to_original(&self.mean).expect("lengths agree")
    }

    pub fn covariance_original(&self) -> DMatrix<f64> {
        self.factor.covariance_original()
    }

    pub fn variances_original(&self) -> Vec<f64> {
        self.factor.variances_original()
    }
}

#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub moments: FilterMoments,
    /// `log det L` for `L L' = I + B' H' R^{-1} H B`.
    pub log_det_chol: f64,
    /// `log p(y_t | y_{1:t-1})` under the forecast moments.
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct FilterStep {
    pub prior: FilterMoments,
    pub posterior: FilterMoments,
    pub log_det_chol: f64,
    pub loglik: f64,
}

/// Multi-resolution filter for a model on a fixed partition tree.
pub struct MultiResFilter<'m> {
    model: &'m StateSpaceModel,
    tree: Arc<PartitionTree>,
    evolution: SparseMatrix,
    drift: Option<Vec<f64>>,
}

impl<'m> MultiResFilter<'m> {
    pub fn new(model: &'m StateSpaceModel, tree: Arc<PartitionTree>) -> Result<Self> {
        model.validate()?;
        ensure_dim("tree size", model.n(), tree.n())?;
        let evolution = model.evolution.permute_symmetric(tree.order())?;
        let drift = model.drift.as_ref().map(|d| tree.to_internal(d)).transpose()?;
        Ok(Self {
            model,
            tree,
            evolution,
            drift,
        })
    }

    pub fn tree(&self) -> &Arc<PartitionTree> {
        &self.tree
    }

    pub fn model(&self) -> &'m StateSpaceModel {
        self.model
    }

    /// Warns when rows of `A` exceed the given nonzero or region budget.
    pub fn check_locality(&self, max_row_nnz: usize, max_regions: usize) -> bool {
        let rep = evolution_locality(&self.model.evolution, &self.tree);
        let ok = rep.max_row_nnz <= max_row_nnz && rep.max_regions_per_row <= max_regions;
        if !ok {
            warn!(
                "evolution operator exceeds its locality budget: {} nonzeros and {} regions per row",
                rep.max_row_nnz, rep.max_regions_per_row
            );
        }
        ok
    }

    /// Moments at `t = 0`: the prior mean and `mrd(Sigma_0)`.
    pub fn initialize(&self) -> Result<FilterMoments> {
        let s0 = self.model.initial_oracle();
        let p = Permuted { inner: &s0, order: self.tree.order() };
        Ok(FilterMoments {
            t: 0,
            mean: self.tree.to_internal(&self.model.initial_mean)?,
            factor: mrd(&p, &self.tree)?,
        })
    }

    fn propagate_mean(&self, mean: &[f64]) -> Result<Vec<f64>> {
        let mut m = self.evolution.mul_vec(mean)?;
        if let Some(d) = &self.drift {
            for (a, b) in m.iter_mut().zip(d) {
                *a += b;
            }
        }
        Ok(m)
    }

    /// One forecast step: `A mu` and `mrd(A B B' A' + Q)`.
    pub fn forecast(&self, prev: &FilterMoments) -> Result<FilterMoments> {
        if !Arc::ptr_eq(prev.tree(), &self.tree) && **prev.tree() != *self.tree {
            return Err(Error::InvalidConfig("moments belong to a different partition".into()));
        }
        let mean = self.propagate_mean(&prev.mean)?;
        let factor = match self.model.covariance_scale {
            Some(c) => {
                let mut f = prev.factor.clone();
                f.scale(math::sqrt(c));
                f
            }
            None => {
                let evolved = evolve_factor(&self.evolution, &prev.factor)?;
                let q = self.model.innovation_oracle();
                let qp = Permuted { inner: &q, order: self.tree.order() };
                let fc = ForecastCovariance { evolved: &evolved, innovation: &qp };
                mrd(&fc, &self.tree)?
            }
        };
        Ok(FilterMoments { t: prev.t + 1, mean, factor })
    }

    /// `k >= 1` forecast steps without data.
    pub fn forecast_ahead(&self, moments: &FilterMoments, k: usize) -> Result<FilterMoments> {
        if k == 0 {
            return Err(Error::InvalidConfig("forecast horizon must be at least 1".into()));
        }
        let mut m = self.forecast(moments)?;
        for _ in 1..k {
            m = self.forecast(&m)?;
        }
        Ok(m)
    }

    /// Conditions the forecast moments on `y_t` with `t = prior.t`.
    pub fn update(&self, prior: &FilterMoments, y: &[f64]) -> Result<UpdateOutcome> {
        let obs = self.model.observation(prior.t)?;
        ensure_dim("observation vector", obs.len(), y.len())?;
        if obs.is_empty() {
            return Ok(UpdateOutcome { moments: prior.clone(), log_det_chol: 0.0, loglik: 0.0 });
        }
        let blocks = ObservationBlocks::new(obs, &self.tree)?;
        let lambda = inner_product_matrix(&prior.factor, &blocks);
        let chol = cholesky_and_invert(&lambda)?;
        let tilde = apply_inverse_transpose(&prior.factor, &chol.inverse);
        let (z, quad) = blocks.weighted_residual(&self.tree, y, &prior.mean)?;
        let u = tilde.tr_mul_vec(&z)?;
        let shift = tilde.mul_vec(&u)?;
        let mean: Vec<f64> = prior.mean.iter().zip(&shift).map(|(a, b)| a + b).collect();
        let uu: f64 = u.iter().map(|x| x * x).sum();
        let loglik = -0.5 * (2.0 * chol.log_det + blocks.log_det_noise + quad - uu)
            - 0.5 * blocks.n_obs as f64 * LN_2PI;
        Ok(UpdateOutcome {
            moments: FilterMoments { t: prior.t, mean, factor: tilde },
            log_det_chol: chol.log_det,
            loglik,
        })
    }

    pub fn step(&self, prev: &FilterMoments, y: &[f64]) -> Result<FilterStep> {
        let prior = self.forecast(prev)?;
        let out = self.update(&prior, y)?;
        Ok(FilterStep {
            prior,
            posterior: out.moments,
            log_det_chol: out.log_det_chol,
            loglik: out.loglik,
        })
    }
}

/// `log p(y_t | y_{1:t-1})` from forecast moments, the updated factor
/// `B~ = B L^{-T}` and `log det L`.
pub fn integrated_loglik(
    model: &StateSpaceModel,
    prior: &FilterMoments,
    posterior: &FilterMoments,
    log_det_chol: f64,
    y: &[f64],
) -> Result<f64> {
    let obs = model.observation(prior.t)?;
    ensure_dim("observation vector", obs.len(), y.len())?;
    if obs.is_empty() {
        return Ok(0.0);
    }
    let tree = prior.tree();
    let blocks = ObservationBlocks::new(obs, tree)?;
    let (z, quad) = blocks.weighted_residual(tree, y, &prior.mean)?;
    let u = posterior.factor.tr_mul_vec(&z)?;
    let uu: f64 = u.iter().map(|x| x * x).sum();
    Ok(-0.5 * (2.0 * log_det_chol + blocks.log_det_noise + quad - uu) - 0.5 * blocks.n_obs as f64 * LN_2PI)
}

/// Runs the multi-resolution filter over `y_1, ..., y_T`; returns the filtering moments.
pub fn run_multi_resolution(filter: &MultiResFilter<'_>, data: &[Vec<f64>]) -> Result<Vec<FilterStep>> {
    let mut prev = filter.initialize()?;
    let mut out = Vec::with_capacity(data.len());
    for y in data {
        let s = filter.step(&prev, y)?;
        prev = s.posterior.clone();
        out.push(s);
    }
    Ok(out)
}

/// Runs the Kalman filter over `y_1, ..., y_T`.
pub fn run_kalman(filter: &KalmanFilter<'_>, data: &[Vec<f64>]) -> Result<Vec<KalmanStep>> {
    let mut prev = filter.initialize();
    let mut out = Vec::with_capacity(data.len());
    for y in data {
        let s = filter.step(&prev, y)?;
        prev = s.posterior.clone();
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::{Covariance, Matern, Metric};
    use crate::grid::Grid;
    use crate::partition::{build_partition, PartitionConfig};
    use crate::ssm::{random_direct_observations, simulate_truth, AdvectionDiffusion1d};
    use alloc::vec;

    #[test]
    fn scalar_kalman_against_closed_form() {
        let grid = Grid::regular_1d(1).unwrap();
        let model = StateSpaceModel {
            grid,
            evolution: SparseMatrix::diagonal(&[0.9]),
            innovation: Covariance::ScaledIdentity(0.5),
            initial_mean: vec![1.0],
            initial_covariance: Covariance::ScaledIdentity(2.0),
            observations: random_direct_observations(1, 1, 1.0, 0.25, 0).unwrap(),
            drift: None,
            covariance_scale: None,
        };
        let kf = KalmanFilter::new(&model).unwrap();
        let s = kf.step(&kf.initialize(), &[2.0]).unwrap();
        let p = 0.81 * 2.0 + 0.5;
        let k = p / (p + 0.25);
        assert!((s.posterior.mean[0] - (0.9 + k * (2.0 - 0.9))).abs() < 1e-14);
        assert!((s.posterior.cov[(0, 0)] - (1.0 - k) * p).abs() < 1e-14);
        let v = p + 0.25;
        let want = -0.5 * (v.ln() + (2.0 - 0.9f64).powi(2) / v + LN_2PI);
        assert!((s.loglik - want).abs() < 1e-14);
    }

    #[test]
    fn root_only_tree_reproduces_kalman() {
        let model = AdvectionDiffusion1d { n: 30, steps: 5, ..Default::default() }.build().unwrap();
        let sim = simulate_truth(&model, 3).unwrap();
        let tree = Arc::new(build_partition(&model.grid, &PartitionConfig::new(0, vec![], vec![30]).unwrap()).unwrap());
        let kf = KalmanFilter::new(&model).unwrap();
        let mrf = MultiResFilter::new(&model, tree).unwrap();
        let a = run_kalman(&kf, &sim.observations).unwrap();
        let b = run_multi_resolution(&mrf, &sim.observations).unwrap();
        for (x, y) in a.iter().zip(&b) {
            let m = y.posterior.mean_original();
            assert!(x.posterior.mean.iter().zip(&m).all(|(p, q)| (p - q).abs() < 1e-9));
            assert!((&x.posterior.cov - y.posterior.covariance_original()).abs().max() < 1e-9);
            assert!((x.loglik - y.loglik).abs() < 1e-8);
        }
    }

    #[test]
    fn forecast_only_requires_positive_horizon() {
        let g = Grid::regular_1d(10).unwrap();
        let model = StateSpaceModel {
            grid: g.clone(),
            evolution: SparseMatrix::identity(10),
            innovation: Covariance::Zero,
            initial_mean: vec![0.0; 10],
            initial_covariance: Covariance::Kernel {
                kernel: Matern::new(0.5, 0.2, 1.0).unwrap(),
                metric: Metric::Euclidean,
            },
            observations: vec![],
            drift: None,
            covariance_scale: None,
        };
        let tree = Arc::new(build_partition(&g, &PartitionConfig::uniform(1, 2, 2).unwrap()).unwrap());
        let f = MultiResFilter::new(&model, tree).unwrap();
        let m0 = f.initialize().unwrap();
        assert!(f.forecast_ahead(&m0, 0).is_err());
        assert_eq!(f.forecast_ahead(&m0, 2).unwrap().t, 2);
    }
}
