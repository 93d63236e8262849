//! Scores comparing approximate filtering distributions with the exact one.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dense;
use crate::error::{ensure_dim, Error, Result};
use crate::filter::FilterMoments;
use crate::math;

/// Exact filtering moments prepared once for scoring several approximations.
#[derive(Debug, Clone)]
pub struct ExactReference {
    pub mean: DVector<f64>,
    pub chol: DMatrix<f64>,
    pub log_det: f64,
}

impl ExactReference {
    pub fn new(mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<Self> {
        dense::dense_guard(cov.nrows())?;
        ensure_dim("reference mean", cov.nrows(), mean.len())?;
        let chol = dense::cholesky_jittered(cov, || "exact filtering covariance".into())?;
        let log_det = dense::log_det_from_cholesky(&chol);
        Ok(Self { mean: mean.clone(), chol, log_det })
    }

    pub fn n(&self) -> usize {
        self.mean.len()
    }
}

/// `KL(N(mu_e, Sigma_e) || N(mu_a, Sigma_a))` with dense matrices.
pub fn kl_gaussian(
    mean_e: &DVector<f64>,
    cov_e: &DMatrix<f64>,
    mean_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
) -> Result<f64> {
    kl_dense(&ExactReference::new(mean_e, cov_e)?, mean_a, cov_a)
}

/// KL divergence from the reference to a dense Gaussian approximation.
pub fn kl_dense(reference: &ExactReference, mean_a: &DVector<f64>, cov_a: &DMatrix<f64>) -> Result<f64> {
    let n = reference.n();
    ensure_dim("approximate mean", n, mean_a.len())?;
    ensure_dim("approximate covariance", n, cov_a.nrows())?;
    let la = dense::cholesky(cov_a).map_err(|p| Error::NotPositiveDefinite {
        pivot: p,
        context: "approximate covariance in KL divergence".into(),
    })?;
    let mut x = reference.chol.clone();
    dense::solve_lower_in_place(&la, &mut x);
    let trace = x.norm_squared();
    let delta = dense::solve_lower_vec(&la, &(mean_a - &reference.mean));
    Ok(0.5 * (trace + delta.norm_squared() - n as f64 + dense::log_det_from_cholesky(&la) - reference.log_det))
}

/// KL divergence from the reference to `N(mu, B B')`, using solves with the
/// block-triangular factor instead of a dense Cholesky.
pub fn kl_factor(reference: &ExactReference, approx: &FilterMoments) -> Result<f64> {
    let n = reference.n();
    let tree = approx.tree();
    ensure_dim("approximate mean", n, approx.mean.len())?;
    let order = tree.order();
    let m = DMatrix::from_fn(n, n, |k, j| reference.chol[(order[k], j)]);
    let x = approx.factor.solve_matrix(&m)?;
    let trace = x.norm_squared();
    let delta = DMatrix::from_fn(n, 1, |k, _| approx.mean[k] - reference.mean[order[k]]);
    let v = approx.factor.solve_matrix(&delta)?;
    let log_det_a = 2.0 * approx.factor.log_abs_det();
    Ok(0.5 * (trace + v.norm_squared() - n as f64 + log_det_a - reference.log_det))
}

fn rms(a: &[f64], b: &[f64]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    math::sqrt(s / a.len() as f64)
}

/// Root mean squared prediction error of `estimate` relative to that of `exact`.
pub fn rmspe_ratio(estimate: &[f64], exact: &[f64], truth: &[f64]) -> Result<f64> {
    ensure_dim("estimate", truth.len(), estimate.len())?;
    ensure_dim("exact estimate", truth.len(), exact.len())?;
    let den = rms(exact, truth);
    if den == 0.0 {
        return Err(Error::Degenerate("exact filter has zero prediction error".into()));
    }
    Ok(rms(estimate, truth) / den)
}

/// Root squared difference between approximate and exact filtering means,
/// aggregated over time two ways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RasdReport {
    /// `sqrt(mean_t mean_i (mu_hat - mu)^2)`.
    pub root_mean: f64,
    /// `sqrt(sum_t mean_i (mu_hat - mu)^2)`.
    pub root_sum: f64,
}

pub fn rasd(approx: &[Vec<f64>], exact: &[Vec<f64>]) -> Result<RasdReport> {
    ensure_dim("time points", exact.len(), approx.len())?;
    if exact.is_empty() {
        return Err(Error::Degenerate("no time points to score".into()));
    }
    let mut total = 0.0;
    for (a, e) in approx.iter().zip(exact) {
        ensure_dim("mean length", e.len(), a.len())?;
        let r = rms(a, e);
        total += r * r;
    }
    Ok(RasdReport {
        root_mean: math::sqrt(total / exact.len() as f64),
        root_sum: math::sqrt(total),
    })
}

/// Fraction of truth values inside the central `level` marginal intervals.
pub fn coverage(mean: &[f64], variances: &[f64], truth: &[f64], level: f64) -> Result<f64> {
    ensure_dim("variances", mean.len(), variances.len())?;
    ensure_dim("truth", mean.len(), truth.len())?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig("coverage level must lie in (0, 1)".into()));
    }
    let z = math::normal_quantile(0.5 + 0.5 * level);
    let hits = mean
        .iter()
        .zip(variances)
        .zip(truth)
        .filter(|((m, v), x)| (*x - *m).abs() <= z * math::sqrt(v.max(0.0)))
        .count();
    Ok(hits as f64 / mean.len() as f64)
}

/// One line of the score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub scenario: String,
    pub method: String,
    pub rep: usize,
    pub t: usize,
    /// Missing when the exact filter was not run.
    pub kl: Option<f64>,
    pub rmspe_ratio: Option<f64>,
    pub coverage_90: f64,
    pub runtime_ms: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kl_of_identical_gaussians_is_zero() {
        let m = DVector::from_vec(alloc::vec![1.0, -1.0]);
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        assert!(kl_gaussian(&m, &c, &m, &c).unwrap().abs() < 1e-14);
    }

    #[test]
    fn kl_univariate_closed_form() {
        let (m1, v1, m2, v2): (f64, f64, f64, f64) = (0.3, 2.0, -0.4, 0.7);
        let want = 0.5 * (v1 / v2 + (m2 - m1) * (m2 - m1) / v2 - 1.0 + (v2 / v1).ln());
        let got = kl_gaussian(
            &DVector::from_element(1, m1),
            &DMatrix::from_element(1, 1, v1),
            &DVector::from_element(1, m2),
            &DMatrix::from_element(1, 1, v2),
        )
        .unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn coverage_and_ratios() {
        let c = coverage(&[0.0, 0.0], &[1.0, 1.0], &[1.0, 2.0], 0.9).unwrap();
        assert_eq!(c, 0.5);
        assert!((rmspe_ratio(&[1.0, 1.0], &[0.5, 0.5], &[0.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        let r = rasd(&[alloc::vec![1.0], alloc::vec![1.0]], &[alloc::vec![0.0], alloc::vec![0.0]]).unwrap();
        assert_eq!(r.root_mean, 1.0);
        assert!((r.root_sum - 2f64.sqrt()).abs() < 1e-15);
    }
}
