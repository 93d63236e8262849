//! Particle filtering over unknown, possibly time-varying parameters, with a
//! multi-resolution filter per particle for the state.
//!
//! Parameters are proposed from their transition distribution (bootstrap
//! proposal), so incremental weights are the integrated likelihoods
//! `p(y_t | theta_t, y_{1:t-1})`.

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::{FilterMoments, MultiResFilter};
use crate::math;
use crate::partition::PartitionTree;
use crate::rng;
use crate::ssm::StateSpaceModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Prior {
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Fixed { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Transition {
    /// `theta_t = theta_{t-1}`.
    #[default]
    Static,
    /// Gaussian random walk.
    RandomWalk { sd: f64 },
    /// Gaussian random walk on the log scale.
    LogRandomWalk { sd: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    pub name: String,
    pub prior: Prior,
    #[serde(default)]
    pub transition: Transition,
}

impl ParameterSpec {
    pub fn sample_prior<R: RngCore + ?Sized>(&self, r: &mut R) -> f64 {
        match self.prior {
            Prior::Uniform { low, high } => low + (high - low) * rng::uniform(r),
            Prior::Normal { mean, sd } => mean + sd * rng::standard_normal(r),
            Prior::LogNormal { mu, sigma } => math::exp(mu + sigma * rng::standard_normal(r)),
            Prior::Fixed { value } => value,
        }
    }

    pub fn propose<R: RngCore + ?Sized>(&self, prev: f64, r: &mut R) -> f64 {
        match self.transition {
            Transition::Static => prev,
            Transition::RandomWalk { sd } => prev + sd * rng::standard_normal(r),
            Transition::LogRandomWalk { sd } => prev * math::exp(sd * rng::standard_normal(r)),
        }
    }
}

/// Maps a parameter vector to a model.
pub trait ModelFamily {
    fn model(&self, theta: &[f64]) -> Result<StateSpaceModel>;
}

impl<F: Fn(&[f64]) -> Result<StateSpaceModel>> ModelFamily for F {
    fn model(&self, theta: &[f64]) -> Result<StateSpaceModel> {
        self(theta)
    }
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub theta: Vec<f64>,
    /// Normalized log weight.
    pub log_weight: f64,
    pub moments: FilterMoments,
}

#[derive(Debug, Clone)]
pub struct ParticleSet {
    pub particles: Vec<Particle>,
}

impl ParticleSet {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| math::exp(p.log_weight)).collect()
    }

    pub fn ess(&self) -> f64 {
        1.0 / self.weights().iter().map(|w| w * w).sum::<f64>()
    }

    /// Mean of the mixture filtering distribution, original grid order.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let n = self.particles.first().map_or(0, |p| p.moments.mean.len());
        let mut m = alloc::vec![0.0; n];
        for p in &self.particles {
            let w = math::exp(p.log_weight);
            for (a, b) in m.iter_mut().zip(p.moments.mean_original()) {
                *a += w * b;
            }
        }
        m
    }

    /// Weighted mean of each parameter.
    pub fn parameter_mean(&self) -> Vec<f64> {
        let d = self.particles.first().map_or(0, |p| p.theta.len());
        let mut m = alloc::vec![0.0; d];
        for p in &self.particles {
            let w = math::exp(p.log_weight);
            for (a, b) in m.iter_mut().zip(&p.theta) {
                *a += w * b;
            }
        }
        m
    }

    fn normalize(&mut self) -> Result<()> {
        let lw: Vec<f64> = self.particles.iter().map(|p| p.log_weight).collect();
        let z = math::log_sum_exp(&lw);
        if !z.is_finite() {
            return Err(Error::WeightUnderflow);
        }
        for p in &mut self.particles {
            p.log_weight -= z;
        }
        Ok(())
    }
}

/// Ancestor indices from systematic resampling with offset `u0` in `[0, 1)`.
pub fn systematic_resample(weights: &[f64], u0: f64) -> Vec<usize> {
    let n = weights.len();
    let total: f64 = weights.iter().sum();
    let mut out = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut i = 0;
    for k in 0..n {
        let u = (u0 + k as f64) / n as f64 * total;
        while i + 1 < n && cum + weights[i] <= u {
            cum += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

/// Resamples when the effective sample size falls below `threshold * N`.
/// Returns whether resampling happened.
pub fn resample<R: RngCore + ?Sized>(set: &mut ParticleSet, threshold: f64, r: &mut R) -> bool {
    let n = set.len();
    if n == 0 || set.ess() >= threshold * n as f64 {
        return false;
    }
    let ancestors = systematic_resample(&set.weights(), rng::uniform(r));
    let lw = -math::ln(n as f64);
    set.particles = ancestors
        .into_iter()
        .map(|a| {
            let mut p = set.particles[a].clone();
            p.log_weight = lw;
            p
        })
        .collect();
    true
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleDiagnostics {
    /// Effective sample size after reweighting, before any resampling.
    pub ess: f64,
    pub resampled: bool,
}

pub struct ParticleFilter<'f, F: ModelFamily> {
    pub family: &'f F,
    pub parameters: Vec<ParameterSpec>,
    pub tree: Arc<PartitionTree>,
    /// Resample when ESS < `threshold * N`.
    pub threshold: f64,
}

impl<'f, F: ModelFamily> ParticleFilter<'f, F> {
    /// Particles drawn from the parameter priors, equally weighted.
    pub fn initialize<R: RngCore + ?Sized>(&self, count: usize, r: &mut R) -> Result<ParticleSet> {
        let thetas: Vec<Vec<f64>> = (0..count)
            .map(|_| self.parameters.iter().map(|s| s.sample_prior(r)).collect())
            .collect();
        self.initialize_with(thetas)
    }

    /// Equally weighted particles at the given parameter values.
    pub fn initialize_with(&self, thetas: Vec<Vec<f64>>) -> Result<ParticleSet> {
        if thetas.is_empty() {
            return Err(Error::InvalidConfig("at least one particle is required".into()));
        }
        let lw = -math::ln(thetas.len() as f64);
        let particles = thetas
            .into_iter()
            .map(|theta| {
                let model = self.family.model(&theta)?;
                let moments = MultiResFilter::new(&model, self.tree.clone())?.initialize()?;
                Ok(Particle { theta, log_weight: lw, moments })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ParticleSet { particles })
    }

    /// Propagates, filters and reweights every particle with `y_t`, then
    /// resamples if needed.
    pub fn step<R: RngCore + ?Sized>(&self, set: &ParticleSet, y: &[f64], r: &mut R) -> Result<(ParticleSet, ParticleDiagnostics)> {
        let mut next = Vec::with_capacity(set.len());
        for p in &set.particles {
            let theta: Vec<f64> = self
                .parameters
                .iter()
                .zip(&p.theta)
                .map(|(s, &v)| s.propose(v, r))
                .collect();
            let model = self.family.model(&theta)?;
            let f = MultiResFilter::new(&model, self.tree.clone())?;
            let s = f.step(&p.moments, y)?;
            let lw = if s.loglik.is_nan() { f64::NEG_INFINITY } else { p.log_weight + s.loglik };
            next.push(Particle { theta, log_weight: lw, moments: s.posterior });
        }
        let mut out = ParticleSet { particles: next };
        out.normalize()?;
        let ess = out.ess();
        let resampled = resample(&mut out, self.threshold, r);
        Ok((out, ParticleDiagnostics { ess, resampled }))
    }
}
