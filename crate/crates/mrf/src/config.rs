//! JSON configuration for scenarios, trees and particle runs.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mrf_core::baselines::TaperFamily;
use mrf_core::covariance::{Covariance, Matern, Metric};
use mrf_core::grid::Grid;
use mrf_core::partition::{KnotMode, PartitionConfig};
use mrf_core::particle::ParameterSpec;
use mrf_core::ssm::{AdvectionDiffusion1d, AdvectionDiffusion2d, StateSpaceModel};
use serde::{Deserialize, Serialize};

use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    #[serde(rename = "1d")]
    OneD,
    #[serde(rename = "2d")]
    TwoD,
}

/// Advection-diffusion model on the circle (`1d`) or the unit square (`2d`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub domain: Domain,
    /// Grid size for `1d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Grid size for `2d`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    pub obs_fraction: f64,
    pub smoothness: f64,
    pub range: f64,
    pub innovation_variance: f64,
    pub noise_variance: f64,
    /// `alpha dt / ds^2`; defaults to 0.4 (`1d`) or 0.2 (`2d`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_number: Option<f64>,
    /// `beta dt / ds` per axis; defaults to 0.2.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub courant_number: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub initial_variance: f64,
    /// Replaces the built-in evolution operator (Matrix Market file).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution_mtx: Option<PathBuf>,
}

fn default_steps() -> usize {
    20
}

fn one() -> f64 {
    1.0
}

impl ModelConfig {
    pub fn one_d(obs_fraction: f64, smoothness: f64, range: f64, innovation: f64, noise: f64) -> Self {
        Self {
            domain: Domain::OneD,
            n: Some(80),
            nx: None,
            ny: None,
            steps: 20,
            obs_fraction,
            smoothness,
            range,
            innovation_variance: innovation,
            noise_variance: noise,
            diffusion_number: None,
            courant_number: None,
            initial_variance: 1.0,
            evolution_mtx: None,
        }
    }

    pub fn two_d(obs_fraction: f64, smoothness: f64, range: f64, innovation: f64, noise: f64) -> Self {
        Self {
            domain: Domain::TwoD,
            n: None,
            nx: Some(34),
            ny: Some(34),
            ..Self::one_d(obs_fraction, smoothness, range, innovation, noise)
        }
    }

    pub fn grid_size(&self) -> usize {
        match self.domain {
            Domain::OneD => self.n.unwrap_or(80),
            Domain::TwoD => self.nx.unwrap_or(34) * self.ny.unwrap_or(34),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Ok(match self.domain {
            Domain::OneD => Grid::regular_1d(self.n.unwrap_or(80))?,
            Domain::TwoD => Grid::regular_2d(self.nx.unwrap_or(34), self.ny.unwrap_or(34))?,
        })
    }

    /// Builds the model; observation locations are drawn from `obs_seed`.
    pub fn build(&self, obs_seed: u64, base_dir: Option<&Path>) -> Result<StateSpaceModel> {
        let courant = self.courant_number.clone().unwrap_or_else(|| vec![0.2, 0.2]);
        let mut model = match self.domain {
            Domain::OneD => {
                if self.nx.is_some() || self.ny.is_some() {
                    bail!("`nx`/`ny` apply to the 2d domain; use `n` for 1d");
                }
                AdvectionDiffusion1d {
                    n: self.n.unwrap_or(80),
                    steps: self.steps,
                    diffusion_number: self.diffusion_number.unwrap_or(0.4),
                    courant_number: courant[0],
                    smoothness: self.smoothness,
                    range: self.range,
                    innovation_variance: self.innovation_variance,
                    noise_variance: self.noise_variance,
                    obs_fraction: self.obs_fraction,
                    initial_variance: self.initial_variance,
                    seed: obs_seed,
                }
                .build()?
            }
            Domain::TwoD => {
                if self.n.is_some() {
                    bail!("`n` applies to the 1d domain; use `nx` and `ny` for 2d");
                }
                if courant.len() != 2 {
                    bail!("2d models need two courant numbers");
                }
                AdvectionDiffusion2d {
                    nx: self.nx.unwrap_or(34),
                    ny: self.ny.unwrap_or(34),
                    steps: self.steps,
                    diffusion_number: self.diffusion_number.unwrap_or(0.2),
                    courant_number: [courant[0], courant[1]],
                    smoothness: self.smoothness,
                    range: self.range,
                    innovation_variance: self.innovation_variance,
                    noise_variance: self.noise_variance,
                    obs_fraction: self.obs_fraction,
                    initial_variance: self.initial_variance,
                    seed: obs_seed,
                }
                .build()?
            }
        };
        if let Some(p) = &self.evolution_mtx {
            let path = match base_dir {
                Some(b) if p.is_relative() => b.join(p),
                _ => p.clone(),
            };
            model.evolution = io::read_matrix_market(&path)?;
            model.validate()?;
        }
        Ok(model)
    }

    /// Copy with one named parameter replaced (used by the particle filter).
    pub fn with_parameter(&self, name: &str, value: f64) -> Result<Self> {
        let mut c = self.clone();
        match name {
            "obs_fraction" => c.obs_fraction = value,
            "smoothness" => c.smoothness = value,
            "range" => c.range = value,
            "innovation_variance" => c.innovation_variance = value,
            "noise_variance" => c.noise_variance = value,
            "diffusion_number" => c.diffusion_number = Some(value),
            "initial_variance" => c.initial_variance = value,
            _ => bail!("unknown model parameter `{name}`"),
        }
        Ok(c)
    }
}

/// A scalar applies to every level; a list gives one value per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerLevel {
    Uniform(usize),
    Levels(Vec<usize>),
}

impl PerLevel {
    fn expand(&self, len: usize, what: &str) -> Result<Vec<usize>> {
        match self {
            PerLevel::Uniform(v) => Ok(vec![*v; len]),
            PerLevel::Levels(v) if v.len() == len => Ok(v.clone()),
            PerLevel::Levels(v) => bail!("{what}: expected {len} values, got {}", v.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub levels: usize,
    /// `J`: children per region, levels 1..=M.
    pub children: PerLevel,
    /// `r`: knots per region, levels 0..=M (the last entry is nominal).
    pub knots: PerLevel,
    #[serde(default)]
    pub knot_mode: KnotMode,
}

impl TreeConfig {
    pub fn partition(&self) -> Result<PartitionConfig> {
        let children = self.children.expand(self.levels, "children")?;
        let knots = self.knots.expand(self.levels + 1, "knots")?;
        let c = PartitionConfig { levels: self.levels, children, knots, knot_mode: self.knot_mode };
        c.validate()?;
        Ok(c)
    }

    pub fn uniform(levels: usize, children: usize, knots: usize) -> Self {
        Self {
            levels,
            children: PerLevel::Uniform(children),
            knots: PerLevel::Uniform(knots),
            knot_mode: KnotMode::Template,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Kf,
    Mrf,
    Enkf,
    Lrf,
    Mra,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Kf => "kf",
            Method::Mrf => "mrf",
            Method::Enkf => "enkf",
            Method::Lrf => "lrf",
            Method::Mra => "mra",
        }
    }

    pub fn label(self) -> u64 {
        self as u64 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnkfConfig {
    #[serde(default = "default_ensemble")]
    pub ensemble_size: usize,
    /// Target nonzeros per taper row; no tapering when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper_nnz: Option<usize>,
    #[serde(default)]
    pub taper_family: TaperFamily,
}

fn default_ensemble() -> usize {
    8
}

impl Default for EnkfConfig {
    fn default() -> Self {
        Self { ensemble_size: 8, taper_nnz: None, taper_family: TaperFamily::Kanter }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelConfig,
    pub tree: TreeConfig,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "one_rep")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub enkf: EnkfConfig,
    /// Knots used by the low-rank filter; defaults to the tree's budget `sum_m r_m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
}

/// The exact filter always runs as the reference; it is scored only when listed.
fn all_methods() -> Vec<Method> {
    vec![Method::Mrf, Method::Enkf, Method::Lrf, Method::Mra]
}

fn one_rep() -> usize {
    1
}

impl ScenarioConfig {
    pub fn rank(&self) -> Result<usize> {
        Ok(match self.rank {
            Some(r) => r,
            None => self.tree.partition()?.budget(),
        })
    }
}

/// One scenario or a list of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExperimentConfig {
    Many { scenarios: Vec<ScenarioConfig> },
    One(ScenarioConfig),
}

impl ExperimentConfig {
    pub fn scenarios(self) -> Vec<ScenarioConfig> {
        match self {
            ExperimentConfig::Many { scenarios } => scenarios,
            ExperimentConfig::One(s) => vec![s],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleConfig {
    pub name: String,
    /// Model at the true parameter values (used to simulate data).
    pub model: ModelConfig,
    pub tree: TreeConfig,
    pub parameters: Vec<ParameterSpec>,
    #[serde(default = "default_particles")]
    pub particles: usize,
    /// Resample when ESS falls below this fraction of the particle count.
    #[serde(default = "half")]
    pub threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fixed starting parameter values, one list per particle (overrides priors).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<Vec<Vec<f64>>>,
}

fn default_particles() -> usize {
    100
}

fn half() -> f64 {
    0.5
}

/// Covariance whose decomposition is exported as basis functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Identity,
    Matern {
        smoothness: f64,
        range: f64,
        #[serde(default = "one")]
        variance: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricConfig {
    #[default]
    Euclidean,
    Circular,
}

/// Input of `export-basis` and `export-pattern`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nx: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ny: Option<usize>,
    #[serde(default)]
    pub metric: MetricConfig,
    pub kernel: KernelConfig,
    pub tree: TreeConfig,
}

impl BasisConfig {
    pub fn grid(&self) -> Result<Grid> {
        Ok(match self.domain {
            Domain::OneD => Grid::regular_1d(self.n.unwrap_or(80))?,
            Domain::TwoD => Grid::regular_2d(self.nx.unwrap_or(34), self.ny.unwrap_or(34))?,
        })
    }

    pub fn covariance(&self) -> Result<Covariance> {
        Ok(match &self.kernel {
            KernelConfig::Identity => Covariance::ScaledIdentity(1.0),
            KernelConfig::Matern { smoothness, range, variance } => Covariance::Kernel {
                kernel: Matern::new(*smoothness, *range, *variance)?,
                metric: match self.metric {
                    MetricConfig::Euclidean => Metric::Euclidean,
                    MetricConfig::Circular => Metric::Circular { period: 1.0 },
                },
            },
        })
    }
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Built-in configurations.
pub mod presets {
    use super::*;
    use mrf_core::particle::{Prior, Transition};

    fn scenario(name: &str, model: ModelConfig, tree: TreeConfig, enkf: EnkfConfig) -> ScenarioConfig {
        ScenarioConfig {
            name: name.into(),
            model,
            tree,
            methods: all_methods(),
            replicates: 10,
            seed: 2024,
            enkf,
            rank: None,
        }
    }

    /// The 80-point, three-level, 3-way tree with 2 knots per region.
    pub fn tree_1d() -> TreeConfig {
        TreeConfig::uniform(3, 3, 2)
    }

    pub fn tree_2d() -> TreeConfig {
        TreeConfig {
            levels: 4,
            children: PerLevel::Levels(vec![2, 4, 4, 4]),
            knots: PerLevel::Levels(vec![16, 8, 6, 6, 6]),
            knot_mode: KnotMode::Template,
        }
    }

    /// Four one-dimensional scenarios: baseline, smoother, denser data, less noise.
    pub fn table_1d() -> Vec<ScenarioConfig> {
        let enkf = EnkfConfig { ensemble_size: 8, taper_nnz: Some(8), taper_family: TaperFamily::Kanter };
        let base = ModelConfig::one_d(0.3, 0.5, 0.1, 0.5, 0.05);
        vec![
            scenario("1d-baseline", base.clone(), tree_1d(), enkf.clone()),
            scenario("1d-smooth", ModelConfig { smoothness: 1.5, ..base.clone() }, tree_1d(), enkf.clone()),
            scenario("1d-dense-obs", ModelConfig { obs_fraction: 0.8, ..base.clone() }, tree_1d(), enkf.clone()),
            scenario("1d-low-noise", ModelConfig { noise_variance: 0.01, ..base }, tree_1d(), enkf),
        ]
    }

    /// Four two-dimensional scenarios on the 34 x 34 square.
    pub fn table_2d() -> Vec<ScenarioConfig> {
        let enkf = EnkfConfig { ensemble_size: 42, taper_nnz: Some(42), taper_family: TaperFamily::Kanter };
        let base = ModelConfig::two_d(0.1, 0.5, 0.15, 0.5, 0.25);
        vec![
            scenario("2d-baseline", base.clone(), tree_2d(), enkf.clone()),
            scenario("2d-smooth", ModelConfig { smoothness: 1.5, ..base.clone() }, tree_2d(), enkf.clone()),
            scenario("2d-dense-obs", ModelConfig { obs_fraction: 0.3, ..base.clone() }, tree_2d(), enkf.clone()),
            scenario("2d-low-noise", ModelConfig { noise_variance: 0.1, ..base }, tree_2d(), enkf),
        ]
    }

    /// Tree and taper settings for a lake-surface-temperature sized problem
    /// (documentation only; the data are not distributed).
    pub fn lake_tree() -> TreeConfig {
        TreeConfig {
            levels: 5,
            children: PerLevel::Uniform(4),
            knots: PerLevel::Levels(vec![16, 8, 8, 8, 4, 4]),
            knot_mode: KnotMode::Template,
        }
    }

    pub fn lake_enkf() -> EnkfConfig {
        EnkfConfig { ensemble_size: 48, taper_nnz: Some(5), taper_family: TaperFamily::Kanter }
    }

    /// Exponential kernel on 80 points of the unit interval, decomposed on
    /// the one-dimensional tree.
    pub fn basis_1d() -> BasisConfig {
        BasisConfig {
            domain: Domain::OneD,
            n: Some(80),
            nx: None,
            ny: None,
            metric: MetricConfig::Euclidean,
            kernel: KernelConfig::Matern { smoothness: 0.5, range: 0.3, variance: 1.0 },
            tree: tree_1d(),
        }
    }

    pub fn basis_identity() -> BasisConfig {
        BasisConfig { kernel: KernelConfig::Identity, ..basis_1d() }
    }

    /// Static innovation variance with a uniform prior.
    pub fn particle_static() -> ParticleConfig {
        ParticleConfig {
            name: "innovation-static".into(),
            model: ModelConfig::one_d(0.3, 0.5, 0.1, 0.5, 0.05),
            tree: tree_1d(),
            parameters: vec![ParameterSpec {
                name: "innovation_variance".into(),
                prior: Prior::Uniform { low: 0.1, high: 1.5 },
                transition: Transition::Static,
            }],
            particles: 100,
            threshold: 0.5,
            seed: 7,
            initial: None,
        }
    }

    /// Two particles at fixed values of the innovation variance, never resampled.
    pub fn particle_pair() -> ParticleConfig {
        ParticleConfig {
            name: "innovation-pair".into(),
            parameters: vec![ParameterSpec {
                name: "innovation_variance".into(),
                prior: Prior::Fixed { value: 0.5 },
                transition: Transition::Static,
            }],
            particles: 2,
            threshold: 0.0,
            initial: Some(vec![vec![0.5], vec![1.0]]),
            ..particle_static()
        }
    }

    /// Observation noise drifting on the log scale.
    pub fn particle_drift() -> ParticleConfig {
        ParticleConfig {
            name: "noise-drift".into(),
            parameters: vec![ParameterSpec {
                name: "noise_variance".into(),
                prior: Prior::LogNormal { mu: -3.0, sigma: 0.5 },
                transition: Transition::LogRandomWalk { sd: 0.05 },
            }],
            ..particle_static()
        }
    }
}
