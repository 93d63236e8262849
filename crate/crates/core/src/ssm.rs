//! Linear Gaussian state-space models, the advection-diffusion test models,
//! and simulation of truth and data.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::covariance::{materialize, Covariance, GridCovariance, Matern, Metric};
use crate::dense::{self, cholesky_jittered};
use crate::error::{ensure_dim, Error, Result};
use crate::grid::Grid;
use crate::math;
use crate::partition::PartitionTree;
use crate::rng::{self, label};
use crate::sparse::SparseMatrix;

/// Observation operator `H_t` and noise covariance `R_t` for one time point.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub operator: SparseMatrix,
    pub noise: SparseMatrix,
}

impl Observation {
    pub fn len(&self) -> usize {
        self.operator.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Noisy direct observations of the listed grid points.
    pub fn direct(n: usize, picks: &[usize], noise_variance: f64) -> Result<Self> {
        Ok(Self {
            operator: SparseMatrix::selection(n, picks)?,
            noise: SparseMatrix::diagonal(&vec![noise_variance; picks.len()]),
        })
    }

    fn validate(&self, n: usize) -> Result<()> {
        ensure_dim("observation operator columns", n, self.operator.ncols())?;
        ensure_dim("noise covariance rows", self.len(), self.noise.nrows())?;
        ensure_dim("noise covariance columns", self.len(), self.noise.ncols())?;
        for (i, j, v) in self.noise.triplets() {
            if (self.noise.get(j, i) - v).abs() > 1e-12 * v.abs().max(1.0) {
                return Err(Error::InvalidConfig(format!("noise covariance not symmetric at ({i}, {j})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub grid: Grid,
    /// Evolution operator `A` (time-invariant).
    pub evolution: SparseMatrix,
    /// Innovation covariance `Q`.
    pub innovation: Covariance,
    pub initial_mean: Vec<f64>,
    pub initial_covariance: Covariance,
    /// `observations[t - 1]` holds `H_t`, `R_t` for `t = 1..=T`.
    pub observations: Vec<Observation>,
    /// Optional additive term in the state equation.
    pub drift: Option<Vec<f64>>,
    /// Set when `A = sqrt(c) I` and `Q = 0`: the forecast factor is then
    /// `sqrt(c) B` and the decomposition is skipped.
    pub covariance_scale: Option<f64>,
}

impl StateSpaceModel {
    pub fn n(&self) -> usize {
        self.grid.len()
    }

    pub fn steps(&self) -> usize {
        self.observations.len()
    }

    /// `H_t`, `R_t` for `t >= 1`.
    pub fn observation(&self, t: usize) -> Result<&Observation> {
        if t == 0 || t > self.observations.len() {
            return Err(Error::InvalidConfig(format!(
                "no observation operator for t = {t} (model has {} steps)",
                self.observations.len()
            )));
        }
        Ok(&self.observations[t - 1])
    }

    pub fn innovation_oracle(&self) -> GridCovariance<'_> {
        self.innovation.on(&self.grid)
    }

    pub fn initial_oracle(&self) -> GridCovariance<'_> {
        self.initial_covariance.on(&self.grid)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        ensure_dim("evolution rows", n, self.evolution.nrows())?;
        ensure_dim("evolution columns", n, self.evolution.ncols())?;
        ensure_dim("initial mean", n, self.initial_mean.len())?;
        if let Some(d) = &self.drift {
            ensure_dim("drift", n, d.len())?;
        }
        for cov in [&self.innovation, &self.initial_covariance] {
            if let Covariance::Dense(m) = cov {
                ensure_dim("dense covariance rows", n, m.nrows())?;
                ensure_dim("dense covariance columns", n, m.ncols())?;
            }
        }
        for o in &self.observations {
            o.validate(n)?;
        }
        if let Some(c) = self.covariance_scale {
            if !(c >= 0.0) {
                return Err(Error::InvalidConfig("covariance scale must be non-negative".into()));
            }
            let s = math::sqrt(c);
            let ok = (0..n).all(|i| {
                let (cols, vals) = self.evolution.row(i);
                cols.iter().zip(vals).all(|(&j, &v)| if j == i { v == s } else { v == 0.0 })
            });
            if !ok || !self.innovation.is_zero() {
                return Err(Error::InvalidConfig(
                    "covariance scale c requires A = sqrt(c) I and Q = 0".into(),
                ));
            }
        }
        Ok(())
    }

    /// `A x + drift`.
    pub fn propagate_mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.evolution.mul_vec(x)?;
        if let Some(d) = &self.drift {
            for (a, b) in y.iter_mut().zip(d) {
                *a += b;
            }
        }
        Ok(y)
    }
}

/// How many finest regions and nonzeros each row of `A` touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LocalityReport {
    pub max_row_nnz: usize,
    pub max_regions_per_row: usize,
}

pub fn evolution_locality(a: &SparseMatrix, tree: &PartitionTree) -> LocalityReport {
    let mut max_regions = 0;
    for i in 0..a.nrows() {
        let (cols, _) = a.row(i);
        let mut regs: Vec<usize> = cols.iter().map(|&j| tree.finest_of(tree.position()[j])).collect();
        regs.sort_unstable();
        regs.dedup();
        max_regions = max_regions.max(regs.len());
    }
    LocalityReport {
        max_row_nnz: a.max_row_nnz(),
        max_regions_per_row: max_regions,
    }
}

/// Observations of one finest region.
#[derive(Debug, Clone)]
pub struct ObservationBlock {
    pub region: usize,
    /// Rows of `y_t` belonging to the region.
    pub rows: Vec<usize>,
    /// `H` restricted to those rows and the region's internal indices.
    pub operator: DMatrix<f64>,
    pub noise_chol: DMatrix<f64>,
    /// `H_f' R_f^{-1} H_f`.
    pub precision: DMatrix<f64>,
}

/// `H_t`, `R_t` grouped by finest region, in internal index order.
#[derive(Debug, Clone)]
pub struct ObservationBlocks {
    pub blocks: Vec<ObservationBlock>,
    pub n_obs: usize,
    pub log_det_noise: f64,
}

impl ObservationBlocks {
    /// Fails with [`Error::ObservationCoupling`] when a row of `H` or an entry
    /// of `R` links two finest regions.
    pub fn new(obs: &Observation, tree: &PartitionTree) -> Result<Self> {
        ensure_dim("observation operator columns", tree.n(), obs.operator.ncols())?;
        let n_obs = obs.len();
        let mut region_of_row = vec![0usize; n_obs];
        for (i, slot) in region_of_row.iter_mut().enumerate() {
            let (cols, vals) = obs.operator.row(i);
            let mut reg: Option<usize> = None;
            for (&j, &v) in cols.iter().zip(vals) {
                if v == 0.0 {
                    continue;
                }
                let f = tree.finest_of(tree.position()[j]);
                match reg {
                    None => reg = Some(f),
                    Some(g) if g != f => return Err(Error::ObservationCoupling { row: i }),
                    _ => {}
                }
            }
            *slot = reg.ok_or_else(|| Error::InvalidConfig(format!("observation row {i} is empty")))?;
        }
        for (i, j, v) in obs.noise.triplets() {
            if v != 0.0 && region_of_row[i] != region_of_row[j] {
                return Err(Error::ObservationCoupling { row: i });
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &f) in region_of_row.iter().enumerate() {
            groups.entry(f).or_default().push(i);
        }
        let mut blocks = Vec::with_capacity(groups.len());
        let mut log_det_noise = 0.0;
        for (f, rows) in groups {
            let reg = tree.region(f);
            let start = reg.range.start;
            let mut h = DMatrix::zeros(rows.len(), reg.len());
            for (a, &i) in rows.iter().enumerate() {
                let (cols, vals) = obs.operator.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    h[(a, tree.position()[j] - start)] += v;
                }
            }
            let r = DMatrix::from_fn(rows.len(), rows.len(), |a, b| obs.noise.get(rows[a], rows[b]));
            let l = dense::cholesky(&r).map_err(|p| Error::NotPositiveDefinite {
                pivot: rows[p],
                context: format!("observation noise covariance in region {}", reg.path_string()),
            })?;
            log_det_noise += dense::log_det_from_cholesky(&l);
            let mut w = h.clone();
            dense::solve_lower_in_place(&l, &mut w);
            let precision = w.transpose() * &w;
            blocks.push(ObservationBlock {
                region: f,
                rows,
                operator: h,
                noise_chol: l,
                precision,
            });
        }
        Ok(Self {
            blocks,
            n_obs,
            log_det_noise,
        })
    }

    /// Returns `H' R^{-1} (y - H mu)` (internal order) and `e' R^{-1} e` for
    /// the residual `e = y - H mu`.
    pub fn weighted_residual(&self, tree: &PartitionTree, y: &[f64], mean: &[f64]) -> Result<(Vec<f64>, f64)> {
        ensure_dim("observation vector", self.n_obs, y.len())?;
        ensure_dim("state mean", tree.n(), mean.len())?;
        let mut z = vec![0.0; tree.n()];
        let mut quad = 0.0;
        for b in &self.blocks {
            let range = tree.region(b.region).range.clone();
            let mu = DVector::from_column_slice(&mean[range.clone()]);
            let e = DVector::from_iterator(b.rows.len(), b.rows.iter().map(|&i| y[i])) - &b.operator * mu;
            let w = dense::cholesky_solve_vec(&b.noise_chol, &e);
            quad += e.dot(&w);
            let hz = b.operator.transpose() * w;
            for (k, v) in range.zip(hz.iter()) {
                z[k] += v;
            }
        }
        Ok((z, quad))
    }
}

/// Parameters of the advection-diffusion model on a circle.
///
/// The scheme is explicit and centred: `x_i <- (1 - 2d) x_i + (d - c/2) x_{i+1}
/// + (d + c/2) x_{i-1}`, with `d = alpha dt / ds^2` and `c = beta dt / ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvectionDiffusion1d {
    pub n: usize,
    pub steps: usize,
    pub diffusion_number: f64,
    pub courant_number: f64,
    pub smoothness: f64,
    pub range: f64,
    pub innovation_variance: f64,
    pub noise_variance: f64,
    pub obs_fraction: f64,
    pub initial_variance: f64,
    pub seed: u64,
}

impl Default for AdvectionDiffusion1d {
    fn default() -> Self {
        Self {
            n: 80,
            steps: 20,
            diffusion_number: 0.4,
            courant_number: 0.2,
            smoothness: 0.5,
            range: 0.1,
            innovation_variance: 0.5,
            noise_variance: 0.05,
            obs_fraction: 0.3,
            initial_variance: 1.0,
            seed: 0,
        }
    }
}

impl AdvectionDiffusion1d {
    /// Sets the dimensionless numbers from physical coefficients, with `ds = 1 / n`.
    pub fn with_physical(mut self, alpha: f64, beta: f64, dt: f64) -> Self {
        let ds = 1.0 / self.n as f64;
        self.diffusion_number = alpha * dt / (ds * ds);
        self.courant_number = beta * dt / ds;
        self
    }

    pub fn build(&self) -> Result<StateSpaceModel> {
        let n = self.n;
        if n < 3 {
            return Err(Error::InvalidConfig("the circle model needs at least 3 grid points".into()));
        }
        let d = self.diffusion_number;
        if !(0.0..=0.5).contains(&d) {
            return Err(Error::Unstable(format!(
                "explicit scheme needs 0 <= alpha dt / ds^2 <= 1/2, got {d}"
            )));
        }
        let c = self.courant_number;
        let mut trip = Vec::with_capacity(3 * n);
        for i in 0..n {
            trip.push((i, i, 1.0 - 2.0 * d));
            trip.push((i, (i + 1) % n, d - 0.5 * c));
            trip.push((i, (i + n - 1) % n, d + 0.5 * c));
        }
        let metric = Metric::Circular { period: 1.0 };
        finish(
            Grid::regular_1d(n)?,
            SparseMatrix::from_triplets(n, n, &trip)?,
            metric,
            self.smoothness,
            self.range,
            self.innovation_variance,
            self.initial_variance,
            self.noise_variance,
            self.obs_fraction,
            self.steps,
            self.seed,
        )
    }
}

/// Parameters of the advection-diffusion model on the unit square with
/// reflecting boundaries (a missing neighbour's weight goes to the centre).
#[derive(Debug, Clone, PartialEq)]
pub struct AdvectionDiffusion2d {
    pub nx: usize,
    pub ny: usize,
    pub steps: usize,
    /// `alpha dt / ds^2`, the same along both axes.
    pub diffusion_number: f64,
    /// `beta dt / ds` per axis.
    pub courant_number: [f64; 2],
    pub smoothness: f64,
    pub range: f64,
    pub innovation_variance: f64,
    pub noise_variance: f64,
    pub obs_fraction: f64,
    pub initial_variance: f64,
    pub seed: u64,
}

impl Default for AdvectionDiffusion2d {
    fn default() -> Self {
        Self {
            nx: 34,
            ny: 34,
            steps: 20,
            diffusion_number: 0.2,
            courant_number: [0.2, 0.2],
            smoothness: 0.5,
            range: 0.15,
            innovation_variance: 0.5,
            noise_variance: 0.25,
            obs_fraction: 0.1,
            initial_variance: 1.0,
            seed: 0,
        }
    }
}

impl AdvectionDiffusion2d {
    pub fn build(&self) -> Result<StateSpaceModel> {
        let (nx, ny) = (self.nx, self.ny);
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidConfig("the square model needs at least 2 x 2 points".into()));
        }
        let d = self.diffusion_number;
        if !(0.0..=0.25).contains(&d) {
            return Err(Error::Unstable(format!(
                "explicit scheme needs 0 <= alpha dt / ds^2 <= 1/4 in two dimensions, got {d}"
            )));
        }
        let [cx, cy] = self.courant_number;
        let idx = |i: usize, j: usize| j * nx + i;
        let mut trip = Vec::with_capacity(5 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let me = idx(i, j);
                let mut centre = 1.0 - 4.0 * d;
                let mut link = |ok: bool, other: usize, w: f64, centre: &mut f64| {
                    if ok {
                        trip.push((me, other, w));
                    } else {
                        *centre += w;
                    }
                };
                link(i + 1 < nx, if i + 1 < nx { idx(i + 1, j) } else { me }, d - 0.5 * cx, &mut centre);
                link(i > 0, if i > 0 { idx(i - 1, j) } else { me }, d + 0.5 * cx, &mut centre);
                link(j + 1 < ny, if j + 1 < ny { idx(i, j + 1) } else { me }, d - 0.5 * cy, &mut centre);
                link(j > 0, if j > 0 { idx(i, j - 1) } else { me }, d + 0.5 * cy, &mut centre);
                trip.push((me, me, centre));
            }
        }
        finish(
            Grid::regular_2d(nx, ny)?,
            SparseMatrix::from_triplets(nx * ny, nx * ny, &trip)?,
            Metric::Euclidean,
            self.smoothness,
            self.range,
            self.innovation_variance,
            self.initial_variance,
            self.noise_variance,
            self.obs_fraction,
            self.steps,
            self.seed,
        )
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    grid: Grid,
    evolution: SparseMatrix,
    metric: Metric,
    nu: f64,
    range: f64,
    innovation_variance: f64,
    initial_variance: f64,
    noise_variance: f64,
    obs_fraction: f64,
    steps: usize,
    seed: u64,
) -> Result<StateSpaceModel> {
    if !(noise_variance > 0.0) {
        return Err(Error::InvalidConfig("noise variance must be positive".into()));
    }
    if !(0.0..=1.0).contains(&obs_fraction) {
        return Err(Error::InvalidConfig("observation fraction must lie in [0, 1]".into()));
    }
    let n = grid.len();
    let innovation = Covariance::Kernel {
        kernel: Matern::new(nu, range, innovation_variance)?,
        metric,
    };
    let initial_covariance = Covariance::Kernel {
        kernel: Matern::new(nu, range, initial_variance)?,
        metric,
    };
    let observations = random_direct_observations(n, steps, obs_fraction, noise_variance, seed)?;
    let model = StateSpaceModel {
        grid,
        evolution,
        innovation,
        initial_mean: vec![0.0; n],
        initial_covariance,
        observations,
        drift: None,
        covariance_scale: None,
    };
    model.validate()?;
    Ok(model)
}

/// Direct noisy observations of `round(fraction * n)` grid points, a fresh
/// random subset at every step.
pub fn random_direct_observations(
    n: usize,
    steps: usize,
    fraction: f64,
    noise_variance: f64,
    seed: u64,
) -> Result<Vec<Observation>> {
    let k = math::round(fraction * n as f64) as usize;
    (1..=steps)
        .map(|t| {
            let mut r = rng::stream(seed, &[label::OBS_LAYOUT, t as u64]);
            Observation::direct(n, &rng::sample_without_replacement(&mut r, n, k), noise_variance)
        })
        .collect()
}

/// Simulated states `x_0, ..., x_T` and data `y_1, ..., y_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub states: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

fn sampler(cov: &Covariance, grid: &Grid, what: &str) -> Result<Option<DMatrix<f64>>> {
    if cov.is_zero() {
        return Ok(None);
    }
    dense::dense_guard(grid.len())?;
    let m = materialize(&cov.on(grid));
    cholesky_jittered(&m, || format!("{what} covariance")).map(Some)
}

/// Draws truth and data from the model with streams keyed by `seed`.
pub fn simulate_truth(model: &StateSpaceModel, seed: u64) -> Result<Simulation> {
    model.validate()?;
    let n = model.n();
    let mut r = rng::stream(seed, &[label::TRUTH]);
    let l0 = sampler(&model.initial_covariance, &model.grid, "initial")?;
    let lq = sampler(&model.innovation, &model.grid, "innovation")?;
    let draw = |l: &Option<DMatrix<f64>>, r: &mut rng::Rng| -> Vec<f64> {
        match l {
            Some(l) => (l * rng::normal_vector(r, n)).as_slice().to_vec(),
            None => vec![0.0; n],
        }
    };
    let mut x: Vec<f64> = draw(&l0, &mut r).iter().zip(&model.initial_mean).map(|(a, b)| a + b).collect();
    let mut states = vec![x.clone()];
    let mut observations = Vec::with_capacity(model.steps());
    for t in 1..=model.steps() {
        let w = draw(&lq, &mut r);
        x = model.propagate_mean(&x)?.iter().zip(&w).map(|(a, b)| a + b).collect();
        let obs = model.observation(t)?;
        let hx = obs.operator.mul_vec(&x)?;
        let y = if obs.is_empty() {
            Vec::new()
        } else {
            let rl = dense::cholesky(&obs.noise.to_dense()).map_err(|p| Error::NotPositiveDefinite {
                pivot: p,
                context: format!("observation noise covariance at t = {t}"),
            })?;
            let v = rl * rng::normal_vector(&mut r, obs.len());
            hx.iter().zip(v.iter()).map(|(a, b)| a + b).collect()
        };
        states.push(x.clone());
        observations.push(y);
    }
    Ok(Simulation { states, observations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{build_partition, PartitionConfig};

    #[test]
    fn circle_operator_rows_sum_to_one() {
        let m = AdvectionDiffusion1d::default().build().unwrap();
        for i in 0..m.n() {
            let (_, v) = m.evolution.row(i);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert_eq!(v.len(), 3);
        }
        assert_eq!(m.observation(1).unwrap().len(), 24);
    }

    #[test]
    fn square_operator_is_stochastic_with_five_point_stencil() {
        let m = AdvectionDiffusion2d::default().build().unwrap();
        assert_eq!(m.n(), 1156);
        for i in 0..m.n() {
            let (_, v) = m.evolution.row(i);
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            assert!(v.len() <= 5);
        }
        assert_eq!(m.observation(3).unwrap().len(), 116);
    }

    #[test]
    fn unstable_schemes_are_rejected() {
        let p = AdvectionDiffusion1d { diffusion_number: 0.6, ..Default::default() };
        assert!(matches!(p.build(), Err(Error::Unstable(_))));
        let p = AdvectionDiffusion2d { diffusion_number: 0.3, ..Default::default() };
        assert!(matches!(p.build(), Err(Error::Unstable(_))));
    }

    #[test]
    fn coupling_rows_are_named() {
        let g = Grid::regular_1d(9).unwrap();
        let tree = build_partition(&g, &PartitionConfig::uniform(1, 3, 1).unwrap()).unwrap();
        let h = SparseMatrix::from_triplets(2, 9, &[(0, 0, 1.0), (1, 2, 1.0), (1, 3, 1.0)]).unwrap();
        let obs = Observation { operator: h, noise: SparseMatrix::identity(2) };
        assert_eq!(ObservationBlocks::new(&obs, &tree).unwrap_err(), Error::ObservationCoupling { row: 1 });
        let h = SparseMatrix::selection(9, &[0, 5]).unwrap();
        let r = SparseMatrix::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0), (0, 1, 0.1), (1, 0, 0.1)]).unwrap();
        let obs = Observation { operator: h, noise: r };
        assert_eq!(ObservationBlocks::new(&obs, &tree).unwrap_err(), Error::ObservationCoupling { row: 0 });
    }

    #[test]
    fn simulation_is_reproducible() {
        let m = AdvectionDiffusion1d { steps: 3, ..Default::default() }.build().unwrap();
        let a = simulate_truth(&m, 11).unwrap();
        assert_eq!(a, simulate_truth(&m, 11).unwrap());
        assert_ne!(a, simulate_truth(&m, 12).unwrap());
        assert_eq!(a.states.len(), 4);
        assert_eq!(a.observations[0].len(), 24);
    }
}
