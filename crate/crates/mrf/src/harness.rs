//! Replicated method comparisons scored against the exact Kalman filter.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{Context, Result};
use log::{info, warn};
use mrf_core::baselines::{build_taper, low_rank_tree, EnsembleFilter, MraFilter};
use mrf_core::covariance::Metric;
use mrf_core::dense::DENSE_LIMIT;
use mrf_core::filter::{KalmanFilter, KalmanStep, MultiResFilter};
use mrf_core::metrics::{coverage, kl_dense, kl_factor, rasd, rmspe_ratio, ExactReference, RasdReport, ScoreRow};
use mrf_core::partition::{build_partition, PartitionTree};
use mrf_core::rng::{self, label};
use mrf_core::ssm::{simulate_truth, Simulation, StateSpaceModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Domain, Method, ScenarioConfig};

/// Seeds for the observation layout and for truth and data of replicate `rep`.
pub fn replicate_seeds(seed: u64, rep: usize) -> (u64, u64) {
    (
        rng::derive_seed(seed, &[label::REPLICATE, rep as u64, label::OBS_LAYOUT]),
        rng::derive_seed(seed, &[label::REPLICATE, rep as u64, label::TRUTH]),
    )
}

pub struct Replicate {
    pub rep: usize,
    pub model: StateSpaceModel,
    pub sim: Simulation,
}

pub fn prepare_replicate(scenario: &ScenarioConfig, rep: usize, base_dir: Option<&Path>) -> Result<Replicate> {
    let (obs_seed, truth_seed) = replicate_seeds(scenario.seed, rep);
    let model = scenario.model.build(obs_seed, base_dir)?;
    let sim = simulate_truth(&model, truth_seed)?;
    Ok(Replicate { rep, model, sim })
}

/// Filtering output of one method at one time point, grid order.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub t: usize,
    pub mean: Vec<f64>,
    pub variances: Vec<f64>,
    pub kl: Option<f64>,
    pub millis: f64,
}

fn metric_of(scenario: &ScenarioConfig) -> Metric {
    match scenario.model.domain {
        Domain::OneD => Metric::Circular { period: 1.0 },
        Domain::TwoD => Metric::Euclidean,
    }
}

fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Runs one method over all time points of a replicate.
pub fn run_method(
    scenario: &ScenarioConfig,
    method: Method,
    data: &Replicate,
    tree: &Arc<PartitionTree>,
    reference: Option<&[ExactReference]>,
) -> Result<Vec<MethodOutput>> {
    let model = &data.model;
    let y = &data.sim.observations;
    let mut out = Vec::with_capacity(y.len());
    match method {
        Method::Kf => {
            let f = KalmanFilter::new(model)?;
            let mut prev = f.initialize();
            for (k, yt) in y.iter().enumerate() {
                let start = Instant::now();
                let s = f.step(&prev, yt)?;
                let millis = elapsed(start);
                let kl = reference.map(|r| kl_dense(&r[k], &s.posterior.mean, &s.posterior.cov)).transpose()?;
                out.push(MethodOutput {
                    t: k + 1,
                    mean: s.posterior.mean.as_slice().to_vec(),
                    variances: s.posterior.cov.diagonal().as_slice().to_vec(),
                    kl,
                    millis,
                });
                prev = s.posterior;
            }
        }
        Method::Mrf | Method::Lrf => {
            let t = match method {
                Method::Mrf => tree.clone(),
                _ => Arc::new(low_rank_tree(&model.grid, scenario.rank()?)?),
            };
            let f = MultiResFilter::new(model, t)?;
            let mut prev = f.initialize()?;
            for (k, yt) in y.iter().enumerate() {
                let start = Instant::now();
                let s = f.step(&prev, yt)?;
                let millis = elapsed(start);
                let kl = reference.map(|r| kl_factor(&r[k], &s.posterior)).transpose()?;
                out.push(MethodOutput {
                    t: k + 1,
                    mean: s.posterior.mean_original(),
                    variances: s.posterior.variances_original(),
                    kl,
                    millis,
                });
                prev = s.posterior;
            }
        }
        Method::Mra => {
            let f = MraFilter::new(model, tree.clone())?;
            let mut state = f.initialize()?;
            for (k, yt) in y.iter().enumerate() {
                let start = Instant::now();
                let (next, post) = f.step(&state, yt)?;
                let millis = elapsed(start);
                let kl = reference.map(|r| kl_factor(&r[k], &post)).transpose()?;
                out.push(MethodOutput {
                    t: k + 1,
                    mean: post.mean_original(),
                    variances: post.variances_original(),
                    kl,
                    millis,
                });
                state = next;
            }
        }
        Method::Enkf => {
            let cfg = &scenario.enkf;
            let taper = cfg
                .taper_nnz
                .map(|nnz| build_taper(&model.grid, metric_of(scenario), cfg.taper_family, nnz))
                .transpose()?;
            let f = EnsembleFilter::new(model, cfg.ensemble_size, taper)?;
            let base = rng::derive_seed(scenario.seed, &[label::REPLICATE, data.rep as u64, label::ENKF]);
            let mut ens = f.initialize(&mut rng::stream(base, &[0]))?;
            for (k, yt) in y.iter().enumerate() {
                let mut r = rng::stream(base, &[k as u64 + 1]);
                let start = Instant::now();
                let (_, post) = f.step(&ens, yt, &mut r)?;
                let millis = elapsed(start);
                // Without a taper the sample covariance is singular when the
                // ensemble is smaller than the grid; that scores as infinite.
                let kl = reference
                    .map(|r| kl_dense(&r[k], &post.mean(), &post.covariance(f.taper())).unwrap_or(f64::INFINITY));
                out.push(MethodOutput {
                    t: k + 1,
                    mean: post.mean().as_slice().to_vec(),
                    variances: post.variances(),
                    kl,
                    millis,
                });
                ens = post;
            }
        }
    }
    Ok(out)
}

/// Score rows and mean-error summary of one replicate.
#[derive(Debug, Clone)]
pub struct ReplicateScores {
    pub rows: Vec<ScoreRow>,
    pub rasd: Vec<RasdRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasdRow {
    pub scenario: String,
    pub method: String,
    pub rep: usize,
    pub root_mean: f64,
    pub root_sum: f64,
}

/// Exact filtering steps and their KL references, when the grid is small enough.
pub fn exact_reference(model: &StateSpaceModel, y: &[Vec<f64>]) -> Result<Option<(Vec<KalmanStep>, Vec<ExactReference>)>> {
    if model.n() > DENSE_LIMIT {
        return Ok(None);
    }
    let f = KalmanFilter::new(model)?;
    let steps = mrf_core::filter::run_kalman(&f, y)?;
    let refs = steps
        .iter()
        .map(|s| ExactReference::new(&s.posterior.mean, &s.posterior.cov))
        .collect::<mrf_core::Result<Vec<_>>>()?;
    Ok(Some((steps, refs)))
}

pub fn score_replicate(
    scenario: &ScenarioConfig,
    data: &Replicate,
    tree: &Arc<PartitionTree>,
    timing: bool,
) -> Result<ReplicateScores> {
    let exact = exact_reference(&data.model, &data.sim.observations)?;
    let refs = exact.as_ref().map(|(_, r)| r.as_slice());
    let exact_means: Option<Vec<Vec<f64>>> = exact
        .as_ref()
        .map(|(s, _)| s.iter().map(|k| k.posterior.mean.as_slice().to_vec()).collect());
    let mut rows = Vec::new();
    let mut rasd_rows = Vec::new();
    for &method in &scenario.methods {
        let outputs = run_method(scenario, method, data, tree, refs)
            .with_context(|| format!("{} replicate {} method {}", scenario.name, data.rep, method.name()))?;
        for o in &outputs {
            let truth = &data.sim.states[o.t];
            let ratio = exact_means
                .as_ref()
                .map(|m| rmspe_ratio(&o.mean, &m[o.t - 1], truth))
                .transpose()?;
            rows.push(ScoreRow {
                scenario: scenario.name.clone(),
                method: method.name().into(),
                rep: data.rep,
                t: o.t,
                kl: o.kl,
                rmspe_ratio: ratio,
                coverage_90: coverage(&o.mean, &o.variances, truth, 0.9)?,
                runtime_ms: if timing { o.millis } else { 0.0 },
            });
        }
        if let Some(m) = &exact_means {
            let approx: Vec<Vec<f64>> = outputs.iter().map(|o| o.mean.clone()).collect();
            let RasdReport { root_mean, root_sum } = rasd(&approx, m)?;
            rasd_rows.push(RasdRow {
                scenario: scenario.name.clone(),
                method: method.name().into(),
                rep: data.rep,
                root_mean,
                root_sum,
            });
        }
    }
    Ok(ReplicateScores { rows, rasd: rasd_rows })
}

#[derive(Debug, Clone, Default)]
pub struct CompareOptions {
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    /// Record wall times; zeros otherwise, which keeps outputs byte-stable.
    pub timing: bool,
}

#[derive(Debug, Clone, Default)]
pub struct CompareResult {
    pub rows: Vec<ScoreRow>,
    pub rasd: Vec<RasdRow>,
    /// `(scenario, rep, cause)` for replicates that were aborted.
    pub failures: Vec<(String, usize, String)>,
}

pub fn scenario_tree(scenario: &ScenarioConfig) -> Result<Arc<PartitionTree>> {
    Ok(Arc::new(build_partition(&scenario.model.grid()?, &scenario.tree.partition()?)?))
}

/// Runs every replicate of every scenario. Replicates run in parallel; the
/// output order is by scenario, replicate, method and time.
pub fn run_compare(scenarios: &[ScenarioConfig], base_dir: Option<&Path>, opts: &CompareOptions) -> Result<CompareResult> {
    let mut result = CompareResult::default();
    for sc in scenarios {
        let mut sc = sc.clone();
        if let Some(r) = opts.reps {
            sc.replicates = r;
        }
        if let Some(s) = opts.seed {
            sc.seed = s;
        }
        let tree = scenario_tree(&sc)?;
        info!("scenario {}: n = {}, {} replicates", sc.name, tree.n(), sc.replicates);
        let outcomes: Vec<Result<ReplicateScores>> = (0..sc.replicates)
            .into_par_iter()
            .map(|rep| {
                let data = prepare_replicate(&sc, rep, base_dir)?;
                score_replicate(&sc, &data, &tree, opts.timing)
            })
            .collect();
        for (rep, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(s) => {
                    result.rows.extend(s.rows);
                    result.rasd.extend(s.rasd);
                }
                Err(e) => {
                    warn!("{} replicate {rep} aborted: {e:#}", sc.name);
                    result.failures.push((sc.name.clone(), rep, format!("{e:#}")));
                }
            }
        }
    }
    Ok(result)
}

/// Replicate averages per scenario, method and time point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: String,
    pub t: usize,
    pub reps: usize,
    pub kl: Option<f64>,
    pub rmspe_ratio: Option<f64>,
    pub coverage_90: f64,
    pub runtime_ms: f64,
}

fn mean_of(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = v.collect();
    v.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(rows: &[ScoreRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, usize)> = Vec::new();
    for r in rows {
        let k = (r.scenario.clone(), r.method.clone(), r.t);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(scenario, method, t)| {
            let g: Vec<&ScoreRow> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.method == method && r.t == t)
                .collect();
            let n = g.len() as f64;
            SummaryRow {
                reps: g.len(),
                kl: mean_of(g.iter().map(|r| r.kl)),
                rmspe_ratio: mean_of(g.iter().map(|r| r.rmspe_ratio)),
                coverage_90: g.iter().map(|r| r.coverage_90).sum::<f64>() / n,
                runtime_ms: g.iter().map(|r| r.runtime_ms).sum::<f64>() / n,
                scenario,
                method,
                t,
            }
        })
        .collect()
}

/// Mean of a summary column over the time points of one scenario and method.
pub fn time_average(summary: &[SummaryRow], scenario: &str, method: &str, f: impl Fn(&SummaryRow) -> Option<f64>) -> Option<f64> {
    mean_of(summary.iter().filter(|r| r.scenario == scenario && r.method == method).map(f))
}

/// Grid index of every observation per time point (row index for non-selection rows).
pub fn observed_indices(model: &StateSpaceModel) -> Result<Vec<Vec<usize>>> {
    (1..=model.steps())
        .map(|t| {
            let h = &model.observation(t)?.operator;
            Ok((0..h.nrows())
                .map(|i| {
                    let (cols, vals) = h.row(i);
                    if cols.len() == 1 && vals[0] == 1.0 { cols[0] } else { i }
                })
                .collect())
        })
        .collect()
}
