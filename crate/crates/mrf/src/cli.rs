//! Subcommands of the `mrf` binary.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use mrf_core::filter::{KalmanFilter, MultiResFilter};
use mrf_core::partition::{build_partition, PartitionTree, TreeLayout};
use mrf_core::particle::ParticleFilter;
use mrf_core::rng::{self, label};
use mrf_core::ssm::{simulate_truth, Observation, Simulation, StateSpaceModel};

use crate::config::{self, presets, BasisConfig, Domain, ExperimentConfig, Method, ModelConfig, ParticleConfig, ScenarioConfig, TreeConfig};
use crate::harness::{self, CompareOptions};
use crate::io::{self, SeriesRow, TimingRow};

#[derive(Debug, Parser)]
#[command(name = "mrf", version, about = "Multi-resolution filtering experiments")]
pub struct Cli {
    /// Worker threads for replicate runs (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate truth and observations.
    Simulate(SimulateArgs),
    /// Run one filter on simulated or supplied data.
    Filter(FilterArgs),
    /// Replicated comparison of methods, scored against the Kalman filter.
    Compare(CompareArgs),
    /// Particle filter over model parameters.
    Particle(ParticleArgs),
    /// Basis functions (columns of the decomposition) on the grid.
    ExportBasis(ExportArgs),
    /// Sparsity patterns of B, B'B, L and L^-1.
    ExportPattern(ExportArgs),
}

#[derive(Debug, Args)]
pub struct ModelSource {
    /// Scenario JSON (model, tree and method settings).
    #[arg(long, conflicts_with = "model")]
    pub config: Option<PathBuf>,
    /// Model JSON; used with --tree.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Tree JSON: a saved layout or a tree configuration.
    #[arg(long)]
    pub tree: Option<PathBuf>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Replicate index within the seed.
    #[arg(long, default_value_t = 0)]
    pub rep: usize,
    /// Write the partition layout here.
    #[arg(long)]
    pub partition_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[command(flatten)]
    pub source: ModelSource,
    #[arg(long, value_enum, default_value = "mrf")]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    /// Observations CSV (t, index, value); replaces simulated data and layout.
    #[arg(long)]
    pub observations: Option<PathBuf>,
    #[arg(long)]
    pub ensemble_size: Option<usize>,
    #[arg(long)]
    pub taper_nnz: Option<usize>,
    /// Knots of the low-rank filter.
    #[arg(long)]
    pub rank: Option<usize>,
    /// Write the filtering factors as Matrix Market files.
    #[arg(long)]
    pub factors: bool,
    /// Write zero run times.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Experiment JSON: one scenario or `{"scenarios": [...]}`.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the replicate count of every scenario.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Overrides the seed of every scenario.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write zero run times so reruns are byte-identical.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Debug, Args)]
pub struct ParticleArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Basis JSON: grid, kernel and tree.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Runs a parsed command line; the returned code is nonzero when any
/// replicate or invariant check failed.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().ok();
    }
    match cli.command {
        Command::Simulate(a) => simulate(&a),
        Command::Filter(a) => filter(&a),
        Command::Compare(a) => compare(&a),
        Command::Particle(a) => particle(&a),
        Command::ExportBasis(a) => {
            let cfg: BasisConfig = config::read_json(&a.config)?;
            crate::export::export_basis(&cfg, &a.out)?;
            Ok(0)
        }
        Command::ExportPattern(a) => {
            let cfg: BasisConfig = config::read_json(&a.config)?;
            crate::export::export_pattern(&cfg, &a.out)?;
            Ok(0)
        }
    }
}

fn base_dir(p: &Path) -> Option<PathBuf> {
    p.parent().map(Path::to_path_buf)
}

/// A tree file holds either a saved layout or a configuration.
pub fn read_tree_arg(path: &Path, model: &ModelConfig) -> Result<PartitionTree> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(layout) = serde_json::from_str::<TreeLayout>(&text) {
        return Ok(PartitionTree::from_layout(&layout)?);
    }
    let cfg: TreeConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(build_partition(&model.grid()?, &cfg.partition()?)?)
}

struct Resolved {
    scenario: ScenarioConfig,
    tree: Arc<PartitionTree>,
    base: Option<PathBuf>,
}

fn resolve(src: &ModelSource) -> Result<Resolved> {
    let (mut scenario, base) = match (&src.config, &src.model) {
        (Some(c), _) => (config::read_json::<ScenarioConfig>(c)?, base_dir(c)),
        (None, Some(m)) => {
            let model: ModelConfig = config::read_json(m)?;
            let tree = match model.domain {
                Domain::OneD => presets::tree_1d(),
                Domain::TwoD => presets::tree_2d(),
            };
            let s = ScenarioConfig {
                name: m.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()),
                model,
                tree,
                methods: vec![Method::Mrf],
                replicates: 1,
                seed: 0,
                enkf: Default::default(),
                rank: None,
            };
            (s, base_dir(m))
        }
        (None, None) => bail!("either --config or --model is required"),
    };
    if let Some(s) = src.seed {
        scenario.seed = s;
    }
    let tree = match &src.tree {
        Some(p) => read_tree_arg(p, &scenario.model)?,
        None => build_partition(&scenario.model.grid()?, &scenario.tree.partition()?)?,
    };
    if tree.n() != scenario.model.grid_size() {
        bail!("tree covers {} points but the model grid has {}", tree.n(), scenario.model.grid_size());
    }
    if let Some(p) = &src.partition_out {
        io::write_tree(p, &tree)?;
    }
    Ok(Resolved { scenario, tree: Arc::new(tree), base })
}

fn write_simulation(out: &Path, model: &StateSpaceModel, sim: &Simulation) -> Result<()> {
    std::fs::create_dir_all(out)?;
    io::write_csv(&out.join("truth.csv"), &io::series(0, &sim.states, None)?)?;
    let idx = harness::observed_indices(model)?;
    io::write_csv(&out.join("observations.csv"), &io::series(1, &sim.observations, Some(&idx))?)?;
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<i32> {
    let r = resolve(&a.source)?;
    let data = harness::prepare_replicate(&r.scenario, a.source.rep, r.base.as_deref())?;
    write_simulation(&a.out, &data.model, &data.sim)?;
    Ok(0)
}

/// Replaces the model's observation layout with the one in `rows` and
/// returns the data vectors.
pub fn apply_observations(model: &mut StateSpaceModel, noise_variance: f64, rows: &[SeriesRow]) -> Result<Vec<Vec<f64>>> {
    let steps = model.steps();
    let n = model.n();
    let mut picks = vec![Vec::new(); steps];
    let mut data = vec![Vec::new(); steps];
    for r in rows {
        if r.t == 0 || r.t > steps {
            bail!("observation at t = {} outside 1..={steps}", r.t);
        }
        if r.index >= n {
            bail!("observation index {} outside the grid of {n} points", r.index);
        }
        picks[r.t - 1].push(r.index);
        data[r.t - 1].push(r.value);
    }
    model.observations = picks
        .iter()
        .map(|p| Observation::direct(n, p, noise_variance))
        .collect::<mrf_core::Result<Vec<_>>>()?;
    model.validate()?;
    Ok(data)
}

fn filter(a: &FilterArgs) -> Result<i32> {
    let mut r = resolve(&a.source)?;
    if let Some(e) = a.ensemble_size {
        r.scenario.enkf.ensemble_size = e;
    }
    if let Some(t) = a.taper_nnz {
        r.scenario.enkf.taper_nnz = Some(t);
    }
    if let Some(k) = a.rank {
        r.scenario.rank = Some(k);
    }
    let mut data = harness::prepare_replicate(&r.scenario, a.source.rep, r.base.as_deref())?;
    if let Some(p) = &a.observations {
        let rows: Vec<SeriesRow> = io::read_csv(p)?;
        let y = apply_observations(&mut data.model, r.scenario.model.noise_variance, &rows)?;
        data.sim.observations = y;
    }
    std::fs::create_dir_all(&a.out)?;
    let timing = !a.no_timing;
    let ms = |s: Instant| if timing { s.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
    let mut means = Vec::new();
    let mut vars = Vec::new();
    let mut times = Vec::new();
    let mut logliks = Vec::new();
    match a.method {
        Method::Kf => {
            let f = KalmanFilter::new(&data.model)?;
            let mut prev = f.initialize();
            for (k, y) in data.sim.observations.iter().enumerate() {
                let t = k + 1;
                let s0 = Instant::now();
                let prior = f.forecast(&prev)?;
                times.push(TimingRow { t, phase: "forecast".into(), millis: ms(s0) });
                let s1 = Instant::now();
                let (post, ll) = f.update(&prior, y)?;
                times.push(TimingRow { t, phase: "update".into(), millis: ms(s1) });
                means.push(post.mean.as_slice().to_vec());
                vars.push(post.cov.diagonal().as_slice().to_vec());
                logliks.push(SeriesRow { t, index: 0, value: ll });
                prev = post;
            }
        }
        Method::Mrf => {
            let f = MultiResFilter::new(&data.model, r.tree.clone())?;
            f.check_locality(usize::MAX, 4);
            let mut prev = f.initialize()?;
            for (k, y) in data.sim.observations.iter().enumerate() {
                let t = k + 1;
                let s0 = Instant::now();
                let prior = f.forecast(&prev)?;
                times.push(TimingRow { t, phase: "forecast".into(), millis: ms(s0) });
                let s1 = Instant::now();
                let up = f.update(&prior, y)?;
                times.push(TimingRow { t, phase: "update".into(), millis: ms(s1) });
                let post = up.moments;
                means.push(post.mean_original());
                vars.push(post.variances_original());
                logliks.push(SeriesRow { t, index: 0, value: up.loglik });
                if a.factors {
                    let mm = crate::export::factor_matrix(&post.factor)?;
                    io::write_matrix_market(&a.out.join(format!("B_{t}.mtx")), &mm)?;
                }
                prev = post;
            }
            if a.factors {
                io::write_tree(&a.out.join("tree.json"), &r.tree)?;
            }
        }
        m => {
            let outs = harness::run_method(&r.scenario, m, &data, &r.tree, None)?;
            for o in outs {
                times.push(TimingRow { t: o.t, phase: "step".into(), millis: if timing { o.millis } else { 0.0 } });
                means.push(o.mean);
                vars.push(o.variances);
            }
        }
    }
    io::write_csv(&a.out.join("mean.csv"), &io::series(1, &means, None)?)?;
    io::write_csv(&a.out.join("variance.csv"), &io::series(1, &vars, None)?)?;
    io::write_csv(&a.out.join("timing.csv"), &times)?;
    if !logliks.is_empty() {
        io::write_csv(&a.out.join("loglik.csv"), &logliks)?;
    }
    Ok(0)
}

fn compare(a: &CompareArgs) -> Result<i32> {
    let exp: ExperimentConfig = config::read_json(&a.config)?;
    let scenarios = exp.scenarios();
    let opts = CompareOptions { reps: a.reps, seed: a.seed, timing: !a.no_timing };
    let result = harness::run_compare(&scenarios, base_dir(&a.config).as_deref(), &opts)?;
    std::fs::create_dir_all(&a.out)?;
    io::write_scores(&a.out.join("scores.csv"), &result.rows)?;
    io::write_csv(&a.out.join("summary.csv"), &harness::summarize(&result.rows))?;
    io::write_csv(&a.out.join("rasd.csv"), &result.rasd)?;
    for (s, rep, cause) in &result.failures {
        eprintln!("{s} replicate {rep} failed: {cause}");
    }
    Ok(if result.failures.is_empty() { 0 } else { 1 })
}

fn particle(a: &ParticleArgs) -> Result<i32> {
    let cfg: ParticleConfig = config::read_json(&a.config)?;
    let seed = a.seed.unwrap_or(cfg.seed);
    let base = base_dir(&a.config);
    let (obs_seed, truth_seed) = harness::replicate_seeds(seed, 0);
    let truth_model = cfg.model.build(obs_seed, base.as_deref())?;
    let sim = simulate_truth(&truth_model, truth_seed)?;
    let tree = Arc::new(build_partition(&truth_model.grid, &cfg.tree.partition()?)?);
    let names: Vec<String> = cfg.parameters.iter().map(|p| p.name.clone()).collect();
    let family = |theta: &[f64]| -> mrf_core::Result<StateSpaceModel> {
        let build = || -> Result<StateSpaceModel> {
            let mut m = cfg.model.clone();
            for (name, &v) in names.iter().zip(theta) {
                m = m.with_parameter(name, v)?;
            }
            m.build(obs_seed, base.as_deref())
        };
        build().map_err(|e| mrf_core::Error::InvalidConfig(format!("{e:#}")))
    };
    let pf = ParticleFilter { family: &family, parameters: cfg.parameters.clone(), tree, threshold: cfg.threshold };
    let mut r = rng::stream(seed, &[label::PARTICLE]);
    let mut set = match &cfg.initial {
        Some(thetas) => pf.initialize_with(thetas.clone())?,
        None => pf.initialize(cfg.particles, &mut r)?,
    };
    let mut rows = Vec::new();
    let record = |t: usize, set: &mrf_core::particle::ParticleSet, ess: f64, rows: &mut Vec<_>| {
        for (i, (p, w)) in set.particles.iter().zip(set.weights()).enumerate() {
            rows.push((t, i, p.theta.clone(), w, ess));
        }
    };
    let ess0 = set.ess();
    record(0, &set, ess0, &mut rows);
    for (k, y) in sim.observations.iter().enumerate() {
        let (next, diag) = pf.step(&set, y, &mut r)?;
        if diag.resampled {
            info!("t = {}: resampled at ESS {:.2}", k + 1, diag.ess);
        }
        set = next;
        record(k + 1, &set, diag.ess, &mut rows);
    }
    std::fs::create_dir_all(&a.out)?;
    io::write_particles(&a.out.join("particles.csv"), &names, &rows)?;
    let idx = harness::observed_indices(&truth_model)?;
    io::write_csv(&a.out.join("truth.csv"), &io::series(0, &sim.states, None)?)?;
    io::write_csv(&a.out.join("observations.csv"), &io::series(1, &sim.observations, Some(&idx))?)?;
    Ok(0)
}
