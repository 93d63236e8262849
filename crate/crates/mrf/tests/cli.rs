//! End-to-end runs of the command line on small configurations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mrf::config::{presets, BasisConfig, Method, ModelConfig, ScenarioConfig};
use mrf::io::{self, write_json};
use tempfile::TempDir;

fn mrf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mrf")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = mrf(args);
    assert!(out.status.success(), "mrf {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn records(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn small_scenario(methods: Vec<Method>) -> ScenarioConfig {
    let mut sc = presets::table_1d().remove(0);
    sc.model = ModelConfig { steps: 4, ..sc.model };
    sc.methods = methods;
    sc.replicates = 2;
    sc
}

fn scenario_file(dir: &Path, sc: &ScenarioConfig) -> PathBuf {
    let p = dir.join("scenario.json");
    write_json(&p, sc).unwrap();
    p
}

#[test]
fn simulate_writes_truth_and_observations() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario_file(tmp.path(), &small_scenario(vec![Method::Mrf]));
    let out = tmp.path().join("sim");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&out)]);
    let (h, truth) = records(&out.join("truth.csv"));
    assert_eq!(h, ["t", "index", "value"]);
    assert_eq!(truth.len(), 5 * 80);
    let (h, obs) = records(&out.join("observations.csv"));
    assert_eq!(h, ["t", "index", "value"]);
    assert_eq!(obs.len(), 4 * 24);
    assert!(obs.iter().all(|r| r[0] != "0"));
}

#[test]
fn filter_outputs_are_reproducible_without_timing() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario_file(tmp.path(), &small_scenario(vec![Method::Mrf]));
    for method in ["kf", "mrf", "enkf", "lrf", "mra"] {
        let a = tmp.path().join(format!("{method}-a"));
        let b = tmp.path().join(format!("{method}-b"));
        for out in [&a, &b] {
            ok(&["filter", "--config", s(&cfg), "--method", method, "--out", s(out), "--no-timing"]);
        }
        for f in ["mean.csv", "variance.csv", "timing.csv"] {
            let x = std::fs::read(a.join(f)).unwrap();
            assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{method} {f}");
        }
        let (h, rows) = records(&a.join("mean.csv"));
        assert_eq!(h, ["t", "index", "value"]);
        assert_eq!(rows.len(), 4 * 80, "{method}");
        let (h, _) = records(&a.join("timing.csv"));
        assert_eq!(h, ["t", "phase", "millis"]);
        assert_eq!(a.join("loglik.csv").exists(), method == "kf" || method == "mrf");
    }
}

#[test]
fn external_observations_and_tree_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario_file(tmp.path(), &small_scenario(vec![Method::Mrf]));
    let sim = tmp.path().join("sim");
    let layout = tmp.path().join("layout.json");
    ok(&["simulate", "--config", s(&cfg), "--out", s(&sim), "--partition-out", s(&layout)]);
    let base = tmp.path().join("base");
    ok(&["filter", "--config", s(&cfg), "--out", s(&base), "--no-timing"]);
    let with_obs = tmp.path().join("obs");
    let obs = sim.join("observations.csv");
    ok(&["filter", "--config", s(&cfg), "--out", s(&with_obs), "--no-timing", "--observations", s(&obs)]);
    let with_layout = tmp.path().join("layout");
    ok(&["filter", "--config", s(&cfg), "--out", s(&with_layout), "--no-timing", "--tree", s(&layout)]);
    let tree_cfg = tmp.path().join("tree.json");
    write_json(&tree_cfg, &presets::tree_1d()).unwrap();
    let with_cfg = tmp.path().join("treecfg");
    ok(&["filter", "--config", s(&cfg), "--out", s(&with_cfg), "--no-timing", "--tree", s(&tree_cfg)]);
    let want = std::fs::read(base.join("mean.csv")).unwrap();
    for d in [&with_obs, &with_layout, &with_cfg] {
        assert_eq!(std::fs::read(d.join("mean.csv")).unwrap(), want, "{}", d.display());
    }
}

#[test]
fn factors_are_written_per_step() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario_file(tmp.path(), &small_scenario(vec![Method::Mrf]));
    let out = tmp.path().join("f");
    ok(&["filter", "--config", s(&cfg), "--out", s(&out), "--factors"]);
    let layout: mrf_core::partition::TreeLayout =
        serde_json::from_str(&std::fs::read_to_string(out.join("tree.json")).unwrap()).unwrap();
    let tree = mrf_core::partition::PartitionTree::from_layout(&layout).unwrap();
    for t in 1..=4 {
        let b = io::read_matrix_market(&out.join(format!("B_{t}.mtx"))).unwrap();
        assert_eq!((b.nrows(), b.ncols()), (80, 80));
        let d = b.to_dense();
        assert_eq!(mrf_core::factor::out_of_pattern_max(&tree, &d), 0.0);
        for i in 0..80 {
            assert!(d.row(i).iter().filter(|v| **v != 0.0).count() <= 8);
        }
    }
}

#[test]
fn compare_scores_and_summaries() {
    let tmp = TempDir::new().unwrap();
    let cfg = scenario_file(tmp.path(), &small_scenario(vec![Method::Kf, Method::Mrf, Method::Mra]));
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["compare", "--config", s(&cfg), "--out", s(&a), "--no-timing"]);
    ok(&["compare", "--config", s(&cfg), "--out", s(&b), "--no-timing"]);
    for f in ["scores.csv", "summary.csv", "rasd.csv"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let (h, rows) = records(&a.join("scores.csv"));
    assert_eq!(h, ["scenario", "method", "rep", "t", "kl", "rmspe_ratio", "coverage_90", "runtime_ms"]);
    assert_eq!(rows.len(), 3 * 2 * 4);
    for r in rows.iter().filter(|r| r[1] == "kf") {
        assert!(r[4].parse::<f64>().unwrap().abs() < 1e-8, "{r:?}");
        assert!((r[5].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    }
    for r in rows.iter().filter(|r| r[1] != "kf") {
        assert!(r[4].parse::<f64>().unwrap() > 0.0);
    }
    let (h, summary) = records(&a.join("summary.csv"));
    assert_eq!(h, ["scenario", "method", "t", "reps", "kl", "rmspe_ratio", "coverage_90", "runtime_ms"]);
    assert_eq!(summary.len(), 3 * 4);
    let (h, rasd) = records(&a.join("rasd.csv"));
    assert_eq!(h, ["scenario", "method", "rep", "root_mean", "root_sum"]);
    assert!(!rasd.is_empty());

    let c = tmp.path().join("c");
    ok(&["compare", "--config", s(&cfg), "--out", s(&c), "--no-timing", "--reps", "1", "--seed", "5"]);
    let (_, one) = records(&c.join("scores.csv"));
    assert_eq!(one.len(), 3 * 4);
}

#[test]
fn particle_weights_and_history() {
    let tmp = TempDir::new().unwrap();
    let mut pc = presets::particle_pair();
    pc.model.steps = 5;
    let cfg = tmp.path().join("pair.json");
    write_json(&cfg, &pc).unwrap();
    let out = tmp.path().join("p");
    ok(&["particle", "--config", s(&cfg), "--out", s(&out)]);
    let (h, rows) = records(&out.join("particles.csv"));
    assert_eq!(h, ["t", "particle", "innovation_variance", "weight", "ess"]);
    assert_eq!(rows.len(), 2 * 6);
    let mut sums: BTreeMap<String, f64> = BTreeMap::new();
    for r in &rows {
        *sums.entry(r[0].clone()).or_default() += r[3].parse::<f64>().unwrap();
        assert!(r[2] == "0.5" || r[2] == "1.0" || r[2] == "1", "{r:?}");
    }
    assert!(sums.values().all(|w| (w - 1.0).abs() < 1e-12));
    assert!(out.join("truth.csv").exists() && out.join("observations.csv").exists());
}

#[test]
fn identity_basis_functions_are_indicators() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("basis.json");
    write_json(&cfg, &presets::basis_identity()).unwrap();
    let out = tmp.path().join("b");
    ok(&["export-basis", "--config", s(&cfg), "--out", s(&out)]);
    let (h, rows) = records(&out.join("basis.csv"));
    assert_eq!(&h[..2], ["index", "x"]);
    assert_eq!(h.len(), 2 + 80);
    assert!(h[2].starts_with("L0:"));
    assert_eq!(rows.len(), 80);
    for c in 2..h.len() {
        let vals: Vec<f64> = rows.iter().map(|r| r[c].parse().unwrap()).collect();
        assert_eq!(vals.iter().filter(|v| **v == 1.0).count(), 1, "{}", h[c]);
        assert_eq!(vals.iter().filter(|v| **v == 0.0).count(), 79, "{}", h[c]);
    }
    assert!(out.join("tree.json").exists());
}

#[test]
fn exported_patterns_are_nested() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("basis.json");
    let bc: BasisConfig = presets::basis_1d();
    write_json(&cfg, &bc).unwrap();
    let out = tmp.path().join("p");
    ok(&["export-pattern", "--config", s(&cfg), "--out", s(&out)]);
    let (h, rows) = records(&out.join("pattern.csv"));
    assert_eq!(h, ["matrix", "row", "col", "value"]);
    let mut per_row: BTreeMap<usize, usize> = BTreeMap::new();
    let mut btb = BTreeSet::new();
    let mut lower = Vec::new();
    for r in &rows {
        let (i, j): (usize, usize) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        match r[0].as_str() {
            "B" => *per_row.entry(i).or_default() += 1,
            "BtB" => {
                btb.insert((i, j));
            }
            "L" => lower.push((i, j)),
            _ => {}
        }
    }
    assert_eq!(per_row.len(), 80);
    assert!(per_row.values().all(|&k| k <= 8));
    assert!(lower.iter().all(|&(i, j)| i >= j && btb.contains(&(i, j))));
    for name in ["B", "BtB", "L", "Linv"] {
        let m = io::read_matrix_market(&out.join(format!("{name}.mtx"))).unwrap();
        assert_eq!((m.nrows(), m.ncols()), (80, 80));
    }
}

#[test]
fn errors_exit_with_status_two() {
    let out = mrf(&["filter", "--config", "/nonexistent.json", "--out", "/tmp/none"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}
