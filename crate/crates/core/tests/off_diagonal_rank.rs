//! Blocks of `B B'` between sibling regions have rank at most the number of
//! knots shared by their chains.

use std::sync::Arc;

use mrf_core::covariance::{Covariance, Matern, Metric, Permuted};
use mrf_core::grid::Grid;
use mrf_core::mrd::mrd;
use mrf_core::partition::{build_partition, PartitionConfig};

fn numerical_rank(sv: &[f64]) -> usize {
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > 1e-10 * top).count()
}

fn check(grid: &Grid, config: &PartitionConfig, nu: f64) {
    let cov = Covariance::Kernel { kernel: Matern::new(nu, 0.3, 1.0).unwrap(), metric: Metric::Euclidean };
    let tree = Arc::new(build_partition(grid, config).unwrap());
    let o = cov.on(grid);
    let b = mrd(&Permuted { inner: &o, order: tree.order() }, &tree).unwrap();
    let s = b.outer_internal();
    let mut checked = 0;
    for m in 0..tree.levels() {
        for q in tree.level(m) {
            let shared: usize = tree.chain(q).iter().map(|&a| tree.region(a).knots.len()).sum();
            let kids: Vec<_> = tree.region(q).children.clone().map(|c| tree.region(c).range.clone()).collect();
            for (i, a) in kids.iter().enumerate() {
                for c in &kids[i + 1..] {
                    let blk = s.view((a.start, c.start), (a.len(), c.len())).clone_owned();
                    let sv: Vec<f64> = blk.singular_values().iter().cloned().collect();
                    let rank = numerical_rank(&sv);
                    assert!(rank <= shared, "level {m} split: rank {rank} > {shared}");
                    checked += 1;
                }
            }
        }
    }
    assert!(checked > 0);
}

#[test]
fn rank_grows_with_the_chain_on_a_square() {
    let g = Grid::regular_2d(8, 8).unwrap();
    check(&g, &PartitionConfig::uniform(4, 2, 2).unwrap(), 1.5);
    check(&g, &PartitionConfig::uniform(2, 4, 3).unwrap(), 0.5);
}

#[test]
fn rank_grows_with_the_chain_on_a_line() {
    let g = Grid::regular_1d(64).unwrap();
    check(&g, &PartitionConfig::uniform(4, 2, 2).unwrap(), 1.5);
    check(&g, &PartitionConfig::new(3, vec![3, 2, 2], vec![1, 2, 3, 4]).unwrap(), 1.5);
}

#[test]
fn markov_kernel_splits_need_only_local_knots() {
    // The exponential kernel on a line needs only the knots of the split region.
    let g = Grid::regular_1d(64).unwrap();
    let cov = Covariance::Kernel { kernel: Matern::new(0.5, 0.3, 1.0).unwrap(), metric: Metric::Euclidean };
    let tree = Arc::new(build_partition(&g, &PartitionConfig::uniform(4, 2, 2).unwrap()).unwrap());
    let o = cov.on(&g);
    let s = mrd(&Permuted { inner: &o, order: tree.order() }, &tree).unwrap().outer_internal();
    for m in 0..tree.levels() {
        for q in tree.level(m) {
            let kids: Vec<_> = tree.region(q).children.clone().map(|c| tree.region(c).range.clone()).collect();
            let (a, c) = (&kids[0], &kids[1]);
            let blk = s.view((a.start, c.start), (a.len(), c.len())).clone_owned();
            let sv: Vec<f64> = blk.singular_values().iter().cloned().collect();
            assert!(numerical_rank(&sv) <= 2, "level {m}");
        }
    }
}
