//! Structural invariants of the partition, the decomposition and the sparse
//! algebra on random trees and kernels.

use std::sync::Arc;

use mrf_core::covariance::{materialize, Covariance, Matern, Metric, Permuted};
use mrf_core::factor::{cholesky_and_invert, inner_product_matrix, out_of_pattern_max, MultiResFactor};
use mrf_core::filter::FilterMoments;
use mrf_core::grid::Grid;
use mrf_core::metrics::{kl_dense, kl_factor, ExactReference};
use mrf_core::mrd::mrd;
use mrf_core::particle::systematic_resample;
use mrf_core::partition::{build_partition, PartitionConfig, PartitionTree};
use mrf_core::ssm::{Observation, ObservationBlocks};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    dim: usize,
    side: usize,
    levels: usize,
    children: usize,
    knots: usize,
    nu: f64,
    range: f64,
}

fn cases() -> impl Strategy<Value = Case> {
    (1usize..=2, 0usize..=3, 1usize..=3, 2usize..=4, 1usize..=4, prop::bool::ANY, 0.05f64..0.5).prop_map(
        |(dim, extra, levels, children, knots, smooth, range)| Case {
            dim,
            side: if dim == 1 { 40 + 10 * extra } else { 6 + extra },
            levels,
            children,
            knots,
            nu: if smooth { 1.5 } else { 0.5 },
            range,
        },
    )
}

struct Built {
    tree: Arc<PartitionTree>,
    sigma: DMatrix<f64>,
    b: MultiResFactor,
}

fn build(c: &Case) -> Option<Built> {
    let grid = if c.dim == 1 { Grid::regular_1d(c.side) } else { Grid::regular_2d(c.side, c.side) }.ok()?;
    let cfg = PartitionConfig::uniform(c.levels, c.children, c.knots).ok()?;
    let tree = Arc::new(build_partition(&grid, &cfg).ok()?);
    let cov = Covariance::Kernel { kernel: Matern::new(c.nu, c.range, 1.0).ok()?, metric: Metric::Euclidean };
    let oracle = cov.on(&grid);
    let p = Permuted { inner: &oracle, order: tree.order() };
    let sigma = materialize(&p);
    let b = mrd(&p, &tree).ok()?;
    Some(Built { tree, sigma, b })
}

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    move || {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_covers_and_nests(c in cases()) {
        let Some(Built { tree, .. }) = build(&c) else { return Ok(()) };
        let n = tree.n();
        let mut seen = vec![0usize; n];
        for &i in tree.order() {
            seen[i] += 1;
        }
        prop_assert!(seen.iter().all(|&s| s == 1));
        let mut covered = vec![0usize; n];
        let mut knotted = vec![0usize; n];
        for (q, r) in tree.regions().iter().enumerate() {
            if r.is_finest() {
                for k in r.range.clone() {
                    covered[k] += 1;
                }
            } else {
                let kids: Vec<_> = r.children.clone().map(|ch| tree.region(ch).range.clone()).collect();
                prop_assert_eq!(kids.first().unwrap().start, r.range.start);
                prop_assert_eq!(kids.last().unwrap().end, r.range.end);
                prop_assert!(kids.windows(2).all(|w| w[0].end == w[1].start));
            }
            for &k in &r.knots {
                prop_assert!(r.range.contains(&k));
                knotted[k] += 1;
                prop_assert_eq!(tree.knot_region(k), q);
            }
            prop_assert_eq!(r.columns.len(), r.knots.len());
        }
        prop_assert!(covered.iter().all(|&s| s == 1));
        prop_assert!(knotted.iter().all(|&s| s == 1));
    }

    #[test]
    fn decomposition_is_exact_within_finest_regions(c in cases()) {
        let Some(Built { tree, sigma, b }) = build(&c) else { return Ok(()) };
        let s = b.outer_internal();
        for f in tree.finest_regions() {
            let r = tree.region(f).range.clone();
            for i in r.clone() {
                for j in r.clone() {
                    prop_assert!((s[(i, j)] - sigma[(i, j)]).abs() < 1e-9);
                }
            }
        }
        let dense = b.to_dense();
        prop_assert_eq!(out_of_pattern_max(&tree, &dense), 0.0);
        for k in 0..tree.n() {
            let budget: usize = tree.chain(tree.finest_of(k)).iter().map(|&q| tree.region(q).knots.len()).sum();
            prop_assert!(b.row_nnz(k) <= budget);
        }
    }

    #[test]
    fn triangular_solve_and_determinant(c in cases(), seed in any::<u64>()) {
        let Some(Built { b, .. }) = build(&c) else { return Ok(()) };
        let n = b.n();
        let mut u = lcg(seed);
        let rhs = DMatrix::from_fn(n, 3, |_, _| u());
        let x = b.solve_matrix(&rhs).unwrap();
        let resid = (b.to_dense() * &x - &rhs).amax();
        prop_assert!(resid < 1e-8 * (1.0 + x.amax()), "residual {resid:e}");
        let det = b.to_dense().lu().determinant().abs().ln();
        prop_assert!((b.log_abs_det() - det).abs() < 1e-7 * (1.0 + det.abs()));
    }

    #[test]
    fn block_cholesky_matches_dense(c in cases(), seed in any::<u64>(), noise in 0.01f64..2.0) {
        let Some(Built { tree, b, .. }) = build(&c) else { return Ok(()) };
        let n = tree.n();
        let mut u = lcg(seed);
        let picks: Vec<usize> = (0..n).filter(|_| u() < 0.0).collect();
        let obs = ObservationBlocks::new(&Observation::direct(n, &picks, noise).unwrap(), &tree).unwrap();
        let bd = b.to_dense();
        let mut lambda = DMatrix::identity(n, n);
        for &p in &picks {
            let row = bd.row(tree.position()[p]);
            lambda += row.transpose() * row / noise;
        }
        let m = inner_product_matrix(&b, &obs);
        prop_assert!((m.to_dense_symmetric() - &lambda).amax() < 1e-9 * lambda.amax());
        let chol = cholesky_and_invert(&m).unwrap();
        let l = chol.factor.to_dense_lower();
        let linv = chol.inverse.to_dense_lower();
        prop_assert!((&l * l.transpose() - &lambda).amax() < 1e-9 * lambda.amax());
        prop_assert!((&linv * &l - DMatrix::identity(n, n)).amax() < 1e-8);
        let det: f64 = (0..n).map(|i| l[(i, i)].ln()).sum();
        prop_assert!((chol.log_det - det).abs() < 1e-9 * (1.0 + det.abs()));
    }

    #[test]
    fn divergence_is_nonnegative_and_routes_agree(c in cases(), seed in any::<u64>()) {
        let Some(Built { tree, sigma, b }) = build(&c) else { return Ok(()) };
        let n = tree.n();
        prop_assume!(n <= 100);
        let mut u = lcg(seed);
        let mean = DVector::from_fn(n, |_, _| u());
        let cov = tree_to_original(&tree, &sigma);
        let reference = ExactReference::new(&mean, &cov).unwrap();
        let moments = FilterMoments { t: 0, mean: (0..n).map(|_| u()).collect(), factor: b };
        let by_factor = kl_factor(&reference, &moments).unwrap();
        let approx_mean = DVector::from_vec(moments.mean_original());
        let by_dense = kl_dense(&reference, &approx_mean, &moments.covariance_original()).unwrap();
        prop_assert!(by_factor >= -1e-9);
        prop_assert!((by_factor - by_dense).abs() < 1e-6 * (1.0 + by_dense.abs()));
        prop_assert!(kl_dense(&reference, &mean, &cov).unwrap().abs() < 1e-8);
    }

    #[test]
    fn systematic_resampling_matches_counting(w in prop::collection::vec(0.0f64..1.0, 1..40), u0 in 0.0f64..1.0) {
        prop_assume!(w.iter().sum::<f64>() > 1e-3);
        let total: f64 = w.iter().sum();
        let n = w.len();
        // Particle i receives every point (u0 + k) / n falling in its slice
        // of the cumulative weights.
        let mut expected = Vec::new();
        for k in 0..n {
            let u = (u0 + k as f64) / n as f64;
            let mut cum = 0.0;
            let mut pick = n - 1;
            for (i, wi) in w.iter().enumerate() {
                cum += wi / total;
                if u < cum {
                    pick = i;
                    break;
                }
            }
            expected.push(pick);
        }
        let got = systematic_resample(&w, u0);
        let mismatches = got.iter().zip(&expected).filter(|(a, b)| a != b).count();
        // Rounding can only move a point sitting on a slice boundary.
        prop_assert!(mismatches <= 1, "{got:?} vs {expected:?}");
        prop_assert!(got.windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(got.iter().all(|&i| w[i] > 0.0));
    }
}

fn tree_to_original(tree: &PartitionTree, internal: &DMatrix<f64>) -> DMatrix<f64> {
    let pos = tree.position();
    DMatrix::from_fn(tree.n(), tree.n(), |i, j| internal[(pos[i], pos[j])])
}
