//! Structural properties shared by the property tests and the acceptance
//! suite. Each takes a seed plus small shape parameters.

#![allow(dead_code)]

use hdwalk::cli::presets;
use hdwalk::cli::run::walk_replicas;
use hdwalk::expansion;
use hdwalk::fractal;
use hdwalk::groups::{self, aku_compose, aku_decompose};
use hdwalk::lattice::{self, LatticePoint, Norm, WalkObservables};
use hdwalk::linalg::{self, adjoint_matrix, wedge_power, Mat, Representation};
use hdwalk::markov::{replica_rng, ChainSpec};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub const CASES: u32 = 128;

type R = Result<(), TestCaseError>;

fn max_diff(a: &Mat, b: &Mat) -> f64 {
    (a - b).amax()
}

fn rel_close(a: &Mat, b: &Mat, rel: f64) -> bool {
    max_diff(a, b) <= rel * (1.0 + a.amax().max(b.amax()))
}

/// `Λ^k(AB) = Λ^k(A) Λ^k(B)`.
pub fn cauchy_binet(seed: u64, d: usize, k: usize) -> R {
    let mut rng = replica_rng(seed, 0);
    let a = linalg::random_sl(d, &mut rng);
    let b = linalg::random_sl(d, &mut rng);
    let lhs = wedge_power(&(&a * &b), k).unwrap().entries;
    let rhs = wedge_power(&a, k).unwrap().entries * wedge_power(&b, k).unwrap().entries;
    prop_assert!(rel_close(&lhs, &rhs, 1e-9), "d={d} k={k} diff {}", max_diff(&lhs, &rhs));
    Ok(())
}

/// `Ad(gh) = Ad(g) Ad(h)` and `Ad(g⁻¹) = Ad(g)⁻¹`.
pub fn adjoint_homomorphism(seed: u64, d: usize) -> R {
    let mut rng = replica_rng(seed, 0);
    let g = linalg::random_sl(d, &mut rng);
    let h = linalg::random_sl(d, &mut rng);
    let lhs = adjoint_matrix(&(&g * &h)).unwrap();
    let rhs = adjoint_matrix(&g).unwrap() * adjoint_matrix(&h).unwrap();
    prop_assert!(rel_close(&lhs, &rhs, 1e-9), "product diff {}", max_diff(&lhs, &rhs));
    let inv = adjoint_matrix(&linalg::invert(&g).unwrap()).unwrap() * adjoint_matrix(&g).unwrap();
    let id = Mat::identity(inv.nrows(), inv.ncols());
    prop_assert!(rel_close(&inv, &id, 1e-8), "inverse diff {}", max_diff(&inv, &id));
    Ok(())
}

/// `decompose ∘ compose = id` on `P`, and the closed-form product and
/// inverse agree with matrix arithmetic.
pub fn aku_roundtrip(seed: u64, m: usize, n: usize) -> R {
    let mut rng = replica_rng(seed, 0);
    let p = groups::random_p_element(m, n, 3.0, &mut rng);
    let q = groups::random_p_element(m, n, 3.0, &mut rng);
    let g = aku_compose(&p);
    let back = aku_decompose(&g, m, n).unwrap();
    prop_assert!((back.t - p.t).abs() < 1e-9);
    prop_assert!(max_diff(&back.o1, &p.o1) < 1e-9 && max_diff(&back.o2, &p.o2) < 1e-9);
    prop_assert!(max_diff(&back.alpha, &p.alpha) < 1e-8, "alpha diff {}", max_diff(&back.alpha, &p.alpha));
    let prod = aku_compose(&p.mul(&q));
    prop_assert!(rel_close(&prod, &(&g * aku_compose(&q)), 1e-9));
    let inv = aku_compose(&p.inverse()) * &g;
    prop_assert!(rel_close(&inv, &Mat::identity(m + n, m + n), 1e-8));
    Ok(())
}

/// Lattice functions depend only on the coset `g SL_d(Z)`.
pub fn coset_invariance(seed: u64, d: usize) -> R {
    let mut rng = replica_rng(seed, 0);
    let g = linalg::random_sl(d, &mut rng);
    let x = LatticePoint::new(g.clone()).unwrap();
    let gamma = lattice::random_unimodular(d, 6, &mut rng);
    let y = LatticePoint::new(&g * &gamma).unwrap();
    prop_assert!(lattice::lattice_equal(&x, &y, 1e-6).unwrap());
    for norm in [Norm::Sup, Norm::Euclidean] {
        let a = lattice::shortest_vector(&x, norm).unwrap().length;
        let b = lattice::shortest_vector(&y, norm).unwrap().length;
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a), "{norm:?}: {a} vs {b}");
    }
    let radii = [0.8, 1.3];
    prop_assert_eq!(lattice::siegel_counts(&x, &radii).unwrap(), lattice::siegel_counts(&y, &radii).unwrap());
    let h = linalg::random_sl(d, &mut rng);
    prop_assert!(lattice::lattice_equal(&x.act(&h), &y.act(&h), 1e-6).unwrap());
    Ok(())
}

fn walk_chain(which: bool) -> ChainSpec {
    if which {
        presets::block_two_state()
    } else {
        presets::sl3_chain()
    }
}

/// Merging replicas `0..a` with `a..b` equals running `0..b` at once.
pub fn merge_consistency(seed: u64, a: u64, b: u64, which: bool) -> R {
    let chain = walk_chain(which);
    let x0 = LatticePoint::standard(chain.dim());
    let obs = WalkObservables { batch_len: 16, ..Default::default() };
    let (whole, _) = walk_replicas(&chain, &x0, 200, &obs, seed, 0..b).unwrap();
    let (mut left, _) = walk_replicas(&chain, &x0, 200, &obs, seed, 0..a).unwrap();
    let (right, _) = walk_replicas(&chain, &x0, 200, &obs, seed, a..b).unwrap();
    left.merge(&right).unwrap();
    prop_assert_eq!(left, whole);
    Ok(())
}

/// Same seed, same bits.
pub fn determinism(seed: u64, which: bool) -> R {
    let chain = walk_chain(which);
    let x0 = LatticePoint::standard(chain.dim());
    let obs = WalkObservables { trace_every: 10, ..Default::default() };
    let once = lattice::run_walk(&chain, &x0, 150, &obs, &mut replica_rng(seed, 3)).unwrap();
    let twice = lattice::run_walk(&chain, &x0, 150, &obs, &mut replica_rng(seed, 3)).unwrap();
    prop_assert_eq!(once, twice);
    let s1 = expansion::lyapunov_spectrum(&chain, Representation::Standard, 100, 2, seed).unwrap();
    let s2 = expansion::lyapunov_spectrum(&chain, Representation::Standard, 100, 2, seed).unwrap();
    prop_assert_eq!(
        serde_json::to_string(&s1).unwrap(),
        serde_json::to_string(&s2).unwrap()
    );
    let cantor = fractal::cantor_middle_thirds();
    let c1 = fractal::wang_cf_digits(&cantor, 2, 5, seed).unwrap();
    let c2 = fractal::wang_cf_digits(&cantor, 2, 5, seed).unwrap();
    prop_assert_eq!(c1, c2);
    Ok(())
}
