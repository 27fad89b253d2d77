mod common;

use std::f64::consts::FRAC_PI_2;

use common::*;
use egg_core::gnn::{pool_matrix, PoolKind};
use egg_core::grassmann::{
    flatten_sym, geodesic_distance, principal_angles, project, rectify, unflatten_sym, GrassmannPoint,
};
use egg_core::svd::svd_full;
use egg_core::{Matrix, RankPolicy, RectifyMode};
use proptest::prelude::*;
use rand::Rng;

fn point(basis: Matrix) -> GrassmannPoint {
    let k = basis.cols();
    GrassmannPoint::from_basis(basis, vec![1.0; k]).unwrap()
}

#[test]
fn egg_pooling_ignores_node_order() {
    let mut rng = rng(21);
    let policies = [
        RankPolicy::EnergyThreshold(0.8),
        RankPolicy::FixedRatio(0.5),
        RankPolicy::FixedCount(2),
        RankPolicy::PerValueThreshold(0.3),
    ];
    let mut worst = 0.0_f64;
    for case in 0..50 {
        let n = rng.random_range(3..=30);
        let m = rng.random_range(2..=8);
        let h = gaussian(n, m, &mut rng);
        let perm = permutation(n, &mut rng);
        let shuffled = h.select_rows(&perm);
        let kind = PoolKind::Egg { policy: policies[case % policies.len()] };
        let a = pool_matrix(kind, &h).unwrap();
        let b = pool_matrix(kind, &shuffled).unwrap();
        assert_eq!(a.len(), m * (m + 1) / 2);
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max((x - y).abs());
        }
    }
    assert!(worst < 1e-8, "worst deviation {worst}");
}

#[test]
fn egg_output_length_depends_only_on_width() {
    let mut rng = rng(22);
    let kind = PoolKind::Egg { policy: RankPolicy::EnergyThreshold(0.8) };
    for m in [1, 3, 7] {
        for n in [1, 2, 9, 40] {
            let out = pool_matrix(kind, &gaussian(n, m, &mut rng)).unwrap();
            assert_eq!(out.len(), m * (m + 1) / 2);
        }
    }
}

#[test]
fn projector_is_idempotent_symmetric_with_trace_p() {
    let mut rng = rng(23);
    for _ in 0..30 {
        let n = rng.random_range(2..=10);
        let m = rng.random_range(2..=10);
        let pt = rectify(&gaussian(n, m, &mut rng), RectifyMode::NodeLevel, RankPolicy::EnergyThreshold(0.7)).unwrap();
        let p = project(&pt);
        assert!(p.is_symmetric(1e-12));
        assert!(p.matmul(&p).unwrap().sub(&p).unwrap().max_abs() < 1e-10);
        assert!((p.trace() - pt.rank() as f64).abs() < 1e-10);
        assert_eq!(unflatten_sym(&flatten_sym(&p).unwrap()).unwrap(), p);
    }
}

#[test]
fn principal_angles_match_cross_singular_values() {
    let mut rng = rng(24);
    for _ in 0..50 {
        let n = rng.random_range(3..=12);
        let pa = rng.random_range(1..=n);
        let pb = rng.random_range(1..=n);
        let a = orthonormal(n, pa, &mut rng);
        let b = orthonormal(n, pb, &mut rng);
        let cross = to_na(&a.matmul_tn(&b).unwrap());
        let mut cos: Vec<f64> = cross.singular_values().iter().copied().collect();
        cos.sort_by(|x, y| y.total_cmp(x));
        let angles = principal_angles(&point(a), &point(b)).unwrap().angles;
        assert_eq!(angles.len(), pa.min(pb));
        for (t, c) in angles.iter().zip(&cos) {
            assert!((t.cos() - c.clamp(0.0, 1.0)).abs() < 1e-10, "{angles:?} vs {cos:?}");
        }
        assert!(angles.windows(2).all(|w| w[0] <= w[1] + 1e-12));
    }
}

#[test]
fn distance_to_self_is_zero_and_orthogonal_subspaces_are_maximal() {
    let mut rng = rng(25);
    for _ in 0..20 {
        let p = rng.random_range(1..=4);
        let n = 2 * p + rng.random_range(0..3);
        let q = orthonormal(n, 2 * p, &mut rng);
        let a = point(q.leading_columns(p));
        let b = point(Matrix::from_fn(n, p, |i, j| q[(i, p + j)]));
        assert!(geodesic_distance(&a, &a).unwrap() < 1e-10);
        let d = geodesic_distance(&a, &b).unwrap();
        assert!((d - (p as f64).sqrt() * FRAC_PI_2).abs() < 1e-10);
    }
}

#[test]
fn rectified_basis_spans_leading_singular_directions() {
    let mut rng = rng(26);
    for _ in 0..20 {
        let h = gaussian(15, 6, &mut rng);
        let pt = rectify(&h, RectifyMode::GraphLevel, RankPolicy::FixedCount(3)).unwrap();
        let oracle = svd_full(&h.transpose()).unwrap().u.leading_columns(3);
        let d = geodesic_distance(&pt, &point(oracle)).unwrap();
        assert!(d < 1e-8);
        assert_eq!(pt.ambient_dim(), 6);
    }
}

proptest! {
    #[test]
    fn geodesic_distance_is_symmetric_and_bounded(seed in 0u64..1000, n in 2usize..9) {
        let mut rng = rng(seed);
        let p = rng.random_range(1..=n);
        let a = point(orthonormal(n, p, &mut rng));
        let b = point(orthonormal(n, p, &mut rng));
        let ab = geodesic_distance(&a, &b).unwrap();
        let ba = geodesic_distance(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-10);
        prop_assert!(ab >= 0.0 && ab <= (p as f64).sqrt() * FRAC_PI_2 + 1e-10);
    }

    #[test]
    fn projector_is_basis_invariant(seed in 0u64..1000, n in 2usize..9) {
        let mut rng = rng(seed);
        let p = rng.random_range(1..=n);
        let u = orthonormal(n, p, &mut rng);
        let r = orthonormal(p, p, &mut rng);
        let rotated = u.matmul(&r).unwrap();
        let diff = project(&point(u)).sub(&project(&point(rotated))).unwrap().max_abs();
        prop_assert!(diff < 1e-12);
    }
}
