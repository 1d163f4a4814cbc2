//! Property tests: group axioms under random points, spectral invariance of
//! the clamped determinant, and envelope domination/ordering on random
//! fields.

use proptest::prelude::*;

use carnot_core::field::Grid;
use carnot_core::group::{GroupSpec, Point};
use carnot_core::linalg::{det_plus, SymMat};
use carnot_core::viscosity::{inf_convolution, sup_convolution, SpaceTimeField};

fn group_strategy() -> impl Strategy<Value = GroupSpec> {
    prop_oneof![
        Just(GroupSpec::euclidean(2).unwrap()),
        Just(GroupSpec::euclidean(3).unwrap()),
        Just(GroupSpec::heisenberg(1).unwrap()),
        Just(GroupSpec::heisenberg(2).unwrap()),
        Just(GroupSpec::quaternionic()),
    ]
}

fn point_strategy(spec: &GroupSpec) -> impl Strategy<Value = Point> {
    let dim = spec.dim();
    let v_dim = spec.v_dim();
    prop::collection::vec(-2.0f64..2.0, dim)
        .prop_map(move |c| Point::from_coords(v_dim, &c))
}

fn group_and_points(n: usize) -> impl Strategy<Value = (GroupSpec, Vec<Point>)> {
    group_strategy().prop_flat_map(move |spec| {
        let pts = prop::collection::vec(point_strategy(&spec), n);
        (Just(spec), pts)
    })
}

fn max_coord_diff(a: &Point, b: &Point) -> f64 {
    a.coords()
        .iter()
        .zip(b.coords())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn products_are_associative((spec, pts) in group_and_points(3)) {
        let (p, q, r) = (&pts[0], &pts[1], &pts[2]);
        let left = spec.product(&spec.product(p, q).unwrap(), r).unwrap();
        let right = spec.product(p, &spec.product(q, r).unwrap()).unwrap();
        prop_assert!(max_coord_diff(&left, &right) < 1e-12);
    }

    #[test]
    fn inverses_and_identity_behave((spec, pts) in group_and_points(1)) {
        let p = &pts[0];
        let e = spec.identity();
        let inv = spec.inverse(p).unwrap();
        prop_assert!(max_coord_diff(&spec.product(p, &inv).unwrap(), &e) < 1e-12);
        prop_assert!(max_coord_diff(&spec.product(&inv, p).unwrap(), &e) < 1e-12);
        prop_assert!(max_coord_diff(&spec.product(&e, p).unwrap(), p) < 1e-15);
        prop_assert!(max_coord_diff(&spec.product(p, &e).unwrap(), p) < 1e-15);
    }

    #[test]
    fn dilations_are_homomorphisms_and_scale_the_gauge(
        (spec, pts) in group_and_points(2),
        s in 0.0f64..3.0,
    ) {
        let (p, q) = (&pts[0], &pts[1]);
        let a = spec.dilate(s, &spec.product(p, q).unwrap()).unwrap();
        let b = spec
            .product(&spec.dilate(s, p).unwrap(), &spec.dilate(s, q).unwrap())
            .unwrap();
        prop_assert!(max_coord_diff(&a, &b) < 1e-10);

        let scaled = spec.gauge_norm(&spec.dilate(s, p).unwrap()).unwrap();
        let direct = s * spec.gauge_norm(p).unwrap();
        prop_assert!((scaled - direct).abs() < 1e-10 * (1.0 + direct));
    }

    #[test]
    fn clamped_determinant_is_a_spectral_function(
        entries in prop::collection::vec(-3.0f64..3.0, 6),
        angles in prop::collection::vec(0.0f64..std::f64::consts::TAU, 3),
    ) {
        let m = SymMat::from_packed(3, entries).unwrap();
        // conjugate by a product of Givens rotations
        let mut r = vec![0.0f64; 9];
        for i in 0..3 {
            r[i * 3 + i] = 1.0;
        }
        for (k, &th) in angles.iter().enumerate() {
            let (i, j) = [(0, 1), (0, 2), (1, 2)][k];
            let (c, s) = (th.cos(), th.sin());
            for col in 0..3 {
                let (a, b) = (r[i * 3 + col], r[j * 3 + col]);
                r[i * 3 + col] = c * a - s * b;
                r[j * 3 + col] = s * a + c * b;
            }
        }
        let conj = SymMat::from_fn(3, |a, b| {
            let mut sum = 0.0;
            for x in 0..3 {
                for y in 0..3 {
                    sum += r[a * 3 + x] * m.get(x, y) * r[b * 3 + y];
                }
            }
            sum
        });
        let d0 = det_plus(&m);
        let d1 = det_plus(&conj);
        let scale = 1.0 + d0.abs().max(d1.abs());
        prop_assert!((d0 - d1).abs() < 1e-8 * scale, "{d0} vs {d1}");
        prop_assert!(d0 >= 0.0);

        // a positive shift never lowers the clamped determinant
        let shifted = SymMat::from_fn(3, |a, b| m.get(a, b) + if a == b { 0.75 } else { 0.0 });
        prop_assert!(det_plus(&shifted) >= d0 - 1e-12 * scale);
    }

    #[test]
    fn eigendecomposition_reconstructs_random_matrices(
        entries in prop::collection::vec(-5.0f64..5.0, 10),
    ) {
        let m = SymMat::from_packed(4, entries).unwrap();
        let (vals, vecs) = m.eigen();
        let mut worst: f64 = 0.0;
        for a in 0..4 {
            for b in 0..4 {
                let mut sum = 0.0;
                for k in 0..4 {
                    sum += vecs[a + 4 * k] * vals[k] * vecs[b + 4 * k];
                }
                worst = worst.max((sum - m.get(a, b)).abs());
            }
        }
        prop_assert!(worst < 1e-9 * (1.0 + m.frobenius_norm()), "defect {worst}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn envelopes_dominate_on_random_fields(
        w in prop::collection::vec(-1.5f64..1.5, 6),
        eps_lo in 0.01f64..0.2,
        ratio in 1.5f64..8.0,
    ) {
        let spec = GroupSpec::heisenberg(1).unwrap();
        let grid = Grid::centered_box(&spec, 1.0, 4).unwrap();
        let field = SpaceTimeField::from_fn(grid, vec![0.0, 0.1, 0.2], |x, t| {
            (w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3] * t).sin()
                + w[4] * x[0] * x[1]
                + w[5] * t
        })
        .unwrap();
        let eps_hi = ratio * eps_lo;
        let up_lo = sup_convolution(&spec, &field, eps_lo).unwrap();
        let up_hi = sup_convolution(&spec, &field, eps_hi).unwrap();
        let dn_lo = inf_convolution(&spec, &field, eps_lo).unwrap();
        let dn_hi = inf_convolution(&spec, &field, eps_hi).unwrap();
        for ti in 0..field.times().len() {
            for node in 0..field.grid().node_count() {
                let v = field.value(node, ti);
                prop_assert!(up_lo.value(node, ti) >= v);
                prop_assert!(up_hi.value(node, ti) >= up_lo.value(node, ti));
                prop_assert!(dn_lo.value(node, ti) <= v);
                prop_assert!(dn_hi.value(node, ti) <= dn_lo.value(node, ti));
            }
        }
    }
}
