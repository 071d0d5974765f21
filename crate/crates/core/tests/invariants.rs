use proptest::prelude::*;

use wkam_core::geometry::cluster_partition;
use wkam_core::paths::{build_reparam, connect};
use wkam_core::weak_kam::{Grid, GridFunction, LaxOleinik, ReducedProblem, Semigroup};
use wkam_core::{Configuration, Lagrangian, ProblemSpec};

fn sorted_levels() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-0.49f64..0.49, 1..8).prop_map(|mut a| {
        a.sort_by(f64::total_cmp);
        a
    })
}

fn point_cloud() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=3).prop_flat_map(|d| prop::collection::vec(prop::collection::vec(-20.0f64..20.0, d), 2..9))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn reparam_is_increasing_and_hits_levels(kappa in 0.05f64..0.95, a in sorted_levels()) {
        let f = build_reparam(kappa, &a).unwrap();
        let mut prev = f.eval(0.0);
        for k in 1..=512 {
            let v = f.eval(k as f64 / 512.0);
            prop_assert!(v >= prev - 1e-12);
            prev = v;
        }
        for (ai, bi) in f.a.iter().zip(&f.b) {
            prop_assert!((f.eval(*bi) - ai).abs() <= 1e-9);
        }
        prop_assert!(f.energy() <= f.energy_bound());
    }

    #[test]
    fn cluster_partition_separates_and_covers(points in point_cloud(), lambda in 1.05f64..4.0, log_eps in -3.0f64..1.0) {
        let eps = 10f64.powf(log_eps);
        let p = cluster_partition(&points, lambda, eps).unwrap();
        prop_assert!(p.separation_holds());
        prop_assert!(p.covers(&points));
        prop_assert!(p.size >= eps);
    }

    #[test]
    fn potential_is_homogeneous(
        coords in prop::collection::vec(-3.0f64..3.0, 6),
        kappa in 0.1f64..0.9,
        lambda in 0.1f64..10.0,
    ) {
        let spec = ProblemSpec::new(2, vec![1.0, 2.0, 0.5], kappa).unwrap();
        let u = spec.potential(&coords);
        prop_assume!(u.is_finite() && u < 1e8);
        let scaled: Vec<f64> = coords.iter().map(|c| c * lambda).collect();
        let expected = lambda.powf(-2.0 * kappa) * u;
        prop_assert!((spec.potential(&scaled) - expected).abs() <= 1e-10 * expected);
    }

    #[test]
    fn connector_stays_in_its_certified_ball(
        coords in prop::collection::vec(-1.0f64..1.0, 12),
        kappa in 0.2f64..0.8,
        horizon in 0.1f64..10.0,
    ) {
        let spec = ProblemSpec::unit_masses(3, 2, kappa).unwrap();
        let x = Configuration::new(2, coords[..6].to_vec()).unwrap();
        let y = Configuration::new(2, coords[6..].to_vec()).unwrap();
        let radius = x.max_norm().max(y.max_norm()).max(1e-3);
        let (path, cert) = connect(&spec, &x, &y, horizon, &[0.0, 0.0], radius).unwrap();
        prop_assert!(cert.contained);
        prop_assert!(cert.satisfied);
        prop_assert!(path.nodes.iter().all(|c| c.max_norm() <= cert.containment_radius * (1.0 + 1e-12)));
    }
}

fn dyadic_values(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-(1i64 << 24)..(1i64 << 24), len)
        .prop_map(|v| v.into_iter().map(|k| k as f64 / (1u64 << 20) as f64).collect())
}

fn operator() -> &'static LaxOleinik {
    use std::sync::OnceLock;
    static OP: OnceLock<LaxOleinik> = OnceLock::new();
    OP.get_or_init(|| {
        let problem = ReducedProblem::collinear_two_body(1.0, 2.0, 0.5).unwrap();
        let grid = Grid::line(0.25, 8.25, 0.25).unwrap();
        LaxOleinik::new(&problem, &grid, 0.5, 16).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lax_oleinik_is_monotone_and_commutes_with_constants(
        base in dyadic_values(33),
        bump in dyadic_values(33),
        shift in -(1i64 << 26)..(1i64 << 26),
        forward in any::<bool>(),
    ) {
        let op = operator();
        let grid = op.grid();
        let sg = if forward { Semigroup::Forward } else { Semigroup::Backward };
        let u = GridFunction::new(grid.clone(), base.clone(), grid.center_node()).unwrap();
        let above: Vec<f64> = base.iter().zip(&bump).map(|(b, d)| b + d.abs()).collect();
        let v = GridFunction::new(grid.clone(), above, grid.center_node()).unwrap();
        let c = shift as f64 / (1u64 << 20) as f64;
        let tu = op.apply(&u, sg).unwrap();
        let tv = op.apply(&v, sg).unwrap();
        let tc = op.apply(&u.shifted(c), sg).unwrap();
        for i in 0..grid.len() {
            prop_assert!(tu.values[i] <= tv.values[i]);
            prop_assert_eq!(tc.values[i], tu.values[i] + c);
        }
        prop_assert!(tu.sup_distance(&tv, None) <= u.sup_distance(&v, None));
    }
}
