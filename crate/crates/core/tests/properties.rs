use std::sync::Arc;

use hdg_eig::assembly::assemble_condensed;
use hdg_eig::eigensolve::{solve_lowest_modes, NonlinearOptions};
use hdg_eig::localsolve::{MaterialSpec, SpaceCase, SpaceConfig, TauSpec};
use hdg_eig::mesh::{build_mesh, Domain, Mesh};
use hdg_eig::quadrature::{edge_quadrature, triangle_quadrature, MAX_QUADRATURE_ORDER};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

fn lowest(mesh: Mesh, spaces: SpaceConfig, tau: TauSpec, mat: MaterialSpec, m: usize) -> Vec<f64> {
    let sys = assemble_condensed(Arc::new(mesh), spaces, tau, mat).unwrap();
    let (_, pairs) = solve_lowest_modes(&sys, m, NonlinearOptions::default()).unwrap();
    pairs.iter().map(|p| p.lambda).collect()
}

/// `(order, a, b)` with `a + b <= order`.
fn monomial_within_order() -> impl Strategy<Value = (usize, u32, u32)> {
    (0..=MAX_QUADRATURE_ORDER)
        .prop_flat_map(|order| (Just(order), 0..=order as u32))
        .prop_flat_map(|(order, a)| (Just(order), Just(a), 0..=(order as u32 - a)))
}

proptest! {
    #[test]
    fn triangle_rule_integrates_monomials((order, a, b) in monomial_within_order()) {
        let rule = triangle_quadrature(order).unwrap();
        let got = rule.integrate(|x| x[0].powi(a as i32) * x[1].powi(b as i32));
        let exact = factorial(a) * factorial(b) / factorial(a + b + 2);
        prop_assert!((got - exact).abs() < 1e-13 * exact.max(1e-3), "{got} vs {exact}");
    }

    #[test]
    fn edge_rule_integrates_monomials((order, a, _) in monomial_within_order()) {
        let rule = edge_quadrature(order).unwrap();
        let got = rule.integrate(|x| x[0].powi(a as i32));
        prop_assert!((got - 1.0 / f64::from(a + 1)).abs() < 1e-14);
    }

    #[test]
    fn refined_meshes_are_consistent(lshape in any::<bool>(), level in 0usize..4) {
        let domain = if lshape { Domain::LShape } else { Domain::Square };
        let mesh = build_mesh(domain, level);
        prop_assert!((mesh.total_area() - domain.area()).abs() < 1e-12 * domain.area());
        // Euler characteristic of a simply connected triangulation
        let chi = mesh.vertices.len() as i64 - mesh.num_edges() as i64 + mesh.num_elements() as i64;
        prop_assert_eq!(chi, 1);
        prop_assert_eq!(3 * mesh.num_elements(), 2 * mesh.num_interior_edges() + mesh.num_boundary_edges());
        for el in 0..mesh.num_elements() {
            prop_assert!(mesh.geometry(el).det > 0.0);
        }
        let finer = mesh.refine();
        prop_assert_eq!(finer.num_elements(), 4 * mesh.num_elements());
        prop_assert!((finer.h - mesh.h / 2.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn eigenvalues_ignore_numbering(seed in any::<u64>(), k in 0usize..=2, lshape in any::<bool>()) {
        let domain = if lshape { Domain::LShape } else { Domain::Square };
        let mesh = build_mesh(domain, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vp: Vec<usize> = (0..mesh.vertices.len()).collect();
        let mut ep: Vec<usize> = (0..mesh.num_elements()).collect();
        vp.shuffle(&mut rng);
        ep.shuffle(&mut rng);
        let shuffled = mesh.permuted(&vp, &ep).unwrap();
        let spaces = SpaceConfig::equal(k).unwrap();
        let mat = MaterialSpec::identity();
        let a = lowest(mesh, spaces, TauSpec::Constant(1.0), mat, 4);
        let b = lowest(shuffled, spaces, TauSpec::Constant(1.0), mat, 4);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-10 * x, "{x} vs {y}");
        }
    }

    #[test]
    fn eigenvalues_scale_with_coefficients(s in 0.25f64..4.0, k in 0usize..=2, case1 in any::<bool>()) {
        let case = if case1 && k >= 1 { SpaceCase::Case1 } else { SpaceCase::Equal };
        let spaces = SpaceConfig::new(case, k).unwrap();
        let alpha = [[1.5, 0.25], [0.25, 0.75]];
        let base = lowest(build_mesh(Domain::Square, 0), spaces, TauSpec::Constant(1.0), MaterialSpec::new(alpha).unwrap(), 3);
        let scaled_alpha = alpha.map(|r| r.map(|v| v * s));
        let scaled = lowest(build_mesh(Domain::Square, 0), spaces, TauSpec::Constant(s), MaterialSpec::new(scaled_alpha).unwrap(), 3);
        for (x, y) in base.iter().zip(&scaled) {
            prop_assert!((s * x - y).abs() < 1e-10 * y, "{} vs {y}", s * x);
        }
    }
}
