use gscreen_core::geometry::{
    check_incentive_compatible, check_individually_rational, interpolate_allocation,
    menu_from_utility, profit_functional, solve_g_segment, utility_from_menu, AgentGrid, Menu,
    DEFAULT_STEPS,
};
use gscreen_core::model::{builtin, invert_price, Contract, ModelSpec, BUILTIN_NAMES};
use proptest::prelude::*;

fn model() -> impl Strategy<Value = &'static str> {
    prop::sample::select(BUILTIN_NAMES.to_vec())
}

/// Menu on products away from the outside product, prices as fractions of
/// the price range.
fn menu_parts() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.01f64..1.0, 0.0f64..1.0), 1..6)
}

fn build_menu(spec: &ModelSpec, parts: &[(f64, f64)]) -> Menu {
    let (lo, hi) = spec.domains().z;
    Menu::new(
        spec,
        parts.iter().map(|p| vec![p.0]).collect(),
        parts.iter().map(|p| lo + p.1 * (hi - lo)).collect(),
    )
    .unwrap()
}

/// Interior contract with room for the segment's curvature.
fn contract(spec: &ModelSpec, a: f64, b: f64) -> Contract {
    let zhi = spec.domains().z.1;
    Contract::new(vec![0.15 + 0.8 * a], zhi * (0.05 + 0.9 * b))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn price_inversion_roundtrips(
        name in model(),
        x in 1e-6f64..1.0,
        y in 1e-6f64..1.0,
        s in 1e-6f64..0.999_999,
    ) {
        let spec = builtin(name).unwrap();
        let z = s * spec.domains().z.1;
        let u = spec.utility(&[x], &Contract::new(vec![y], z)).unwrap();
        let back = invert_price(&spec, &[x], &[y], u).unwrap();
        prop_assert!((back - z).abs() < 1e-10, "{name}: {back} vs {z}");
    }

    #[test]
    fn price_is_strictly_decreasing_in_utility(
        name in model(),
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
    ) {
        let spec = builtin(name).unwrap();
        let zhi = spec.domains().z.1;
        let lo = spec.utility(&[x], &Contract::new(vec![y], zhi)).unwrap();
        let hi = spec.utility(&[x], &Contract::new(vec![y], 0.0)).unwrap();
        let levels: Vec<f64> = (1..=50).map(|k| lo + (hi - lo) * k as f64 / 51.0).collect();
        let prices: Vec<f64> = levels
            .iter()
            .map(|&u| invert_price(&spec, &[x], &[y], u).unwrap())
            .collect();
        prop_assert!(prices.windows(2).all(|w| w[1] < w[0]), "{prices:?}");
    }

    #[test]
    fn segments_are_exact_and_affine(
        name in model(),
        x0 in 0.0f64..1.0,
        a in (0.0f64..1.0, 0.0f64..1.0),
        b in (0.0f64..1.0, 0.0f64..1.0),
    ) {
        let spec = builtin(name).unwrap();
        let (from, to) = (contract(&spec, a.0, a.1), contract(&spec, b.0, b.1));
        let seg = solve_g_segment(&spec, &[x0], &from, &to, DEFAULT_STEPS).unwrap();
        prop_assert_eq!(seg.samples.len(), DEFAULT_STEPS + 1);
        prop_assert_eq!(seg.samples[0].contract(), from);
        prop_assert_eq!(seg.samples[DEFAULT_STEPS].contract(), to);
        prop_assert!(seg.samples.iter().all(|s| s.residual < 1e-8));
        prop_assert!(seg.chord_deviation(&spec).unwrap() < 1e-8);
    }

    #[test]
    fn menu_allocations_are_incentive_compatible(name in model(), parts in menu_parts()) {
        let spec = builtin(name).unwrap();
        let agents = AgentGrid::tensor(&spec, &[9]).unwrap();
        let u = utility_from_menu(&spec, &build_menu(&spec, &parts), &agents).unwrap();
        let ic = check_incentive_compatible(&spec, &u).unwrap();
        prop_assert!(ic.ok, "{ic:?}");
        prop_assert!(check_individually_rational(&spec, &u).unwrap().ok);
    }

    #[test]
    fn convex_combinations_stay_menu_generated(
        name in model(),
        p0 in menu_parts(),
        p1 in menu_parts(),
        t in prop::sample::select(vec![0.25, 0.5, 0.75]),
    ) {
        let spec = builtin(name).unwrap();
        let agents = AgentGrid::tensor(&spec, &[9]).unwrap();
        let u0 = utility_from_menu(&spec, &build_menu(&spec, &p0), &agents).unwrap();
        let u1 = utility_from_menu(&spec, &build_menu(&spec, &p1), &agents).unwrap();
        let ut = interpolate_allocation(&spec, &u0, &u1, t).unwrap();
        for k in 0..agents.len() {
            let want = (1.0 - t) * u0.values[k] + t * u1.values[k];
            prop_assert!((ut.values[k] - want).abs() < 1e-9);
        }
        let products: Vec<Vec<f64>> =
            ut.assignment.as_ref().unwrap().iter().map(|c| c.y.clone()).collect();
        let menu = menu_from_utility(&spec, &ut, &products).unwrap();
        let back = utility_from_menu(&spec, &menu, &agents).unwrap();
        for k in 0..agents.len() {
            prop_assert!(
                (back.values[k] - ut.values[k]).abs() < 1e-9,
                "{name} agent {k}: {} vs {}", back.values[k], ut.values[k]
            );
        }
    }

    #[test]
    fn profit_is_concave_along_segments_on_quasilinear(
        p0 in menu_parts(),
        p1 in menu_parts(),
        t in prop::sample::select(vec![0.25, 0.5, 0.75]),
    ) {
        let spec = builtin("quasilinear").unwrap();
        let agents = AgentGrid::tensor(&spec, &[9]).unwrap();
        let u0 = utility_from_menu(&spec, &build_menu(&spec, &p0), &agents).unwrap();
        let u1 = utility_from_menu(&spec, &build_menu(&spec, &p1), &agents).unwrap();
        let ut = interpolate_allocation(&spec, &u0, &u1, t).unwrap();
        let (a, b, c) = (
            profit_functional(&spec, &u0).unwrap(),
            profit_functional(&spec, &u1).unwrap(),
            profit_functional(&spec, &ut).unwrap(),
        );
        prop_assert!(c >= (1.0 - t) * a + t * b - 1e-6, "{c} < {}", (1.0 - t) * a + t * b);
    }
}
