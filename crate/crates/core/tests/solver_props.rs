use gscreen_core::geometry::{check_incentive_compatible, utility_from_menu, AgentGrid, Menu};
use gscreen_core::model::builtin;
use gscreen_core::oracle::{enumerate_menus, uniform_prices, uniform_products};
use gscreen_core::solver::{solve_principal, verify_solution, DiscreteInstance, SolverOptions};
use proptest::prelude::*;

fn options(seed: u64) -> SolverOptions {
    SolverOptions {
        seed,
        random_starts: 2,
        ..SolverOptions::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solutions_are_feasible_and_beat_the_oracle(
        name in prop::sample::select(vec!["quasilinear", "price_sensitive", "inhomogeneous"]),
        agents in 2usize..6,
        seed in 0u64..1000,
    ) {
        let spec = builtin(name).unwrap();
        let inst = DiscreteInstance::on_grid(spec.clone(), &[agents], options(seed)).unwrap();
        let sol = solve_principal(&inst).unwrap();
        let v = verify_solution(&inst, &sol).unwrap();
        prop_assert!(v.feasible, "{v:?}");
        prop_assert!(v.ic_residual >= -1e-6 && v.ir_residual >= -1e-6);
        prop_assert!(v.profit_error <= 1e-12);
        prop_assert!(sol.trace.windows(2).all(|w| w[1] >= w[0]));
        let oracle = enumerate_menus(
            &spec,
            &inst.agents,
            &uniform_products(&spec, &[4]),
            &uniform_prices(&spec, 6),
        )
        .unwrap();
        prop_assert!(sol.profit >= oracle.profit - 1e-3, "{} < {}", sol.profit, oracle.profit);
    }

    #[test]
    fn quasilinear_allocations_are_monotone(agents in 3usize..10, seed in 0u64..1000) {
        let inst = DiscreteInstance::on_grid(builtin("quasilinear").unwrap(), &[agents], options(seed)).unwrap();
        let sol = solve_principal(&inst).unwrap();
        prop_assert!(sol.contracts.windows(2).all(|w| w[1].y[0] >= w[0].y[0] - 1e-6), "{:?}", sol.contracts);
    }

    #[test]
    fn oracle_menus_are_incentive_compatible(
        name in prop::sample::select(vec!["quasilinear", "price_sensitive", "inhomogeneous", "zero_sum_profit"]),
        prices in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let spec = builtin(name).unwrap();
        let agents = AgentGrid::tensor(&spec, &[5]).unwrap();
        let zhi = spec.domains().z.1;
        let menu = Menu::new(
            &spec,
            vec![vec![0.25], vec![0.5], vec![1.0]],
            prices.iter().map(|p| p * zhi).collect(),
        )
        .unwrap();
        let u = utility_from_menu(&spec, &menu, &agents).unwrap();
        prop_assert!(check_incentive_compatible(&spec, &u).unwrap().ok);
        let r = enumerate_menus(&spec, &agents, &uniform_products(&spec, &[3]), &uniform_prices(&spec, 4)).unwrap();
        prop_assert!(check_incentive_compatible(&spec, &r.allocation).unwrap().ok);
    }
}
