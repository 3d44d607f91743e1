use epicon::dynamics::{simulate_forward, ControlTrajectory, Grid};
use epicon::pmp::integrate_adjoint;
use epicon::solver::{
    brute_force_oracle, cost_evaluate, gradient, solve_fbsm, solve_fbsm_from, solve_projected_gradient,
    uniqueness_probe, SolverConfig,
};
use epicon::{preset, Error, Scenario};

fn no_state_cost(name: &str) -> Scenario {
    let mut sc = preset(name).unwrap();
    sc.cost.w = vec![0.0; sc.n()];
    sc
}

fn cost_of(sc: &Scenario, u: &ControlTrajectory) -> f64 {
    let traj = simulate_forward(sc, u).unwrap();
    cost_evaluate(sc, &traj, u).unwrap()
}

#[test]
fn cost_of_nothing_is_zero() {
    let sc = no_state_cost("sir_paper_qq_008");
    assert_eq!(cost_of(&sc, &ControlTrajectory::zeros(Grid::of(&sc), 1)), 0.0);
}

#[test]
fn constant_integrand_integrates_exactly() {
    let sc = no_state_cost("sir_paper_qq_008");
    let level = 0.05;
    let j = cost_of(&sc, &ControlTrajectory::constant(Grid::of(&sc), &[level]));
    let exact = sc.cost.c[0] * level * level * sc.horizon.t_f;
    assert!((j - exact).abs() <= 1e-12 * exact, "{j} vs {exact}");
}

#[test]
fn linear_cost_matches_dense_quadrature() {
    let sc = preset("sir_paper_ll_01").unwrap();
    let coarse = cost_of(&sc, &ControlTrajectory::zeros(Grid::of(&sc), 1));
    let dense_sc = sc.with_grid(8 * sc.horizon.grid_points);
    let dense = cost_of(&dense_sc, &ControlTrajectory::zeros(Grid::of(&dense_sc), 1));
    assert!((coarse - dense).abs() <= 1e-6 * dense);
}

#[test]
fn gradient_at_zero_control() {
    for (name, linear) in [("sir_paper_qq_008", false), ("sir_paper_ql_01", true)] {
        let sc = preset(name).unwrap().with_grid(400);
        let u = ControlTrajectory::zeros(Grid::of(&sc), 1);
        let traj = simulate_forward(&sc, &u).unwrap();
        let co = integrate_adjoint(&sc, &traj, &u).unwrap();
        let g = gradient(&sc, &traj, &co, &u).unwrap();
        let c = if linear { sc.cost.c[0] } else { 0.0 };
        for k in 0..g.grid.nodes() {
            let want = c - co.psi_at(k)[0];
            assert!((g.get(k, 0) - want).abs() <= 1e-14 * (1.0 + want.abs()), "{name} node {k}");
        }
    }
}

#[test]
fn sweep_without_state_cost_stops_at_zero() {
    let sc = no_state_cost("sir_paper_qq_008");
    let r = solve_fbsm(&sc, &SolverConfig::default()).unwrap();
    assert!(r.converged);
    assert!(r.iterations <= 2, "{} iterations", r.iterations);
    assert!(r.u_opt.values().iter().all(|&v| v == 0.0));
}

#[test]
fn gradient_method_without_state_cost_stops_at_zero() {
    let sc = no_state_cost("sir_paper_ql_01").with_grid(360);
    let r = solve_projected_gradient(&sc, &SolverConfig::projected_gradient()).unwrap();
    assert!(r.converged);
    assert!(r.u_opt.values().iter().all(|&v| v == 0.0));
}

#[test]
fn sweep_beats_doing_nothing() {
    let sc = preset("sir_paper_qq_008").unwrap();
    let r = solve_fbsm(&sc, &SolverConfig::default()).unwrap();
    assert!(r.converged);
    assert_eq!(r.u_opt.at(r.u_opt.grid.intervals), &[0.0]);
    let idle = cost_of(&sc, &ControlTrajectory::zeros(Grid::of(&sc), 1));
    assert!(r.cost_value < idle, "{} vs {idle}", r.cost_value);
    assert!(r.u_opt.is_admissible(&sc.model.u_bar));
}

#[test]
fn sweep_rejects_linear_cost() {
    let sc = preset("sir_paper_ql_01").unwrap();
    assert!(matches!(
        solve_fbsm(&sc, &SolverConfig::default()),
        Err(Error::LinearCostUnsupported)
    ));
}

#[test]
fn sweep_start_must_share_the_grid() {
    let sc = preset("sir_paper_qq_008").unwrap();
    let start = ControlTrajectory::zeros(Grid::new(360.0, 10), 1);
    assert!(matches!(
        solve_fbsm_from(&sc, &SolverConfig::default(), start),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn gradient_method_descends_and_respects_the_box() {
    let sc = preset("sir_paper_ll_01").unwrap().with_grid(720);
    let r = solve_projected_gradient(&sc, &SolverConfig::projected_gradient()).unwrap();
    let u_bar = sc.model.u_bar[0];
    assert!(r.u_opt.values().iter().all(|&v| (0.0..=u_bar).contains(&v)));
    for pair in r.cost_history.windows(2) {
        let ((e0, j0), (e1, j1)) = (pair[0], pair[1]);
        if e0 == e1 {
            assert!(j1 <= j0, "cost rose from {j0} to {j1} at eps {e0}");
        }
    }
    let last_eps = r.cost_history.last().unwrap().0;
    assert_eq!(last_eps, 0.0);
}

#[test]
fn config_validation() {
    let mut c = SolverConfig::projected_gradient();
    c.metric_scale = -1.0;
    assert!(c.validate().is_err());
    let mut c = SolverConfig::projected_gradient();
    c.pg_starts.clear();
    assert!(c.validate().is_err());
    let c = SolverConfig {
        omega: 0.0,
        ..SolverConfig::default()
    };
    assert!(c.validate().is_err());
    assert!(SolverConfig::default().validate().is_ok());
}

#[test]
fn oracle_trivial_cases() {
    let sc = no_state_cost("sir_paper_qq_008").with_grid(120);
    let o = brute_force_oracle(&sc, 1, 2).unwrap();
    assert!(o.best_u.values().iter().all(|&v| v == 0.0));
    assert_eq!(o.best_cost, 0.0);

    let sc = preset("covid_n5").unwrap();
    assert!(matches!(
        brute_force_oracle(&sc, 3, 5),
        Err(Error::SearchSpaceTooLarge(_))
    ));
}

#[test]
fn sweep_beats_every_constant_control() {
    let sc = preset("sir_paper_qq_008").unwrap().with_grid(720);
    let oracle = brute_force_oracle(&sc, 1, 17).unwrap();
    let r = solve_fbsm(&sc, &SolverConfig::default()).unwrap();
    assert!(r.cost_value <= oracle.best_cost, "{} vs {}", r.cost_value, oracle.best_cost);
}

#[test]
fn single_start_has_no_gap() {
    let sc = preset("sir_paper_qq_008").unwrap();
    let p = uniqueness_probe(&sc, 1, 20.0).unwrap();
    assert_eq!(p.max_pairwise_u_gap, 0.0);
    assert!(p.all_converged);
}
