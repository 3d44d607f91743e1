use epicon::dynamics::{epidemic_metrics, simulate_dense, simulate_forward, ControlTrajectory, Grid};
use epicon::preset;
use proptest::prelude::*;

fn piecewise(grid: Grid, u_bar: &[f64], fractions: &[f64]) -> ControlTrajectory {
    let n = u_bar.len();
    let pieces = fractions.len() / n;
    let mut u = ControlTrajectory::zeros(grid, n);
    for k in 0..grid.nodes() {
        let p = (k * pieces / grid.nodes()).min(pieces - 1);
        for i in 0..n {
            u.at_mut(k)[i] = fractions[p * n + i] * u_bar[i];
        }
    }
    u
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn mass_is_conserved_and_states_stay_nonnegative(
        which in 0usize..5,
        fractions in prop::collection::vec(0.0f64..=1.0, 30),
    ) {
        let name = ["sir_paper_qq_008", "seir", "seirs", "covid_n3", "covid_n5"][which];
        let sc = preset(name).unwrap().with_grid(720);
        let n = sc.n();
        let pieces = fractions.len() / n;
        let u = piecewise(Grid::of(&sc), &sc.model.u_bar, &fractions[..pieces * n]);
        let traj = simulate_forward(&sc, &u).unwrap();
        prop_assert!(traj.mass_defect() <= 1e-9, "{name}: {}", traj.mass_defect());
        prop_assert!(traj.min_state() >= -1e-9, "{name}: {}", traj.min_state());
    }
}

#[test]
fn suppressed_transmission_decays_exponentially() {
    let sc = preset("sir_paper_qq_008").unwrap().with_u_bar(vec![0.16]);
    let u = ControlTrajectory::constant(Grid::of(&sc), &[0.16]);
    let traj = simulate_forward(&sc, &u).unwrap();
    let last = traj.grid.intervals;
    let exact = 0.001 * (-0.06f64 * 360.0).exp();
    assert!((traj.x_at(last)[0] - exact).abs() <= 1e-6 * exact);

    let m = epidemic_metrics(&traj);
    assert_eq!(m.peak_time, 0.0);
    assert_eq!(m.peak_infected, 0.001);
    assert_eq!(m.total_deceased, 0.0);
}

#[test]
fn uncontrolled_peak_sits_at_herd_threshold() {
    let sc = preset("sir_paper_qq_008").unwrap();
    let traj = simulate_forward(&sc, &ControlTrajectory::zeros(Grid::of(&sc), 1)).unwrap();
    let k_peak = (0..traj.grid.nodes())
        .max_by(|&a, &b| traj.x_at(a)[0].total_cmp(&traj.x_at(b)[0]))
        .unwrap();
    assert!((traj.s[k_peak] - 0.375).abs() <= 2e-3, "{}", traj.s[k_peak]);
}

#[test]
fn refinement_agrees_on_coarse_nodes() {
    let sc = preset("sir_paper_qq_008").unwrap();
    let u = ControlTrajectory::zeros(Grid::of(&sc), 1);
    let coarse = simulate_forward(&sc, &u).unwrap();
    let fine = simulate_dense(&sc, &u, 4).unwrap().restrict(4);
    for k in 0..coarse.grid.nodes() {
        assert!((coarse.x_at(k)[0] - fine.x_at(k)[0]).abs() <= 1e-8, "node {k}");
        assert!((coarse.s[k] - fine.s[k]).abs() <= 1e-8, "node {k}");
    }
    assert_eq!(simulate_dense(&sc, &u, 1).unwrap(), coarse);
}

#[test]
fn rk4_error_shrinks_at_fourth_order() {
    let base = preset("sir_paper_qq_008").unwrap().with_grid(450);
    let end = |sc: &epicon::Scenario| {
        let traj = simulate_forward(sc, &ControlTrajectory::zeros(Grid::of(sc), 1)).unwrap();
        traj.x_at(traj.grid.intervals)[0]
    };
    let reference = end(&base.with_grid(7200));
    let e1 = (end(&base) - reference).abs();
    let e2 = (end(&base.with_grid(900)) - reference).abs();
    let ratio = e1 / e2;
    assert!((12.0..20.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn peak_matches_dense_scan() {
    let sc = preset("sir_paper_qq_008").unwrap();
    let u = ControlTrajectory::zeros(Grid::of(&sc), 1);
    let coarse = epidemic_metrics(&simulate_forward(&sc, &u).unwrap());
    let dense = epidemic_metrics(&simulate_dense(&sc, &u, 8).unwrap());
    assert!((coarse.peak_infected - dense.peak_infected).abs() <= 1e-4);
    assert!((coarse.peak_time - dense.peak_time).abs() <= sc.step());
}
