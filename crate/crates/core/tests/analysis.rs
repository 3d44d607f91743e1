use epicon::analysis::{
    classify_structure, detect_singular_arcs, terminal_deactivation_check, StructureOptions,
};
use epicon::dynamics::{simulate_forward, ControlTrajectory, Grid, Trajectory};
use epicon::pmp::{feedback_singular_n1, integrate_adjoint, CostateTrajectory};
use epicon::{preset, Error, Scenario};
use proptest::prelude::*;

fn base() -> (Scenario, Trajectory) {
    let sc = preset("sir_paper_ql_01").unwrap().with_grid(400);
    let traj = simulate_forward(&sc, &ControlTrajectory::zeros(Grid::of(&sc), 1)).unwrap();
    (sc, traj)
}

/// Costates whose switching function equals `psi[k]` exactly.
fn with_psi(sc: &Scenario, traj: &Trajectory, psi: impl Fn(usize) -> f64) -> CostateTrajectory {
    let nodes = traj.grid.nodes();
    let p_x = (0..nodes).map(|k| psi(k) / (traj.s[k] * traj.x_at(k)[0])).collect();
    CostateTrajectory::from_parts(traj, &sc.cost, vec![0.0; nodes], p_x, vec![0.0; nodes]).unwrap()
}

#[test]
fn switching_function_below_cost_has_no_arc() {
    let (sc, traj) = base();
    let c = sc.cost.c[0];
    let co = with_psi(&sc, &traj, |_| 0.5 * c);
    assert!(detect_singular_arcs(&co, &sc.cost, 5e-2, 3).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constructed_arc_is_found(a in 1usize..380, len in 3usize..200) {
        let (sc, traj) = base();
        let c = sc.cost.c[0];
        let b = (a + len - 1).min(399);
        prop_assume!(b + 1 - a >= 3);
        let co = with_psi(&sc, &traj, |k| if (a..=b).contains(&k) { c } else { 0.5 * c });
        let arcs = detect_singular_arcs(&co, &sc.cost, 5e-2, 3).unwrap();
        prop_assert_eq!(arcs.len(), 1);
        prop_assert_eq!((arcs[0].k_a, arcs[0].k_b), (a, b));
    }

    #[test]
    fn classification_partitions_the_horizon(
        fractions in prop::collection::vec(prop::sample::select(vec![0.0, 0.3, 1.0]), 1..12),
    ) {
        let (sc, _) = base();
        let grid = Grid::of(&sc);
        let u_bar = sc.model.u_bar[0];
        let mut u = ControlTrajectory::zeros(grid, 1);
        for k in 0..grid.nodes() {
            u.at_mut(k)[0] = fractions[k * fractions.len() / grid.nodes()] * u_bar;
        }
        let traj = simulate_forward(&sc, &u).unwrap();
        let co = integrate_adjoint(&sc, &traj, &u).unwrap();
        let opts = StructureOptions::default();
        let st = classify_structure(&u, &sc.model.u_bar, &co, &sc.cost, &opts);
        let ivs = &st.components[0];
        prop_assert_eq!(ivs[0].k_a, 0);
        prop_assert_eq!(ivs.last().unwrap().k_b, grid.intervals);
        prop_assert_eq!(ivs.last().unwrap().t_b, sc.horizon.t_f);
        for w in ivs.windows(2) {
            prop_assert_eq!(w[0].k_b + 1, w[1].k_a);
            prop_assert_eq!(w[0].t_b, w[1].t_a);
            prop_assert_ne!(w[0].label, w[1].label);
        }
        prop_assert_eq!(classify_structure(&u, &sc.model.u_bar, &co, &sc.cost, &opts), st);
    }
}

#[test]
fn linear_state_cost_has_no_feedback_law() {
    let sc = preset("sir_paper_ll_01").unwrap();
    let err = feedback_singular_n1(&sc.model, &sc.cost, 0.5, 0.01, 1.0).unwrap_err();
    assert!(matches!(err, Error::NonconvexNu));
    assert!(err.to_string().contains("feedback law degenerates"));
}

#[test]
fn control_ending_at_the_bound_is_not_deactivated() {
    let (sc, _) = base();
    let grid = Grid::of(&sc);
    let u_bar = sc.model.u_bar[0];
    let mut u = ControlTrajectory::zeros(grid, 1);
    for k in grid.intervals - 50..grid.nodes() {
        u.at_mut(k)[0] = u_bar;
    }
    let traj = simulate_forward(&sc, &u).unwrap();
    let co = integrate_adjoint(&sc, &traj, &u).unwrap();
    assert!(!terminal_deactivation_check(&u, &co, &sc.cost, 3));
}
