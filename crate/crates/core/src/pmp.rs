//! Pontryagin machinery: Hamiltonian, backward costate integration,
//! switching functions, pointwise control characterizations and the
//! singular-arc feedback laws.
//!
//! The multiplier of the running cost is fixed to 1. Costates vanish at
//! `t_f` (free final state).

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{fmt_f64, ControlTrajectory, Grid, Trajectory};
use crate::error::{Error, Result};
use crate::model::{CostSpec, EpidemicModel, Scenario};

/// Half-width of the band `|Psi_i - C_i| <= SWITCH_TOL_REL * C_i` treated as
/// undecided by the linear characterization.
pub const SWITCH_TOL_REL: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct NodeState<'a> {
    pub s: f64,
    pub x: &'a [f64],
    pub r: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NodeCostate<'a> {
    pub p_s: f64,
    pub p_x: &'a [f64],
    pub p_r: f64,
}

impl NodeCostate<'_> {
    pub fn eta(&self) -> f64 {
        self.p_x[0] - self.p_s
    }
}

impl Trajectory {
    pub fn node(&self, k: usize) -> NodeState<'_> {
        NodeState {
            s: self.s[k],
            x: self.x_at(k),
            r: self.r[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    pub grid: Grid,
    pub n: usize,
    pub p_s: Vec<f64>,
    p_x: Vec<f64>,
    pub p_r: Vec<f64>,
    /// `p_x1 - p_s`.
    pub eta: Vec<f64>,
    /// Raw switching values `eta s x_i`, row-major.
    psi: Vec<f64>,
    /// `Psi_i / (q_i C_i)`, row-major.
    psi_norm: Vec<f64>,
}

impl CostateTrajectory {
    pub fn p_x_at(&self, k: usize) -> &[f64] {
        &self.p_x[k * self.n..(k + 1) * self.n]
    }

    pub fn psi_at(&self, k: usize) -> &[f64] {
        &self.psi[k * self.n..(k + 1) * self.n]
    }

    pub fn psi_norm_at(&self, k: usize) -> &[f64] {
        &self.psi_norm[k * self.n..(k + 1) * self.n]
    }

    pub fn psi_component(&self, i: usize) -> Vec<f64> {
        (0..self.grid.nodes()).map(|k| self.psi_at(k)[i]).collect()
    }

    pub fn node(&self, k: usize) -> NodeCostate<'_> {
        NodeCostate {
            p_s: self.p_s[k],
            p_x: self.p_x_at(k),
            p_r: self.p_r[k],
        }
    }

    /// Builds a costate trajectory from raw node values; `psi` is recomputed.
    pub fn from_parts(
        traj: &Trajectory,
        cost: &CostSpec,
        p_s: Vec<f64>,
        p_x: Vec<f64>,
        p_r: Vec<f64>,
    ) -> Result<Self> {
        let nodes = traj.grid.nodes();
        let n = traj.n;
        if p_s.len() != nodes || p_r.len() != nodes || p_x.len() != nodes * n {
            return Err(Error::GridMismatch("costate lengths do not match the trajectory".into()));
        }
        let mut eta = Vec::with_capacity(nodes);
        let mut psi = Vec::with_capacity(nodes * n);
        let mut psi_norm = Vec::with_capacity(nodes * n);
        for k in 0..nodes {
            let e = p_x[k * n] - p_s[k];
            eta.push(e);
            let s = traj.s[k];
            for (i, &xi) in traj.x_at(k).iter().enumerate() {
                let v = e * s * xi;
                psi.push(v);
                psi_norm.push(v / (cost.q[i] * cost.c[i]));
            }
        }
        Ok(CostateTrajectory {
            grid: traj.grid,
            n,
            p_s,
            p_x,
            p_r,
            eta,
            psi,
            psi_norm,
        })
    }
}

pub fn hamiltonian(
    model: &EpidemicModel,
    cost: &CostSpec,
    u: &[f64],
    state: NodeState<'_>,
    costate: NodeCostate<'_>,
) -> f64 {
    let n = model.n;
    let eta = costate.eta();
    let force: f64 = (0..n).map(|j| (model.beta_bar[j] - u[j]) * state.x[j]).sum();
    let mut transfer = 0.0;
    for i in 0..n {
        let row: f64 = (0..=i).map(|j| model.m[i][j] * state.x[j]).sum();
        transfer += costate.p_x[i] * row;
    }
    let recovery: f64 = (0..n).map(|j| model.sigma[j] * state.x[j]).sum();
    cost.nu(state.x)
        + cost.control_cost(u)
        + eta * state.s * force
        + model.rho * (costate.p_s - costate.p_r) * state.r
        + transfer
        + costate.p_r * recovery
}

/// `d/dt (p_s, p_x, p_r)` evaluated at the given state and control.
fn costate_rhs(
    model: &EpidemicModel,
    cost: &CostSpec,
    state: &[f64],
    u: &[f64],
    p: &[f64],
    grad_buf: &mut [f64],
    dp: &mut [f64],
) {
    let n = model.n;
    let s = state[0];
    let x = &state[1..=n];
    let eta = p[1] - p[0];
    let p_x = &p[1..=n];
    let p_r = p[n + 1];
    cost.nu_gradient_into(x, grad_buf);
    let force: f64 = (0..n).map(|j| (model.beta_bar[j] - u[j]) * x[j]).sum();
    dp[0] = -eta * force;
    for j in 0..n {
        // (M^T p_x)_j, M lower triangular
        let mt: f64 = (j..n).map(|i| model.m[i][j] * p_x[i]).sum();
        dp[1 + j] = -grad_buf[j] - eta * s * (model.beta_bar[j] - u[j]) - mt - p_r * model.sigma[j];
    }
    dp[n + 1] = -model.rho * (p[0] - p_r);
}

/// Backward RK4 of the adjoint system from zero terminal data; state and
/// control at half-steps are node averages of the stored forward solution.
pub fn integrate_adjoint(
    scenario: &Scenario,
    traj: &Trajectory,
    u: &ControlTrajectory,
) -> Result<CostateTrajectory> {
    let grid = Grid::of(scenario);
    grid.ensure_same(&traj.grid, "trajectory")?;
    grid.ensure_same(&u.grid, "control")?;
    let model = &scenario.model;
    let cost = &scenario.cost;
    let n = model.n;
    let dim = n + 2;
    let nodes = grid.nodes();
    let h = grid.step();

    let mut p_all = vec![0.0; nodes * dim];
    let mut p = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut ks = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut y_end = vec![0.0; dim];
    let mut y_start = vec![0.0; dim];
    let mut y_mid = vec![0.0; dim];
    let mut u_mid = vec![0.0; n];
    let mut grad_buf = vec![0.0; n];

    for k in (0..grid.intervals).rev() {
        traj.state_at(k + 1, &mut y_end);
        traj.state_at(k, &mut y_start);
        for j in 0..dim {
            y_mid[j] = 0.5 * (y_start[j] + y_end[j]);
        }
        let (ua, ub) = (u.at(k), u.at(k + 1));
        for i in 0..n {
            u_mid[i] = 0.5 * (ua[i] + ub[i]);
        }
        let [k1, k2, k3, k4] = &mut ks;
        costate_rhs(model, cost, &y_end, ub, &p, &mut grad_buf, k1);
        for j in 0..dim {
            tmp[j] = p[j] - 0.5 * h * k1[j];
        }
        costate_rhs(model, cost, &y_mid, &u_mid, &tmp, &mut grad_buf, k2);
        for j in 0..dim {
            tmp[j] = p[j] - 0.5 * h * k2[j];
        }
        costate_rhs(model, cost, &y_mid, &u_mid, &tmp, &mut grad_buf, k3);
        for j in 0..dim {
            tmp[j] = p[j] - h * k3[j];
        }
        costate_rhs(model, cost, &y_start, ua, &tmp, &mut grad_buf, k4);
        for j in 0..dim {
            p[j] -= h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        p_all[k * dim..(k + 1) * dim].copy_from_slice(&p);
    }

    let mut p_s = Vec::with_capacity(nodes);
    let mut p_x = Vec::with_capacity(nodes * n);
    let mut p_r = Vec::with_capacity(nodes);
    for k in 0..nodes {
        let row = &p_all[k * dim..(k + 1) * dim];
        p_s.push(row[0]);
        p_x.extend_from_slice(&row[1..=n]);
        p_r.push(row[n + 1]);
    }
    CostateTrajectory::from_parts(traj, cost, p_s, p_x, p_r)
}

/// Pointwise minimizer of the Hamiltonian for superlinear components:
/// `u_i = min{ max(psi_i, 0)^(1/(q_i-1)), u_bar_i }`.
pub fn control_superlinear(
    cost: &CostSpec,
    eta: f64,
    s: f64,
    x: &[f64],
    u_bar: &[f64],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    control_superlinear_into(cost, eta, s, x, u_bar, &mut out)?;
    Ok(out)
}

pub(crate) fn control_superlinear_into(
    cost: &CostSpec,
    eta: f64,
    s: f64,
    x: &[f64],
    u_bar: &[f64],
    out: &mut [f64],
) -> Result<()> {
    for i in 0..x.len() {
        let q = cost.q[i];
        if q <= 1.0 {
            return Err(Error::ExponentNotSuperlinear(i));
        }
        let psi = eta * s * x[i] / (q * cost.c[i]);
        out[i] = if psi <= 0.0 {
            0.0
        } else if q == 2.0 {
            psi.min(u_bar[i])
        } else if psi >= u_bar[i].powf(q - 1.0) {
            u_bar[i]
        } else {
            psi.powf(1.0 / (q - 1.0)).min(u_bar[i])
        };
    }
    Ok(())
}

/// Value used where the linear characterization is silent (`Psi_i = C_i`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularFill {
    Zero,
    Max,
    HoldPrevious,
}

/// Bang-bang characterization for linear components.
pub fn control_linear(
    cost: &CostSpec,
    psi: &[f64],
    u_bar: &[f64],
    fill: SingularFill,
    previous: Option<&[f64]>,
) -> Result<Vec<f64>> {
    psi.iter()
        .enumerate()
        .map(|(i, &p)| {
            if cost.q[i] != 1.0 {
                return Err(Error::ExponentNotLinear(i));
            }
            let c = cost.c[i];
            let tol = SWITCH_TOL_REL * c;
            Ok(if p < c - tol {
                0.0
            } else if p > c + tol {
                u_bar[i]
            } else {
                match fill {
                    SingularFill::Zero => 0.0,
                    SingularFill::Max => u_bar[i],
                    SingularFill::HoldPrevious => previous.map_or(0.0, |prev| prev[i]),
                }
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularFeedback {
    pub unclamped: f64,
    pub clamped: f64,
}

/// Singular-arc feedback law for SIR with autonomous strictly convex `nu`:
/// `u = beta_bar - gamma nu''(x) / (s nu''(x) + gamma eta)`.
pub fn feedback_singular_n1(
    model: &EpidemicModel,
    cost: &CostSpec,
    s: f64,
    x: f64,
    eta: f64,
) -> Result<SingularFeedback> {
    let gamma = model.sir_gamma().ok_or(Error::NotSir)?;
    let nu2 = cost.nu_hessian_diag(&[x])[0];
    if nu2 <= 0.0 {
        return Err(Error::NonconvexNu);
    }
    let inner = s * nu2 + gamma * eta;
    let den = x * inner;
    let scale = x * (s * nu2 + (gamma * eta).abs());
    if !den.is_finite() || den.abs() <= 1e-14 * scale || den == 0.0 {
        return Err(Error::DegenerateDenominator(den));
    }
    let beta = model.beta_bar[0];
    let unclamped = beta - gamma * nu2 / inner;
    Ok(SingularFeedback {
        unclamped,
        clamped: unclamped.clamp(0.0, model.u_bar[0]),
    })
}

/// Residual of the general-n singular law for `u_1` derived from
/// `d/dt Psi_i = 0` (i >= 2): `(beta_1 - u_1) - predicted`.
pub fn singular_law_residual_u1(
    model: &EpidemicModel,
    cost: &CostSpec,
    state: NodeState<'_>,
    costate: NodeCostate<'_>,
    u1: f64,
    i: usize,
) -> Result<f64> {
    let n = model.n;
    if n < 2 || i == 0 || i >= n {
        return Err(Error::NotApplicable(
            "the u_1 law needs n >= 2 and a compartment index i >= 2".into(),
        ));
    }
    let eta = costate.eta();
    let s = state.s;
    let xi = state.x[i];
    let den = eta * s * s * xi;
    if den == 0.0 || !den.is_finite() {
        return Err(Error::DegenerateDenominator(den));
    }
    let dnu1 = cost.nu_gradient(state.x)[0];
    let col1: f64 = (0..n).map(|r| model.m[r][0] * costate.p_x[r]).sum();
    let row_i: f64 = (0..n).map(|j| model.m[i][j] * state.x[j]).sum();
    let num = -(dnu1 + col1 + costate.p_r * model.sigma[0]) * s * xi
        + eta * model.rho * state.r * xi
        + eta * s * row_i;
    Ok((model.beta_bar[0] - u1) - num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianCheck {
    pub k_expected: f64,
    pub max_deviation: f64,
}

pub fn hamiltonian_series(
    scenario: &Scenario,
    traj: &Trajectory,
    u: &ControlTrajectory,
    costates: &CostateTrajectory,
) -> Vec<f64> {
    (0..traj.grid.nodes())
        .map(|k| hamiltonian(&scenario.model, &scenario.cost, u.at(k), traj.node(k), costates.node(k)))
        .collect()
}

/// Deviation of `H(t_k)` from `nu(x(t_f))`, its value on an optimal
/// solution of an autonomous problem.
pub fn hamiltonian_constant_check(
    scenario: &Scenario,
    traj: &Trajectory,
    u: &ControlTrajectory,
    costates: &CostateTrajectory,
) -> HamiltonianCheck {
    let last = traj.grid.intervals;
    let k_expected = scenario.cost.nu(traj.x_at(last));
    let max_deviation = hamiltonian_series(scenario, traj, u, costates)
        .into_iter()
        .map(|h| (h - k_expected).abs())
        .fold(0.0, f64::max);
    HamiltonianCheck {
        k_expected,
        max_deviation,
    }
}

/// `d eta / dt` obtained from Hamiltonian constancy (SIR, autonomous cost):
/// `eta (beta_bar - u) x + (nu(x) + C u^q - nu(x_f) - nu'(x) x) / x`.
pub fn eta_derivative(
    model: &EpidemicModel,
    cost: &CostSpec,
    x: f64,
    u: f64,
    eta: f64,
    x_final: f64,
) -> Result<f64> {
    model.sir_gamma().ok_or(Error::NotSir)?;
    let nu = cost.nu(&[x]);
    let nu_f = cost.nu(&[x_final]);
    let dnu = cost.nu_gradient(&[x])[0];
    Ok(eta * (model.beta_bar[0] - u) * x + (nu + cost.control_cost(&[u]) - nu_f - dnu * x) / x)
}

/// CSV `t,p_s,p_x1..p_xn,p_r,eta,Psi1..Psin,H`.
pub fn write_costates_csv<W: Write>(
    mut w: W,
    scenario: &Scenario,
    traj: &Trajectory,
    u: &ControlTrajectory,
    costates: &CostateTrajectory,
) -> std::io::Result<()> {
    let n = costates.n;
    let mut header = String::from("t,p_s");
    for i in 1..=n {
        header.push_str(&format!(",p_x{i}"));
    }
    header.push_str(",p_r,eta");
    for i in 1..=n {
        header.push_str(&format!(",Psi{i}"));
    }
    header.push_str(",H");
    writeln!(w, "{header}")?;
    let hs = hamiltonian_series(scenario, traj, u, costates);
    for k in 0..costates.grid.nodes() {
        let mut fields = vec![fmt_f64(costates.grid.time(k)), fmt_f64(costates.p_s[k])];
        fields.extend(costates.p_x_at(k).iter().map(|&v| fmt_f64(v)));
        fields.push(fmt_f64(costates.p_r[k]));
        fields.push(fmt_f64(costates.eta[k]));
        fields.extend(costates.psi_at(k).iter().map(|&v| fmt_f64(v)));
        fields.push(fmt_f64(hs[k]));
        writeln!(w, "{}", fields.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::simulate_forward;
    use crate::model::preset;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn qq_cost() -> CostSpec {
        CostSpec {
            w: vec![1.0],
            rexp: vec![2.0],
            c: vec![1.0],
            q: vec![2.0],
        }
    }

    #[test]
    fn hamiltonian_reduces_to_running_cost() {
        let sc = preset("sir_paper_qq_008").unwrap();
        let x = [0.1];
        let h = hamiltonian(
            &sc.model,
            &sc.cost,
            &[0.0],
            NodeState { s: 0.9, x: &x, r: 0.0 },
            NodeCostate { p_s: 0.0, p_x: &[0.0], p_r: 0.0 },
        );
        assert!((h - 0.01).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_hand_value() {
        let sc = preset("sir_paper_qq_008").unwrap();
        let h = hamiltonian(
            &sc.model,
            &qq_cost(),
            &[0.0],
            NodeState { s: 0.9, x: &[0.1], r: 0.0 },
            NodeCostate { p_s: 0.0, p_x: &[1.0], p_r: 0.0 },
        );
        assert!((h - 0.0184).abs() < 1e-15, "{h}");
    }

    #[test]
    fn superlinear_branches() {
        let cost = qq_cost();
        // psi <= 0
        assert_eq!(control_superlinear(&cost, -1.0, 0.5, &[0.1], &[0.08]).unwrap(), vec![0.0]);
        // eta s x = 0.02 -> psi = 0.01
        let u = control_superlinear(&cost, 0.2, 1.0, &[0.1], &[0.08]).unwrap();
        assert!((u[0] - 0.01).abs() < 1e-15);
        // saturated
        assert_eq!(control_superlinear(&cost, 1.0, 1.0, &[1.0], &[0.08]).unwrap(), vec![0.08]);
        let mut lin = cost.clone();
        lin.q = vec![1.0];
        assert!(matches!(
            control_superlinear(&lin, 1.0, 1.0, &[1.0], &[0.08]),
            Err(Error::ExponentNotSuperlinear(0))
        ));
    }

    #[test]
    fn fractional_exponent_branch() {
        let mut cost = qq_cost();
        cost.q = vec![1.5];
        cost.c = vec![2.0];
        // psi = 0.3 * 1 * 0.1 / 3 = 0.01 -> u = 0.01^2
        let u = control_superlinear(&cost, 0.3, 1.0, &[0.1], &[0.08]).unwrap();
        assert!((u[0] - 1e-4).abs() < 1e-16);
    }

    #[test]
    fn linear_branches() {
        let cost = CostSpec {
            w: vec![30.0],
            rexp: vec![2.0],
            c: vec![1.0],
            q: vec![1.0],
        };
        let ub = [0.1];
        assert_eq!(control_linear(&cost, &[0.5], &ub, SingularFill::Zero, None).unwrap(), vec![0.0]);
        assert_eq!(control_linear(&cost, &[1.5], &ub, SingularFill::Zero, None).unwrap(), vec![0.1]);
        assert_eq!(control_linear(&cost, &[1.0], &ub, SingularFill::Zero, None).unwrap(), vec![0.0]);
        assert_eq!(control_linear(&cost, &[1.0], &ub, SingularFill::Max, None).unwrap(), vec![0.1]);
        assert_eq!(
            control_linear(&cost, &[1.0], &ub, SingularFill::HoldPrevious, Some(&[0.05])).unwrap(),
            vec![0.05]
        );
        assert!(matches!(
            control_linear(&qq_cost(), &[1.0], &ub, SingularFill::Zero, None),
            Err(Error::ExponentNotLinear(0))
        ));
    }

    #[test]
    fn feedback_continuity_threshold() {
        let sc = preset("sir_paper_ql_01").unwrap();
        let (gamma, beta, nu2) = (0.06, 0.16, 60.0);
        let eta = 0.5;
        let s = gamma / beta - gamma * eta / nu2;
        let fb = feedback_singular_n1(&sc.model, &sc.cost, s, 0.05, eta).unwrap();
        assert!(fb.unclamped.abs() < 1e-15, "{}", fb.unclamped);
        assert!(fb.clamped.abs() < 1e-15);
    }

    #[test]
    fn feedback_large_eta_tends_to_beta() {
        let sc = preset("sir_paper_ql_01").unwrap();
        let fb = feedback_singular_n1(&sc.model, &sc.cost, 0.3, 0.05, 1e12).unwrap();
        assert!((fb.unclamped - 0.16).abs() < 1e-9);
        assert_eq!(fb.clamped, 0.1);
    }

    #[test]
    fn feedback_errors() {
        let ll = preset("sir_paper_ll_01").unwrap();
        assert!(matches!(
            feedback_singular_n1(&ll.model, &ll.cost, 0.3, 0.05, 1.0),
            Err(Error::NonconvexNu)
        ));
        let seir = preset("seir").unwrap();
        assert!(matches!(
            feedback_singular_n1(&seir.model, &seir.cost, 0.3, 0.05, 1.0),
            Err(Error::NotSir)
        ));
        let sirs = preset("sirs").unwrap();
        assert!(matches!(
            feedback_singular_n1(&sirs.model, &sirs.cost, 0.3, 0.05, 1.0),
            Err(Error::NotSir)
        ));
        let ql = preset("sir_paper_ql_01").unwrap();
        // s nu'' + gamma eta = 0
        let eta = -0.3 * 60.0 / 0.06;
        assert!(matches!(
            feedback_singular_n1(&ql.model, &ql.cost, 0.3, 0.05, eta),
            Err(Error::DegenerateDenominator(_))
        ));
    }

    #[test]
    fn zero_state_cost_gives_zero_costates() {
        let mut sc = preset("sir_paper_qq_008").unwrap().with_grid(360);
        sc.cost.w = vec![0.0];
        let grid = Grid::of(&sc);
        let u = ControlTrajectory::constant(grid, &[0.03]);
        let traj = simulate_forward(&sc, &u).unwrap();
        let co = integrate_adjoint(&sc, &traj, &u).unwrap();
        assert!(co.p_s.iter().chain(&co.p_r).all(|&v| v == 0.0));
        assert!((0..grid.nodes()).all(|k| co.p_x_at(k)[0] == 0.0));
        let check = hamiltonian_constant_check(&sc, &traj, &ControlTrajectory::zeros(grid, 1), &co);
        assert_eq!(check.k_expected, 0.0);
        assert_eq!(check.max_deviation, 0.0);
    }

    #[test]
    fn terminal_costates_are_exactly_zero() {
        for name in ["sir_paper_qq_008", "seirs", "covid_n5"] {
            let sc = preset(name).unwrap().with_grid(720);
            let grid = Grid::of(&sc);
            let u = ControlTrajectory::constant(grid, &sc.model.u_bar.iter().map(|b| b / 3.0).collect::<Vec<_>>());
            let traj = simulate_forward(&sc, &u).unwrap();
            let co = integrate_adjoint(&sc, &traj, &u).unwrap();
            let last = grid.intervals;
            assert_eq!(co.p_s[last], 0.0);
            assert_eq!(co.p_r[last], 0.0);
            assert!(co.p_x_at(last).iter().all(|&v| v == 0.0));
            assert!(co.psi_at(last).iter().all(|&v| v == 0.0));
            for k in 0..grid.nodes() {
                assert_eq!(co.eta[k], co.p_x_at(k)[0] - co.p_s[k]);
            }
        }
    }

    #[test]
    fn characterized_control_minimizes_hamiltonian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sc = preset("covid_n3").unwrap();
        let cost = CostSpec {
            w: vec![1.0, 2.0, 3.0],
            rexp: vec![2.0, 1.0, 2.0],
            c: vec![0.01, 0.02, 0.005],
            q: vec![2.0, 1.5, 1.2],
        };
        for _ in 0..200 {
            let s = rng.gen_range(0.1..1.0);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..0.2)).collect();
            let px: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..3.0)).collect();
            let co = NodeCostate { p_s: rng.gen_range(-1.0..1.0), p_x: &px, p_r: rng.gen_range(-1.0..1.0) };
            let st = NodeState { s, x: &x, r: 0.05 };
            let ustar = control_superlinear(&cost, co.eta(), s, &x, &sc.model.u_bar).unwrap();
            for (i, &v) in ustar.iter().enumerate() {
                assert!((0.0..=sc.model.u_bar[i]).contains(&v));
            }
            let hstar = hamiltonian(&sc.model, &cost, &ustar, st, co);
            for _ in 0..50 {
                let trial: Vec<f64> = sc.model.u_bar.iter().map(|&b| rng.gen_range(0.0..=b)).collect();
                let h = hamiltonian(&sc.model, &cost, &trial, st, co);
                assert!(hstar <= h + 1e-15, "H(u*) = {hstar} > H(trial) = {h}");
            }
        }
    }
}
