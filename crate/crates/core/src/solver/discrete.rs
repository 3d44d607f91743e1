//! Exact gradient of the discretized cost (RK4 transcription plus
//! trapezoid quadrature) by reverse sweep through the RK4 stages.
//!
//! The returned field is a density: node `k` holds `dJ/du_k / w_k` with
//! `w_k` the trapezoid weight, so that the trapezoid inner product with a
//! direction equals the directional derivative of the discrete cost.

use crate::dynamics::{state_rhs, ControlTrajectory, Grid, Trajectory};
use crate::error::Result;
use crate::model::{EpidemicModel, Scenario};

const B: [f64; 4] = [1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0];

/// `J^T v` for the reduced state `(s, x, r)` at stage state `y` (length n + 3,
/// the deceased slot is ignored) and control `u`.
fn jt_v(model: &EpidemicModel, y: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) {
    let n = model.n;
    let s = y[0];
    let x = &y[1..=n];
    let ev = v[1] - v[0];
    let force: f64 = (0..n).map(|j| (model.beta_bar[j] - u[j]) * x[j]).sum();
    out[0] = ev * force;
    for j in 0..n {
        let mt: f64 = (j..n).map(|i| model.m[i][j] * v[1 + i]).sum();
        out[1 + j] = ev * s * (model.beta_bar[j] - u[j]) + mt + model.sigma[j] * v[n + 1];
    }
    out[n + 1] = model.rho * (v[0] - v[n + 1]);
}

/// Adds `scale * F^T v` (derivative of the dynamics w.r.t. the control) into `g`.
fn add_ft_v(n: usize, y: &[f64], v: &[f64], scale: f64, g: &mut [f64]) {
    let ev = v[1] - v[0];
    for j in 0..n {
        g[j] -= scale * ev * y[0] * y[1 + j];
    }
}

/// Gradient density of the discrete cost with an added `eps * sum u_i^2`
/// running penalty.
pub fn discrete_gradient(
    scenario: &Scenario,
    traj: &Trajectory,
    u: &ControlTrajectory,
    eps: f64,
) -> Result<ControlTrajectory> {
    let grid = Grid::of(scenario);
    grid.ensure_same(&traj.grid, "trajectory")?;
    grid.ensure_same(&u.grid, "control")?;
    let model = &scenario.model;
    let cost = &scenario.cost;
    let n = model.n;
    let dim = n + 3;
    let adim = n + 2;
    let h = grid.step();
    let last = grid.intervals;

    let mut grad = vec![0.0; grid.nodes() * n];
    let mut lambda = vec![0.0; adim];
    let mut nu_grad = vec![0.0; n];

    let add_node_terms = |k: usize, lambda: &mut [f64], grad: &mut [f64], nu_grad: &mut [f64]| {
        let w = grid.weight(k);
        cost.nu_gradient_into(traj.x_at(k), nu_grad);
        for j in 0..n {
            lambda[1 + j] += w * nu_grad[j];
        }
        let uk = u.at(k);
        for j in 0..n {
            grad[k * n + j] += w * (cost.control_cost_derivative(j, uk[j]) + 2.0 * eps * uk[j]);
        }
    };
    add_node_terms(last, &mut lambda, &mut grad, &mut nu_grad);

    let mut y0 = vec![0.0; dim];
    let mut stages = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut kvals = [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]];
    let mut v = [vec![0.0; adim], vec![0.0; adim], vec![0.0; adim], vec![0.0; adim]];
    let mut jtv = [vec![0.0; adim], vec![0.0; adim], vec![0.0; adim], vec![0.0; adim]];
    let mut u_mid = vec![0.0; n];
    let mut g_mid = vec![0.0; n];

    for k in (0..last).rev() {
        let (ua, ub) = (u.at(k), u.at(k + 1));
        for i in 0..n {
            u_mid[i] = 0.5 * (ua[i] + ub[i]);
        }
        traj.state_at(k, &mut y0[..adim]);
        y0[n + 2] = traj.d[k];

        // stage states
        stages[0].copy_from_slice(&y0);
        state_rhs(model, &stages[0], ua, &mut kvals[0]);
        for j in 0..dim {
            stages[1][j] = y0[j] + 0.5 * h * kvals[0][j];
        }
        state_rhs(model, &stages[1], &u_mid, &mut kvals[1]);
        for j in 0..dim {
            stages[2][j] = y0[j] + 0.5 * h * kvals[1][j];
        }
        state_rhs(model, &stages[2], &u_mid, &mut kvals[2]);
        for j in 0..dim {
            stages[3][j] = y0[j] + h * kvals[2][j];
        }
        let stage_u: [&[f64]; 4] = [ua, &u_mid, &u_mid, ub];

        // stage adjoints, last stage first
        for j in 0..adim {
            v[3][j] = B[3] * lambda[j];
        }
        jt_v(model, &stages[3], stage_u[3], &v[3], &mut jtv[3]);
        for i in (0..3).rev() {
            let a = if i == 2 { 1.0 } else { 0.5 };
            for j in 0..adim {
                v[i][j] = B[i] * lambda[j] + h * a * jtv[i + 1][j];
            }
            jt_v(model, &stages[i], stage_u[i], &v[i], &mut jtv[i]);
        }

        for j in 0..adim {
            lambda[j] += h * (jtv[0][j] + jtv[1][j] + jtv[2][j] + jtv[3][j]);
        }

        add_ft_v(n, &stages[0], &v[0], h, &mut grad[k * n..(k + 1) * n]);
        add_ft_v(n, &stages[3], &v[3], h, &mut grad[(k + 1) * n..(k + 2) * n]);
        g_mid.iter_mut().for_each(|g| *g = 0.0);
        add_ft_v(n, &stages[1], &v[1], 0.5 * h, &mut g_mid);
        add_ft_v(n, &stages[2], &v[2], 0.5 * h, &mut g_mid);
        for j in 0..n {
            grad[k * n + j] += g_mid[j];
            grad[(k + 1) * n + j] += g_mid[j];
        }

        add_node_terms(k, &mut lambda, &mut grad, &mut nu_grad);
    }

    for k in 0..grid.nodes() {
        let w = grid.weight(k);
        for j in 0..n {
            grad[k * n + j] /= w;
        }
    }
    ControlTrajectory::from_values(grid, n, grad)
}
