//! Optimal-control solvers: forward-backward sweep for superlinear costs,
//! projected gradient with smoothing continuation for any exponent, and a
//! brute-force oracle over piecewise-constant controls.

mod discrete;
mod oracle;

pub use discrete::discrete_gradient;
pub use oracle::{brute_force_oracle, uniqueness_probe, OracleResult, UniquenessReport, ORACLE_GUARD};

use serde::{Deserialize, Serialize};

use crate::analysis::{classify_structure, ControlStructure, StructureOptions};
use crate::dynamics::{simulate_forward, ControlTrajectory, Grid, Trajectory};
use crate::error::{Error, Result};
use crate::model::Scenario;
use crate::pmp::{
    control_superlinear_into, hamiltonian_constant_check, integrate_adjoint, CostateTrajectory,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Fbsm,
    ProjectedGradient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub method: Method,
    pub max_iters: usize,
    /// Relative L1 stopping threshold.
    pub tol_rel: f64,
    /// Sweep relaxation.
    pub omega: f64,
    /// Initial projected-gradient step.
    pub step0: f64,
    pub armijo_c: f64,
    pub armijo_shrink: f64,
    /// Quadratic smoothing weights for the continuation, ending at 0.
    pub smoothing_eps_schedule: Vec<f64>,
    /// Weight of the second-difference term in the projected-gradient
    /// metric, in days squared. Zero gives the plain gradient.
    pub metric_scale: f64,
    /// Constant starting controls for projected gradient, as fractions of `u_bar`.
    pub pg_starts: Vec<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: Method::Fbsm,
            max_iters: 5000,
            tol_rel: 1e-6,
            omega: 0.5,
            step0: 1.0,
            armijo_c: 1e-4,
            armijo_shrink: 0.5,
            smoothing_eps_schedule: vec![1e-2, 1e-3, 1e-4, 0.0],
            metric_scale: 10.0,
            pg_starts: vec![0.0, 0.5],
        }
    }
}

impl SolverConfig {
    pub fn projected_gradient() -> Self {
        SolverConfig {
            method: Method::ProjectedGradient,
            max_iters: 20_000,
            tol_rel: 1e-8,
            ..SolverConfig::default()
        }
    }

    /// Sweep for all-superlinear costs, projected gradient otherwise.
    pub fn for_scenario(scenario: &Scenario) -> Self {
        if scenario.cost.all_superlinear() {
            SolverConfig::default()
        } else {
            SolverConfig::projected_gradient()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.tol_rel > 0.0) {
            return bad("tol_rel must be positive");
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return bad("omega must lie in (0, 1]");
        }
        if !(self.step0 > 0.0) {
            return bad("step0 must be positive");
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return bad("armijo_c must lie in (0, 1)");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("armijo_shrink must lie in (0, 1)");
        }
        if !(self.metric_scale >= 0.0 && self.metric_scale.is_finite()) {
            return bad("metric_scale must be finite and nonnegative");
        }
        if self.pg_starts.is_empty() || self.pg_starts.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("pg_starts must be a nonempty list of fractions in [0, 1]");
        }
        let sched = &self.smoothing_eps_schedule;
        if sched.is_empty() || *sched.last().unwrap() != 0.0 {
            return bad("smoothing schedule must end at 0");
        }
        if sched.windows(2).any(|w| !(w[0] > w[1])) || sched.iter().any(|&e| e < 0.0) {
            return bad("smoothing schedule must be strictly decreasing and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub method: Method,
    pub u_opt: ControlTrajectory,
    pub traj: Trajectory,
    pub costates: CostateTrajectory,
    pub cost_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub residual_history: Vec<f64>,
    /// `(eps, cost)` after each accepted iterate, cost including the
    /// smoothing term.
    pub cost_history: Vec<(f64, f64)>,
    pub hamiltonian_deviation: f64,
    pub hamiltonian_constant: f64,
    pub structure: ControlStructure,
}

/// Trapezoid quadrature of `nu(x) + sum C_i u_i^{q_i}`.
pub fn cost_evaluate(scenario: &Scenario, traj: &Trajectory, u: &ControlTrajectory) -> Result<f64> {
    regularized_cost(scenario, traj, u, 0.0)
}

fn regularized_cost(
    scenario: &Scenario,
    traj: &Trajectory,
    u: &ControlTrajectory,
    eps: f64,
) -> Result<f64> {
    let grid = Grid::of(scenario);
    grid.ensure_same(&traj.grid, "trajectory")?;
    grid.ensure_same(&u.grid, "control")?;
    let cost = &scenario.cost;
    let total = (0..grid.nodes())
        .map(|k| {
            let uk = u.at(k);
            let mut f = cost.running_cost(traj.x_at(k), uk);
            if eps > 0.0 {
                f += eps * uk.iter().map(|v| v * v).sum::<f64>();
            }
            grid.weight(k) * f
        })
        .sum();
    Ok(total)
}

/// `dH/du`: `q_i C_i u_i^{q_i - 1} - Psi_i` at every node.
pub fn gradient(
    scenario: &Scenario,
    traj: &Trajectory,
    costates: &CostateTrajectory,
    u: &ControlTrajectory,
) -> Result<ControlTrajectory> {
    let grid = Grid::of(scenario);
    grid.ensure_same(&traj.grid, "trajectory")?;
    grid.ensure_same(&costates.grid, "costates")?;
    grid.ensure_same(&u.grid, "control")?;
    let n = scenario.n();
    let mut values = Vec::with_capacity(grid.nodes() * n);
    for k in 0..grid.nodes() {
        let psi = costates.psi_at(k);
        for (i, &ui) in u.at(k).iter().enumerate() {
            values.push(scenario.cost.control_cost_derivative(i, ui) - psi[i]);
        }
    }
    ControlTrajectory::from_values(grid, n, values)
}

/// Trapezoid inner product of two node fields.
pub fn trapezoid_dot(a: &ControlTrajectory, b: &ControlTrajectory) -> f64 {
    let grid = a.grid;
    (0..grid.nodes())
        .map(|k| grid.weight(k) * a.at(k).iter().zip(b.at(k)).map(|(x, y)| x * y).sum::<f64>())
        .sum()
}

fn l1(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum()
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

const L1_FLOOR: f64 = 1e-12;

/// Cost and everything derived from a control.
fn evaluate(scenario: &Scenario, u: &ControlTrajectory, eps: f64) -> Result<(Trajectory, f64)> {
    let traj = simulate_forward(scenario, u)?;
    let j = regularized_cost(scenario, &traj, u, eps)?;
    Ok((traj, j))
}

impl SolveReport {
    /// Simulates, integrates the costates and classifies `u`.
    pub fn from_control(
        scenario: &Scenario,
        method: Method,
        u: ControlTrajectory,
        iterations: usize,
        converged: bool,
        residual_history: Vec<f64>,
    ) -> Result<SolveReport> {
        let traj = simulate_forward(scenario, &u)?;
        let costates = integrate_adjoint(scenario, &traj, &u)?;
        let cost_value = cost_evaluate(scenario, &traj, &u)?;
        let check = hamiltonian_constant_check(scenario, &traj, &u, &costates);
        let structure = classify_structure(
            &u,
            &scenario.model.u_bar,
            &costates,
            &scenario.cost,
            &StructureOptions::default(),
        );
        Ok(SolveReport {
            method,
            u_opt: u,
            traj,
            costates,
            cost_value,
            iterations,
            converged,
            residual_history,
            cost_history: Vec::new(),
            hamiltonian_deviation: check.max_deviation,
            hamiltonian_constant: check.k_expected,
            structure,
        })
    }
}

pub fn solve(scenario: &Scenario, config: &SolverConfig) -> Result<SolveReport> {
    match config.method {
        Method::Fbsm => solve_fbsm(scenario, config),
        Method::ProjectedGradient => solve_projected_gradient(scenario, config),
    }
}

pub fn solve_fbsm(scenario: &Scenario, config: &SolverConfig) -> Result<SolveReport> {
    let grid = Grid::of(scenario);
    solve_fbsm_from(scenario, config, ControlTrajectory::zeros(grid, scenario.n()))
}

/// Forward-backward sweep from a given initial control.
///
/// Each iteration relaxes towards the pointwise minimizer of the
/// Hamiltonian, halving the relaxation (at most 10 times) while the cost
/// increases. Stops when the relative L1 fixed-point residual
/// `|u* - u| / |u|` drops below `tol_rel`; the returned control is then the
/// characterized control of the final state and costates.
pub fn solve_fbsm_from(
    scenario: &Scenario,
    config: &SolverConfig,
    initial: ControlTrajectory,
) -> Result<SolveReport> {
    config.validate()?;
    scenario.validate().into_result()?;
    if scenario.cost.q.iter().any(|&q| q <= 1.0) {
        return Err(Error::LinearCostUnsupported);
    }
    let grid = Grid::of(scenario);
    grid.ensure_same(&initial.grid, "initial control")?;
    let u_bar = &scenario.model.u_bar;
    let cost = &scenario.cost;

    let mut u = initial;
    u.project(u_bar);
    let (mut traj, mut j_cur) = evaluate(scenario, &u, 0.0)?;
    let mut u_star = u.clone();
    let mut history = Vec::new();
    let mut costs = vec![(0.0, j_cur)];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < config.max_iters {
        iterations += 1;
        let costates = integrate_adjoint(scenario, &traj, &u)?;
        for k in 0..grid.nodes() {
            let st = traj.node(k);
            control_superlinear_into(cost, costates.eta[k], st.s, st.x, u_bar, u_star.at_mut(k))?;
        }
        let residual = l1_diff(u_star.values(), u.values()) / l1(u.values()).max(L1_FLOOR);
        history.push(residual);
        if residual <= config.tol_rel {
            converged = true;
            u = u_star;
            break;
        }

        let mut omega = config.omega;
        let mut accepted = None;
        for _ in 0..=10 {
            let mut trial = u.clone();
            for (t, (&a, &b)) in trial
                .values_mut()
                .iter_mut()
                .zip(u.values().iter().zip(u_star.values()))
            {
                *t = (1.0 - omega) * a + omega * b;
            }
            let (t_traj, j_trial) = evaluate(scenario, &trial, 0.0)?;
            // differences at rounding level count as no increase
            let better = j_trial <= j_cur + COST_NOISE * j_cur.abs();
            accepted = Some((trial, t_traj, j_trial));
            if better {
                break;
            }
            omega *= 0.5;
        }
        let (trial, t_traj, j_trial) = accepted.expect("at least one trial");
        u = trial;
        traj = t_traj;
        j_cur = j_trial;
        costs.push((0.0, j_cur));
    }

    let mut report = SolveReport::from_control(scenario, Method::Fbsm, u, iterations, converged, history)?;
    report.cost_history = costs;
    Ok(report)
}

/// Scaled projected gradient on the discretized problem with Armijo
/// backtracking.
///
/// For each smoothing weight `eps` of the schedule the cost gets an extra
/// `eps * sum u_i^2` running term; each stage is warm-started from the
/// previous one and the final stage (`eps = 0`) is the original problem.
///
/// One run is made from each constant start `f * u_bar` in `pg_starts`
/// and the lowest final cost wins.
pub fn solve_projected_gradient(scenario: &Scenario, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    let grid = Grid::of(scenario);
    let mut best: Option<SolveReport> = None;
    for &f in &config.pg_starts {
        let level: Vec<f64> = scenario.model.u_bar.iter().map(|ub| f * ub).collect();
        let report = solve_projected_gradient_from(scenario, config, ControlTrajectory::constant(grid, &level))?;
        if best.as_ref().is_none_or(|b| report.cost_value < b.cost_value) {
            best = Some(report);
        }
    }
    Ok(best.expect("pg_starts is nonempty"))
}

/// Single projected-gradient run from `initial`.
///
/// On free nodes the search direction is `g - b D2 g` (second difference
/// per free run, reflecting ends, `b = metric_scale`), the gradient
/// itself on nodes held at a bound. Steps follow the Barzilai-Borwein rule
/// in that metric and are shrunk until the Armijo condition holds on the
/// discrete cost, so the cost never increases within a stage. If the
/// scaled direction fails to descend the plain gradient is tried. A stage
/// stops once the relative L1 change of u stays at or below `tol_rel` for
/// three accepted steps in a row.
pub fn solve_projected_gradient_from(
    scenario: &Scenario,
    config: &SolverConfig,
    initial: ControlTrajectory,
) -> Result<SolveReport> {
    config.validate()?;
    scenario.validate().into_result()?;
    let grid = Grid::of(scenario);
    grid.ensure_same(&initial.grid, "initial control")?;

    let mut u = initial;
    u.project(&scenario.model.u_bar);
    let mut history = Vec::new();
    let mut costs = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    for &eps in &config.smoothing_eps_schedule {
        let mut stage = Stage {
            history: &mut history,
            costs: &mut costs,
            iterations: &mut iterations,
        };
        converged = pg_stage(scenario, config, &mut u, eps, &mut stage)?;
    }
    let mut report =
        SolveReport::from_control(scenario, Method::ProjectedGradient, u, iterations, converged, history)?;
    report.cost_history = costs;
    Ok(report)
}

const ACTIVE_TOL: f64 = 1e-9;
const COST_NOISE: f64 = 1e-14;
const QUIET_STEPS: usize = 3;
const MIN_STEP: f64 = 1e-12;
const MAX_STEP: f64 = 1e12;

fn diff(a: &ControlTrajectory, b: &ControlTrajectory) -> ControlTrajectory {
    let mut out = a.clone();
    for (o, &v) in out.values_mut().iter_mut().zip(b.values()) {
        *o -= v;
    }
    out
}

/// Whether node `k` of component `i` may move along `-g`.
fn is_free(u: &ControlTrajectory, g: &ControlTrajectory, u_bar: &[f64], k: usize, i: usize) -> bool {
    let (uk, gk) = (u.get(k, i), g.get(k, i));
    !((uk <= ACTIVE_TOL * u_bar[i] && gk > 0.0) || (uk >= (1.0 - ACTIVE_TOL) * u_bar[i] && gk < 0.0))
}

/// Applies the scaled metric to `v` on the free set of `(u, g)` and zeroes
/// it elsewhere when `mask` is set.
fn scale_direction(
    u: &ControlTrajectory,
    g: &ControlTrajectory,
    v: &ControlTrajectory,
    u_bar: &[f64],
    b: f64,
    mask: bool,
) -> ControlTrajectory {
    let mut p = v.clone();
    let nodes = u.grid.nodes();
    let h = u.grid.step();
    let coef = b / (h * h);
    for i in 0..u.n {
        let mut k = 0;
        while k < nodes {
            if !is_free(u, g, u_bar, k, i) {
                if mask {
                    p.at_mut(k)[i] = 0.0;
                }
                k += 1;
                continue;
            }
            let start = k;
            while k < nodes && is_free(u, g, u_bar, k, i) {
                k += 1;
            }
            if b == 0.0 {
                continue;
            }
            for j in start..k {
                let vj = v.get(j, i);
                let vl = if j > start { v.get(j - 1, i) } else { vj };
                let vr = if j + 1 < k { v.get(j + 1, i) } else { vj };
                p.at_mut(j)[i] = vj + coef * (2.0 * vj - vl - vr);
            }
        }
    }
    p
}

struct Stage<'a> {
    history: &'a mut Vec<f64>,
    costs: &'a mut Vec<(f64, f64)>,
    iterations: &'a mut usize,
}

/// Runs one smoothing stage; returns whether it met the stopping rule.
fn pg_stage(
    scenario: &Scenario,
    config: &SolverConfig,
    u: &mut ControlTrajectory,
    eps: f64,
    log: &mut Stage<'_>,
) -> Result<bool> {
    let u_bar = &scenario.model.u_bar;
    let b = config.metric_scale;
    let (traj, mut j_cur) = evaluate(scenario, u, eps)?;
    log.costs.push((eps, j_cur));
    let mut g = discrete_gradient(scenario, &traj, u, eps)?;
    let mut prev: Option<(ControlTrajectory, ControlTrajectory)> = None;
    let mut quiet = 0;
    let mut last_alpha = config.step0;
    while *log.iterations < config.max_iters {
        *log.iterations += 1;
        let p = scale_direction(u, &g, &g, u_bar, b, false);
        let step = match &prev {
            Some((u_old, g_old)) => {
                // Curvature along the free set only; bound nodes do not move.
                let y = scale_direction(u, &g, &diff(&g, g_old), u_bar, 0.0, true);
                let sy = trapezoid_dot(&diff(u, u_old), &y);
                let yy = trapezoid_dot(&y, &scale_direction(u, &g, &y, u_bar, b, true));
                if sy > 0.0 && yy > 0.0 {
                    (sy / yy).clamp(MIN_STEP, MAX_STEP)
                } else {
                    // Nonpositive curvature: grow the last accepted step.
                    (10.0 * last_alpha).min(MAX_STEP)
                }
            }
            None => config.step0,
        };

        let mut accepted = None;
        'directions: for dir in [&p, &g] {
            let mut alpha = step;
            for _ in 0..60 {
                let mut trial = u.clone();
                for (t, &dv) in trial.values_mut().iter_mut().zip(dir.values()) {
                    *t -= alpha * dv;
                }
                trial.project(u_bar);
                let slope = trapezoid_dot(&g, &diff(&trial, u));
                if slope >= 0.0 {
                    continue 'directions;
                }
                let (t_traj, j_trial) = evaluate(scenario, &trial, eps)?;
                if j_trial <= j_cur + config.armijo_c * slope {
                    last_alpha = alpha;
                    accepted = Some((trial, t_traj, j_trial));
                    break 'directions;
                }
                alpha *= config.armijo_shrink;
            }
        }
        let Some((trial, t_traj, j_trial)) = accepted else {
            // No descent along either direction: stationary to working precision.
            log.history.push(0.0);
            return Ok(true);
        };

        let change = l1_diff(trial.values(), u.values()) / l1(u.values()).max(L1_FLOOR);
        log.history.push(change);
        let g_new = discrete_gradient(scenario, &t_traj, &trial, eps)?;
        prev = Some((std::mem::replace(u, trial), std::mem::replace(&mut g, g_new)));
        j_cur = j_trial;
        log.costs.push((eps, j_cur));
        if change <= config.tol_rel {
            quiet += 1;
            if quiet >= QUIET_STEPS {
                return Ok(true);
            }
        } else {
            quiet = 0;
        }
    }
    Ok(false)
}
