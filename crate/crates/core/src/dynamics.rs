//! Forward simulation of the controlled state system on a uniform grid.
//!
//! Classical RK4 with the control interpolated linearly between nodes, so
//! both half-step stages see `(u_k + u_{k+1}) / 2`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpidemicModel, Scenario};

/// Undershoot below zero tolerated before a state counts as invalid.
pub const UNDERSHOOT_TOL: f64 = 1e-9;

/// Uniform grid of `intervals + 1` nodes on `[0, t_f]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_f: f64,
    pub intervals: usize,
}

impl Grid {
    pub fn new(t_f: f64, intervals: usize) -> Self {
        Grid { t_f, intervals }
    }

    pub fn of(scenario: &Scenario) -> Self {
        Grid::new(scenario.horizon.t_f, scenario.horizon.grid_points)
    }

    pub fn nodes(&self) -> usize {
        self.intervals + 1
    }

    pub fn step(&self) -> f64 {
        self.t_f / self.intervals as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.intervals {
            self.t_f
        } else {
            k as f64 * self.step()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.nodes()).map(|k| self.time(k)).collect()
    }

    /// Trapezoid weight of node `k`.
    pub fn weight(&self, k: usize) -> f64 {
        let h = self.step();
        if k == 0 || k == self.intervals {
            0.5 * h
        } else {
            h
        }
    }

    pub fn refined(&self, factor: usize) -> Grid {
        Grid::new(self.t_f, self.intervals * factor)
    }

    pub fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.intervals != other.intervals || self.t_f != other.t_f {
            return Err(Error::GridMismatch(format!(
                "{what}: expected {} intervals on [0, {}], got {} on [0, {}]",
                self.intervals, self.t_f, other.intervals, other.t_f
            )));
        }
        Ok(())
    }
}

/// Node values of a piecewise-linear control, row-major `(N+1) x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    pub grid: Grid,
    pub n: usize,
    values: Vec<f64>,
}

impl ControlTrajectory {
    pub fn from_values(grid: Grid, n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.nodes() * n {
            return Err(Error::GridMismatch(format!(
                "control has {} values, grid needs {} x {}",
                values.len(),
                grid.nodes(),
                n
            )));
        }
        Ok(ControlTrajectory { grid, n, values })
    }

    pub fn constant(grid: Grid, level: &[f64]) -> Self {
        let values = (0..grid.nodes()).flat_map(|_| level.iter().copied()).collect();
        ControlTrajectory {
            grid,
            n: level.len(),
            values,
        }
    }

    pub fn zeros(grid: Grid, n: usize) -> Self {
        ControlTrajectory::constant(grid, &vec![0.0; n])
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn at_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.n..(k + 1) * self.n]
    }

    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n + i]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Time series of component `i`.
    pub fn component(&self, i: usize) -> Vec<f64> {
        (0..self.grid.nodes()).map(|k| self.get(k, i)).collect()
    }

    /// Linear interpolation at `t`.
    pub fn interpolate(&self, t: f64, out: &mut [f64]) {
        let h = self.grid.step();
        let pos = (t / h).clamp(0.0, self.grid.intervals as f64);
        let k = (pos.floor() as usize).min(self.grid.intervals.saturating_sub(1));
        let theta = pos - k as f64;
        for i in 0..self.n {
            out[i] = (1.0 - theta) * self.get(k, i) + theta * self.get(k + 1, i);
        }
    }

    /// Resample onto a grid refined by `factor` (exact for piecewise-linear controls).
    pub fn refine(&self, factor: usize) -> ControlTrajectory {
        let fine = self.grid.refined(factor);
        let mut values = Vec::with_capacity(fine.nodes() * self.n);
        for k in 0..fine.nodes() {
            let coarse = k / factor;
            let rem = k % factor;
            if rem == 0 {
                values.extend_from_slice(self.at(coarse));
            } else {
                let theta = rem as f64 / factor as f64;
                for i in 0..self.n {
                    values.push((1.0 - theta) * self.get(coarse, i) + theta * self.get(coarse + 1, i));
                }
            }
        }
        ControlTrajectory {
            grid: fine,
            n: self.n,
            values,
        }
    }

    pub fn is_admissible(&self, u_bar: &[f64]) -> bool {
        (0..self.grid.nodes()).all(|k| {
            self.at(k)
                .iter()
                .zip(u_bar)
                .all(|(&u, &ub)| (0.0..=ub).contains(&u))
        })
    }

    /// Componentwise projection onto `[0, u_bar]`.
    pub fn project(&mut self, u_bar: &[f64]) {
        let n = self.n;
        for (idx, v) in self.values.iter_mut().enumerate() {
            *v = v.clamp(0.0, u_bar[idx % n]);
        }
    }

    pub fn max_abs_diff(&self, other: &ControlTrajectory) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("t");
        for i in 1..=self.n {
            header.push_str(&format!(",u{i}"));
        }
        writeln!(w, "{header}")?;
        for k in 0..self.grid.nodes() {
            let mut line = fmt_f64(self.grid.time(k));
            for &v in self.at(k) {
                line.push(',');
                line.push_str(&fmt_f64(v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Full-precision (17 significant digits) CSV number.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Node values of `(s, x, r, d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: Grid,
    pub n: usize,
    pub s: Vec<f64>,
    x: Vec<f64>,
    pub r: Vec<f64>,
    pub d: Vec<f64>,
}

impl Trajectory {
    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.n..(k + 1) * self.n]
    }

    pub fn x_component(&self, i: usize) -> Vec<f64> {
        (0..self.grid.nodes()).map(|k| self.x_at(k)[i]).collect()
    }

    pub fn total_infected(&self, k: usize) -> f64 {
        self.x_at(k).iter().sum()
    }

    pub fn total_population(&self, k: usize) -> f64 {
        self.s[k] + self.total_infected(k) + self.r[k] + self.d[k]
    }

    /// Largest node deviation of the total population from 1.
    pub fn mass_defect(&self) -> f64 {
        (0..self.grid.nodes())
            .map(|k| (self.total_population(k) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_state(&self) -> f64 {
        self.s
            .iter()
            .chain(&self.x)
            .chain(&self.r)
            .chain(&self.d)
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// Reduced state `(s, x, r)` at node `k`, written into `out` (length n + 2).
    pub fn state_at(&self, k: usize, out: &mut [f64]) {
        out[0] = self.s[k];
        out[1..=self.n].copy_from_slice(self.x_at(k));
        out[self.n + 1] = self.r[k];
    }

    /// Keep every `factor`-th node.
    pub fn restrict(&self, factor: usize) -> Trajectory {
        let coarse = Grid::new(self.grid.t_f, self.grid.intervals / factor);
        let pick = |v: &Vec<f64>| -> Vec<f64> { v.iter().step_by(factor).copied().collect() };
        let mut x = Vec::with_capacity(coarse.nodes() * self.n);
        for k in (0..self.grid.nodes()).step_by(factor) {
            x.extend_from_slice(self.x_at(k));
        }
        Trajectory {
            grid: coarse,
            n: self.n,
            s: pick(&self.s),
            x,
            r: pick(&self.r),
            d: pick(&self.d),
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let mut header = String::from("t,s");
        for i in 1..=self.n {
            header.push_str(&format!(",x{i}"));
        }
        header.push_str(",r,d");
        writeln!(w, "{header}")?;
        for k in 0..self.grid.nodes() {
            let mut fields = vec![fmt_f64(self.grid.time(k)), fmt_f64(self.s[k])];
            fields.extend(self.x_at(k).iter().map(|&v| fmt_f64(v)));
            fields.push(fmt_f64(self.r[k]));
            fields.push(fmt_f64(self.d[k]));
            writeln!(w, "{}", fields.join(","))?;
        }
        Ok(())
    }
}

/// Right-hand side of `(s, x, r, d)` at control `u`; `y` and `dy` have length n + 3.
pub(crate) fn state_rhs(model: &EpidemicModel, y: &[f64], u: &[f64], dy: &mut [f64]) {
    let n = model.n;
    let s = y[0];
    let x = &y[1..=n];
    let r = y[n + 1];
    let force: f64 = (0..n).map(|j| (model.beta_bar[j] - u[j]) * x[j]).sum();
    let infection = s * force;
    dy[0] = -infection + model.rho * r;
    for i in 0..n {
        let mut acc = 0.0;
        for (j, &xj) in x.iter().enumerate().take(i + 1) {
            acc += model.m[i][j] * xj;
        }
        dy[1 + i] = acc;
    }
    dy[1] += infection;
    let recovered: f64 = (0..n).map(|j| model.sigma[j] * x[j]).sum();
    let deceased: f64 = (0..n).map(|j| model.mu[j] * x[j]).sum();
    dy[n + 1] = recovered - model.rho * r;
    dy[n + 2] = deceased;
}

/// One classical RK4 step of the full state with stage controls
/// `u_start`, `u_mid`, `u_mid`, `u_end`.
pub(crate) struct Rk4Workspace {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Workspace {
    pub(crate) fn new(dim: usize) -> Self {
        Rk4Workspace {
            k: [vec![0.0; dim], vec![0.0; dim], vec![0.0; dim], vec![0.0; dim]],
            tmp: vec![0.0; dim],
        }
    }

    pub(crate) fn step(
        &mut self,
        model: &EpidemicModel,
        h: f64,
        y: &mut [f64],
        u_start: &[f64],
        u_mid: &[f64],
        u_end: &[f64],
    ) {
        let dim = y.len();
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        state_rhs(model, y, u_start, k1);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k1[j];
        }
        state_rhs(model, tmp, u_mid, k2);
        for j in 0..dim {
            tmp[j] = y[j] + 0.5 * h * k2[j];
        }
        state_rhs(model, tmp, u_mid, k3);
        for j in 0..dim {
            tmp[j] = y[j] + h * k3[j];
        }
        state_rhs(model, tmp, u_end, k4);
        for j in 0..dim {
            y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
}

pub fn simulate_forward(scenario: &Scenario, u: &ControlTrajectory) -> Result<Trajectory> {
    let grid = Grid::of(scenario);
    grid.ensure_same(&u.grid, "control")?;
    integrate(&scenario.model, scenario, u)
}

/// Simulation on a grid refined by `refine`; returns every fine node.
pub fn simulate_dense(
    scenario: &Scenario,
    u: &ControlTrajectory,
    refine: usize,
) -> Result<Trajectory> {
    if refine == 0 {
        return Err(Error::Config("refine must be >= 1".into()));
    }
    let grid = Grid::of(scenario);
    grid.ensure_same(&u.grid, "control")?;
    if refine == 1 {
        return integrate(&scenario.model, scenario, u);
    }
    let fine = scenario.with_grid(scenario.horizon.grid_points * refine);
    integrate(&scenario.model, &fine, &u.refine(refine))
}

fn integrate(model: &EpidemicModel, scenario: &Scenario, u: &ControlTrajectory) -> Result<Trajectory> {
    let grid = Grid::of(scenario);
    let n = model.n;
    if u.n != n {
        return Err(Error::GridMismatch(format!(
            "control has {} components, model has {}",
            u.n, n
        )));
    }
    let nodes = grid.nodes();
    let h = grid.step();
    let init = &scenario.init;
    let mut y = vec![0.0; n + 3];
    y[0] = init.s0;
    y[1..=n].copy_from_slice(&init.x0);
    y[n + 1] = init.r0;
    y[n + 2] = 1.0 - (init.s0 + init.x0.iter().sum::<f64>() + init.r0);

    let mut traj = Trajectory {
        grid,
        n,
        s: Vec::with_capacity(nodes),
        x: Vec::with_capacity(nodes * n),
        r: Vec::with_capacity(nodes),
        d: Vec::with_capacity(nodes),
    };
    let push = |traj: &mut Trajectory, y: &[f64]| {
        traj.s.push(y[0]);
        traj.x.extend_from_slice(&y[1..=n]);
        traj.r.push(y[n + 1]);
        traj.d.push(y[n + 2]);
    };
    push(&mut traj, &y);

    let mut ws = Rk4Workspace::new(n + 3);
    let mut u_mid = vec![0.0; n];
    for k in 0..grid.intervals {
        let (ua, ub) = (u.at(k), u.at(k + 1));
        for i in 0..n {
            u_mid[i] = 0.5 * (ua[i] + ub[i]);
        }
        ws.step(model, h, &mut y, ua, &u_mid, ub);
        if let Some(bad) = y.iter().position(|v| !v.is_finite() || *v < -UNDERSHOOT_TOL) {
            return Err(Error::NonFiniteState {
                t: grid.time(k + 1),
                what: format!("component {} = {}", bad, y[bad]),
            });
        }
        push(&mut traj, &y);
    }
    Ok(traj)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicMetrics {
    pub peak_infected: f64,
    pub peak_time: f64,
    pub final_susceptible: f64,
    pub total_deceased: f64,
}

pub fn epidemic_metrics(traj: &Trajectory) -> EpidemicMetrics {
    let nodes = traj.grid.nodes();
    let mut peak_k = 0;
    let mut peak = traj.total_infected(0);
    for k in 1..nodes {
        let v = traj.total_infected(k);
        if v > peak {
            peak = v;
            peak_k = k;
        }
    }
    EpidemicMetrics {
        peak_infected: peak,
        peak_time: traj.grid.time(peak_k),
        final_susceptible: traj.s[nodes - 1],
        total_deceased: traj.d[nodes - 1] - traj.d[0],
    }
}
