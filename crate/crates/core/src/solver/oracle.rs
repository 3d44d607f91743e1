use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dynamics::{simulate_forward, ControlTrajectory, Grid, Rk4Workspace};
use crate::error::{Error, Result};
use crate::model::Scenario;

use super::{cost_evaluate, solve_fbsm_from, SolverConfig};

/// Upper bound on `pieces * levels^(pieces * n)`.
pub const ORACLE_GUARD: f64 = 1e7;

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best_u: ControlTrajectory,
    pub best_cost: f64,
    /// Level index per piece and component, `best_levels[p][i]`.
    pub best_levels: Vec<Vec<usize>>,
    pub evaluated: usize,
}

/// Node `k` belongs to piece `p` when `b_p < k <= b_{p+1}`; node 0 belongs
/// to piece 0.
fn piece_bounds(intervals: usize, pieces: usize) -> Vec<usize> {
    (0..=pieces).map(|p| p * intervals / pieces).collect()
}

struct Search<'a> {
    scenario: &'a Scenario,
    grid: Grid,
    bounds: Vec<usize>,
    levels: usize,
    values: Vec<Vec<f64>>,
    choice: Vec<usize>,
    best: Option<(f64, Vec<usize>)>,
    evaluated: usize,
    ws: Rk4Workspace,
}

impl Search<'_> {
    fn level_vector(&self, piece: usize) -> Vec<f64> {
        let n = self.scenario.n();
        (0..n)
            .map(|i| self.values[i][self.choice[piece * n + i]])
            .collect()
    }

    /// Enumerates level vectors for `piece` given the state at its left
    /// boundary and the cost accumulated over earlier nodes.
    fn descend(&mut self, piece: usize, y: &[f64], acc: f64) {
        let n = self.scenario.n();
        let pieces = self.bounds.len() - 1;
        let combos = self.levels.pow(n as u32);
        for code in 0..combos {
            let mut c = code;
            for i in 0..n {
                self.choice[piece * n + i] = c % self.levels;
                c /= self.levels;
            }
            let here = self.level_vector(piece);
            let before = if piece == 0 { here.clone() } else { self.level_vector(piece - 1) };
            let mut state = y.to_vec();
            let mut total = acc;
            let cost = &self.scenario.cost;
            if piece == 0 {
                total += self.grid.weight(0) * cost.running_cost(&state[1..=n], &here);
            }
            let mut failed = false;
            let h = self.grid.step();
            for k in self.bounds[piece]..self.bounds[piece + 1] {
                let ua = if k == self.bounds[piece] { &before } else { &here };
                let mid: Vec<f64> = ua.iter().zip(&here).map(|(a, b)| 0.5 * (a + b)).collect();
                self.ws.step(&self.scenario.model, h, &mut state, ua, &mid, &here);
                if state.iter().any(|v| !v.is_finite()) {
                    failed = true;
                    break;
                }
                total += self.grid.weight(k + 1) * cost.running_cost(&state[1..=n], &here);
            }
            if failed {
                continue;
            }
            if piece + 1 == pieces {
                self.evaluated += 1;
                if self.best.as_ref().is_none_or(|(b, _)| total < *b) {
                    self.best = Some((total, self.choice.clone()));
                }
            } else {
                self.descend(piece + 1, &state, total);
            }
        }
    }
}

/// Exhaustive search over controls constant on `pieces` equal subintervals
/// with each component on `levels` uniformly spaced values in `[0, u_bar_i]`.
///
/// States are cached at piece boundaries so each prefix is integrated once.
/// The reported cost is recomputed with `simulate_forward` and
/// `cost_evaluate` on the winning control.
pub fn brute_force_oracle(scenario: &Scenario, pieces: usize, levels: usize) -> Result<OracleResult> {
    scenario.validate().into_result()?;
    let n = scenario.n();
    let grid = Grid::of(scenario);
    if pieces == 0 || levels == 0 || pieces > grid.intervals {
        return Err(Error::Config(format!(
            "oracle needs 1 <= pieces <= {} and levels >= 1",
            grid.intervals
        )));
    }
    let size = pieces as f64 * (levels as f64).powi((pieces * n) as i32);
    if size > ORACLE_GUARD {
        return Err(Error::SearchSpaceTooLarge(size));
    }
    let values: Vec<Vec<f64>> = scenario
        .model
        .u_bar
        .iter()
        .map(|&ub| {
            (0..levels)
                .map(|l| if levels == 1 { 0.0 } else { ub * l as f64 / (levels - 1) as f64 })
                .collect()
        })
        .collect();

    let init = &scenario.init;
    let mut y0 = vec![0.0; n + 3];
    y0[0] = init.s0;
    y0[1..=n].copy_from_slice(&init.x0);
    y0[n + 1] = init.r0;
    y0[n + 2] = 1.0 - (init.s0 + init.x0.iter().sum::<f64>() + init.r0);

    let mut search = Search {
        scenario,
        grid,
        bounds: piece_bounds(grid.intervals, pieces),
        levels,
        values,
        choice: vec![0; pieces * n],
        best: None,
        evaluated: 0,
        ws: Rk4Workspace::new(n + 3),
    };
    search.descend(0, &y0, 0.0);
    let evaluated = search.evaluated;
    let (_, choice) = search
        .best
        .ok_or_else(|| Error::NotApplicable("every candidate control diverged".into()))?;

    let bounds = piece_bounds(grid.intervals, pieces);
    let mut best_u = ControlTrajectory::zeros(grid, n);
    for p in 0..pieces {
        let lo = if p == 0 { 0 } else { bounds[p] + 1 };
        for k in lo..=bounds[p + 1] {
            for i in 0..n {
                best_u.at_mut(k)[i] = search.values[i][choice[p * n + i]];
            }
        }
    }
    let traj = simulate_forward(scenario, &best_u)?;
    let best_cost = cost_evaluate(scenario, &traj, &best_u)?;
    let best_levels = choice.chunks(n).map(|c| c.to_vec()).collect();
    Ok(OracleResult {
        best_u,
        best_cost,
        best_levels,
        evaluated,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub max_pairwise_u_gap: f64,
    pub t_f: f64,
    pub n_starts: usize,
    pub all_converged: bool,
    pub costs: Vec<f64>,
}

/// FBSM from `n_starts` random admissible controls on the horizon
/// `t_f_short`, with the default configuration and a fixed seed.
pub fn uniqueness_probe(scenario: &Scenario, n_starts: usize, t_f_short: f64) -> Result<UniquenessReport> {
    uniqueness_probe_with(scenario, &SolverConfig::default(), n_starts, t_f_short, 0x5eed)
}

pub fn uniqueness_probe_with(
    scenario: &Scenario,
    config: &SolverConfig,
    n_starts: usize,
    t_f_short: f64,
    seed: u64,
) -> Result<UniquenessReport> {
    let short = scenario.with_horizon(t_f_short);
    let grid = Grid::of(&short);
    let n = short.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut controls = Vec::with_capacity(n_starts);
    let mut costs = Vec::with_capacity(n_starts);
    let mut all_converged = true;
    for _ in 0..n_starts {
        let values = (0..grid.nodes() * n)
            .map(|idx| rng.gen::<f64>() * short.model.u_bar[idx % n])
            .collect();
        let start = ControlTrajectory::from_values(grid, n, values)?;
        let report = solve_fbsm_from(&short, config, start)?;
        all_converged &= report.converged;
        costs.push(report.cost_value);
        controls.push(report.u_opt);
    }
    let mut gap: f64 = 0.0;
    for a in 0..controls.len() {
        for b in a + 1..controls.len() {
            gap = gap.max(controls[a].max_abs_diff(&controls[b]));
        }
    }
    Ok(UniquenessReport {
        max_pairwise_u_gap: gap,
        t_f: short.horizon.t_f,
        n_starts,
        all_converged,
        costs,
    })
}
