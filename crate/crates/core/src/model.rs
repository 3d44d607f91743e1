//! Epidemic model coefficients, initial data, cost specification and presets.
//!
//! The state is `(s, x, r)` with `x` the vector of exposed/infected
//! compartments; deceased `d` is bookkeeping only. Transmission happens
//! through `s (beta_bar - u) . x` and all new infections enter `x[0]`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance on the closed-population identity.
pub const CLOSED_POPULATION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpidemicModel {
    pub n: usize,
    /// Transition rates, row-major, `m[i][j]` is the flow from `x_j` into `x_i`.
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: f64,
    pub beta_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub s0: f64,
    pub x0: Vec<f64>,
    pub r0: f64,
}

/// Running cost `nu(x) + sum_i C_i u_i^{q_i}` with `nu(x) = sum_i w_i x_i^{rexp_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub w: Vec<f64>,
    pub rexp: Vec<f64>,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub t_f: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub model: EpidemicModel,
    pub init: InitialState,
    pub cost: CostSpec,
    pub horizon: Horizon,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }

    fn extend(&mut self, other: ValidationReport) {
        self.violations.extend(other.violations);
    }

    pub fn into_result(self) -> Result<()> {
        if self.ok() {
            Ok(())
        } else {
            Err(Error::Validation(self.to_string()))
        }
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.ok() {
            return write!(f, "ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join("; "))
    }
}

/// Rounds to six significant digits so residuals print as `-0.01`
/// rather than `-0.009999999999999995`.
fn tidy(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    let mag = v.abs().log10().floor() as i32;
    let scale = 10f64.powi(5 - mag);
    (v * scale).round() / scale
}

fn in_unit(v: f64) -> bool {
    (0.0..=1.0).contains(&v)
}

pub fn validate_model(model: &EpidemicModel) -> ValidationReport {
    let mut report = ValidationReport::default();
    let n = model.n;
    if n == 0 {
        report.push("n", "must be positive");
        return report;
    }
    let mut shapes_ok = true;
    for (name, len) in [
        ("sigma", model.sigma.len()),
        ("mu", model.mu.len()),
        ("beta_bar", model.beta_bar.len()),
        ("u_bar", model.u_bar.len()),
    ] {
        if len != n {
            report.push(name, format!("length {len} does not match n = {n}"));
            shapes_ok = false;
        }
    }
    if model.m.len() != n || model.m.iter().any(|row| row.len() != n) {
        report.push("M", format!("must be {n}x{n}"));
        shapes_ok = false;
    }
    if !shapes_ok {
        return report;
    }

    for i in 0..n {
        for j in 0..n {
            let v = model.m[i][j];
            if !v.is_finite() {
                report.push("M", format!("entry ({}, {}) is not finite", i + 1, j + 1));
                continue;
            }
            if j > i && v != 0.0 {
                report.push(
                    "M",
                    format!("not lower triangular: entry ({}, {}) = {}", i + 1, j + 1, v),
                );
            }
            if i != j && v < 0.0 {
                report.push(
                    "M",
                    format!("not quasimonotone: off-diagonal entry ({}, {}) = {}", i + 1, j + 1, v),
                );
            }
            if v.abs() > 1.0 {
                report.push("M", format!("|entry ({}, {})| = {} exceeds 1", i + 1, j + 1, v.abs()));
            }
        }
    }
    for (name, values) in [("sigma", &model.sigma), ("mu", &model.mu)] {
        for (i, &v) in values.iter().enumerate() {
            if !in_unit(v) {
                report.push(name, format!("entry {} = {} outside [0,1]", i + 1, v));
            }
        }
    }
    if !in_unit(model.rho) {
        report.push("rho", format!("{} outside [0,1]", model.rho));
    }
    for h in 0..n {
        let residual: f64 =
            (0..n).map(|i| model.m[i][h]).sum::<f64>() + model.sigma[h] + model.mu[h];
        if !(residual.abs() <= CLOSED_POPULATION_TOL) {
            report.push(
                "M",
                format!("closed-population residual {} in column {}", tidy(residual), h + 1),
            );
        }
    }
    for i in 0..n {
        let b = model.beta_bar[i];
        if !(b > 0.0 && b < 1.0) {
            report.push("beta_bar", format!("entry {} = {} outside (0,1)", i + 1, b));
        }
        let ub = model.u_bar[i];
        if !(ub > 0.0 && ub <= b) {
            report.push(
                "u_bar",
                format!("entry {} = {} outside (0, beta_bar = {}]", i + 1, ub, b),
            );
        }
    }
    report
}

pub fn validate_init(init: &InitialState, n: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    if init.x0.len() != n {
        report.push("x0", format!("length {} does not match n = {}", init.x0.len(), n));
        return report;
    }
    if !in_unit(init.s0) {
        report.push("s0", format!("{} outside [0,1]", init.s0));
    }
    if !in_unit(init.r0) {
        report.push("r0", format!("{} outside [0,1]", init.r0));
    }
    for (i, &v) in init.x0.iter().enumerate() {
        if !in_unit(v) {
            report.push("x0", format!("entry {} = {} outside [0,1]", i + 1, v));
        }
    }
    let total = init.s0 + init.x0.iter().sum::<f64>() + init.r0;
    if total > 1.0 {
        report.push("init", format!("total exceeds 1 ({})", tidy(total)));
    }
    if n > 0 && !(init.x0[0] > 0.0) {
        report.push("x0", "x0[1] must be strictly positive");
    }
    report
}

pub fn validate_cost(cost: &CostSpec, n: usize) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut shapes_ok = true;
    for (name, len) in [
        ("w", cost.w.len()),
        ("rexp", cost.rexp.len()),
        ("C", cost.c.len()),
        ("q", cost.q.len()),
    ] {
        if len != n {
            report.push(format!("cost.{name}"), format!("length {len} does not match n = {n}"));
            shapes_ok = false;
        }
    }
    if !shapes_ok {
        return report;
    }
    for i in 0..n {
        if !(cost.w[i] >= 0.0 && cost.w[i].is_finite()) {
            report.push("cost.w", format!("entry {} = {} must be >= 0", i + 1, cost.w[i]));
        }
        if cost.rexp[i] != 1.0 && cost.rexp[i] != 2.0 {
            report.push("cost.rexp", format!("entry {} = {} not in {{1,2}}", i + 1, cost.rexp[i]));
        }
        if !(cost.c[i] > 0.0 && cost.c[i].is_finite()) {
            report.push("cost.C", format!("entry {} = {} must be > 0", i + 1, cost.c[i]));
        }
        if !(1.0..=2.0).contains(&cost.q[i]) {
            report.push("cost.q", format!("q out of [1,2]: entry {} = {}", i + 1, cost.q[i]));
        }
    }
    report
}

pub fn validate_scenario(scenario: &Scenario) -> ValidationReport {
    let mut report = validate_model(&scenario.model);
    let n = scenario.model.n;
    report.extend(validate_init(&scenario.init, n));
    report.extend(validate_cost(&scenario.cost, n));
    let h = scenario.horizon;
    if !(h.t_f > 0.0 && h.t_f.is_finite()) {
        report.push("horizon.t_f", format!("{} must be > 0", h.t_f));
    }
    if h.grid_points < 2 {
        report.push("horizon.grid_points", format!("{} must be >= 2", h.grid_points));
    }
    report
}

impl CostSpec {
    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// State part of the running cost.
    pub fn nu(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(self.w.iter().zip(&self.rexp))
            .map(|(&xi, (&w, &e))| if e == 1.0 { w * xi } else { w * xi * xi })
            .sum()
    }

    pub fn nu_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.nu_gradient_into(x, &mut out);
        out
    }

    pub fn nu_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = if self.rexp[i] == 1.0 {
                self.w[i]
            } else {
                2.0 * self.w[i] * x[i]
            };
        }
    }

    /// Diagonal of the Hessian of `nu`; zero for linear components.
    pub fn nu_hessian_diag(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| if self.rexp[i] == 1.0 { 0.0 } else { 2.0 * self.w[i] })
            .collect()
    }

    /// `sum_i C_i u_i^{q_i}`.
    pub fn control_cost(&self, u: &[f64]) -> f64 {
        u.iter()
            .enumerate()
            .map(|(i, &ui)| self.c[i] * control_power(ui, self.q[i]))
            .sum()
    }

    /// Derivative of the control cost with respect to `u_i`.
    pub fn control_cost_derivative(&self, i: usize, ui: f64) -> f64 {
        let q = self.q[i];
        if q == 1.0 {
            self.c[i]
        } else if q == 2.0 {
            2.0 * self.c[i] * ui
        } else if ui <= 0.0 {
            0.0
        } else {
            q * self.c[i] * ui.powf(q - 1.0)
        }
    }

    pub fn running_cost(&self, x: &[f64], u: &[f64]) -> f64 {
        self.nu(x) + self.control_cost(u)
    }

    pub fn is_linear(&self, i: usize) -> bool {
        self.q[i] == 1.0
    }

    pub fn all_superlinear(&self) -> bool {
        self.q.iter().all(|&q| q > 1.0)
    }

    pub fn any_linear(&self) -> bool {
        self.q.contains(&1.0)
    }

    /// `nu` nondecreasing in every component.
    pub fn nu_nondecreasing(&self) -> bool {
        self.w.iter().all(|&w| w >= 0.0)
    }
}

fn control_power(u: f64, q: f64) -> f64 {
    if q == 1.0 {
        u
    } else if q == 2.0 {
        u * u
    } else if u <= 0.0 {
        0.0
    } else {
        u.powf(q)
    }
}

pub fn eval_nu(cost: &CostSpec, x: &[f64]) -> f64 {
    cost.nu(x)
}

pub fn grad_nu(cost: &CostSpec, x: &[f64]) -> Vec<f64> {
    cost.nu_gradient(x)
}

pub fn hess_nu_diag(cost: &CostSpec, x: &[f64]) -> Vec<f64> {
    cost.nu_hessian_diag(x)
}

impl EpidemicModel {
    /// `gamma` of an SIR-type model: `-M[0][0]`.
    pub fn sir_gamma(&self) -> Option<f64> {
        (self.n == 1 && self.rho == 0.0).then(|| -self.m[0][0])
    }
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.model.n
    }

    pub fn validate(&self) -> ValidationReport {
        validate_scenario(self)
    }

    pub fn step(&self) -> f64 {
        self.horizon.t_f / self.horizon.grid_points as f64
    }

    /// Copy with a different uniform grid resolution.
    pub fn with_grid(&self, grid_points: usize) -> Scenario {
        let mut s = self.clone();
        s.horizon.grid_points = grid_points;
        s
    }

    /// Copy with a different horizon, keeping the step size.
    pub fn with_horizon(&self, t_f: f64) -> Scenario {
        let mut s = self.clone();
        let h = self.step();
        s.horizon.t_f = t_f;
        s.horizon.grid_points = ((t_f / h).round() as usize).max(2);
        s
    }

    pub fn with_u_bar(&self, u_bar: Vec<f64>) -> Scenario {
        let mut s = self.clone();
        s.model.u_bar = u_bar;
        s
    }
}

// ---------------------------------------------------------------------------
// Presets
// ---------------------------------------------------------------------------

pub const PRESET_NAMES: [&str; 11] = [
    "sir_paper_qq_008",
    "sir_paper_qq_004",
    "sir_paper_ql_01",
    "sir_paper_ql_008",
    "sir_paper_ll_01",
    "sirs",
    "seir",
    "seirs",
    "covid_n5",
    "covid_n3",
    "influenza_n3",
];

const SIR_BETA: f64 = 0.16;
const SIR_GAMMA: f64 = 0.06;
const SIR_T_F: f64 = 360.0;
const DEFAULT_GRID: usize = 3600;

/// Stand-in for transmission rates the source models set to zero; the
/// validated control set needs `beta_bar_i > 0`.
const NEAR_ZERO_BETA: f64 = 1e-3;

/// One-line description of a preset, including whether its rates are
/// placeholders.
pub fn preset_description(name: &str) -> Option<&'static str> {
    Some(match name {
        "sir_paper_qq_008" => "SIR, cost x^2 + u^2, u_bar = 0.08",
        "sir_paper_qq_004" => "SIR, cost x^2 + u^2, u_bar = 0.04",
        "sir_paper_ql_01" => "SIR, cost 30 x^2 + u, u_bar = 0.1",
        "sir_paper_ql_008" => "SIR, cost 30 x^2 + u, u_bar = 0.08",
        "sir_paper_ll_01" => "SIR, cost 2 x + u, u_bar = 0.1",
        "sirs" => "SIRS (placeholder immunity loss rho = 1/180), cost x^2 + u^2",
        "seir" => "SEIR (placeholder rates), cost |x|^2 + |u|^2",
        "seirs" => "SEIRS (placeholder rates), cost |x|^2 + |u|^2",
        "covid_n5" => "COVID-19 n=5 (I,D,A,R,T) structure, placeholder rates",
        "covid_n3" => "COVID-19 n=3 (e,a,i) structure, placeholder rates",
        "influenza_n3" => "influenza n=3 (e,i,a) structure, placeholder rates",
        _ => return None,
    })
}

fn base_sir(u_bar: f64, w: f64, rexp: f64, q: f64) -> Scenario {
    Scenario {
        model: EpidemicModel {
            n: 1,
            m: vec![vec![-SIR_GAMMA]],
            sigma: vec![SIR_GAMMA],
            mu: vec![0.0],
            rho: 0.0,
            beta_bar: vec![SIR_BETA],
            u_bar: vec![u_bar],
        },
        init: InitialState {
            s0: 0.999,
            x0: vec![0.001],
            r0: 0.0,
        },
        cost: CostSpec {
            w: vec![w],
            rexp: vec![rexp],
            c: vec![1.0],
            q: vec![q],
        },
        horizon: Horizon {
            t_f: SIR_T_F,
            grid_points: DEFAULT_GRID,
        },
    }
}

fn quadratic_cost(n: usize) -> CostSpec {
    CostSpec {
        w: vec![1.0; n],
        rexp: vec![2.0; n],
        c: vec![1.0; n],
        q: vec![2.0; n],
    }
}

fn literature(
    m: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    mu: Vec<f64>,
    rho: f64,
    beta_bar: Vec<f64>,
) -> Scenario {
    let n = m.len();
    let u_bar = beta_bar.iter().map(|b| b / 2.0).collect();
    let mut x0 = vec![0.0; n];
    x0[0] = 0.001;
    Scenario {
        model: EpidemicModel {
            n,
            m,
            sigma,
            mu,
            rho,
            beta_bar,
            u_bar,
        },
        init: InitialState {
            s0: 0.999,
            x0,
            r0: 0.0,
        },
        cost: quadratic_cost(n),
        horizon: Horizon {
            t_f: SIR_T_F,
            grid_points: DEFAULT_GRID,
        },
    }
}

fn seir_like(rho: f64) -> Scenario {
    // latency 5 days, infectious period ~16.7 days
    let (a, g) = (0.2, SIR_GAMMA);
    literature(
        vec![vec![-a, 0.0], vec![a, -g]],
        vec![0.0, g],
        vec![0.0, 0.0],
        rho,
        vec![NEAR_ZERO_BETA, SIR_BETA],
    )
}

pub fn preset(name: &str) -> Result<Scenario> {
    let scenario = match name {
        "sir_paper_qq_008" => base_sir(0.08, 1.0, 2.0, 2.0),
        "sir_paper_qq_004" => base_sir(0.04, 1.0, 2.0, 2.0),
        "sir_paper_ql_01" => base_sir(0.1, 30.0, 2.0, 1.0),
        "sir_paper_ql_008" => base_sir(0.08, 30.0, 2.0, 1.0),
        "sir_paper_ll_01" => base_sir(0.1, 2.0, 1.0, 1.0),
        "sirs" => {
            let mut s = base_sir(0.08, 1.0, 2.0, 2.0);
            s.model.rho = 1.0 / 180.0;
            s
        }
        "seir" => seir_like(0.0),
        "seirs" => seir_like(1.0 / 180.0),
        "covid_n5" => {
            // x = (I, D, A, R, T); symbols eps, zeta, lambda, eta, rho, theta,
            // mu, kappa, nu, xi, sigma, tau of the source model.
            let (eps, zeta, lambda) = (0.1, 0.1, 0.05);
            let (eta, rho_d) = (0.05, 0.05);
            let (theta, mu_a, kappa) = (0.1, 0.02, 0.05);
            let (nu, xi) = (0.03, 0.05);
            let (sigma_t, tau) = (0.05, 0.01);
            literature(
                vec![
                    vec![-(eps + zeta + lambda), 0.0, 0.0, 0.0, 0.0],
                    vec![eps, -(eta + rho_d), 0.0, 0.0, 0.0],
                    vec![zeta, 0.0, -(theta + mu_a + kappa), 0.0, 0.0],
                    vec![0.0, eta, theta, -(nu + xi), 0.0],
                    vec![0.0, 0.0, mu_a, nu, -(sigma_t + tau)],
                ],
                vec![lambda, rho_d, kappa, xi, sigma_t],
                vec![0.0, 0.0, 0.0, 0.0, tau],
                0.0,
                // alpha, beta, gamma, delta, and T does not transmit
                vec![0.3, 0.02, 0.3, 0.02, NEAR_ZERO_BETA],
            )
        }
        "covid_n3" => {
            // x = (e, a, i)
            let t_latent_inv = 0.2;
            let (kappa, rho_a) = (0.1, 0.1);
            let (beta_rec, mu_i) = (0.07, 0.01);
            literature(
                vec![
                    vec![-t_latent_inv, 0.0, 0.0],
                    vec![t_latent_inv, -(kappa + rho_a), 0.0],
                    vec![0.0, kappa, -(beta_rec + mu_i)],
                ],
                vec![0.0, rho_a, beta_rec],
                vec![0.0, 0.0, mu_i],
                1.0 / 180.0,
                vec![NEAR_ZERO_BETA, 0.1, 0.2],
            )
        }
        "influenza_n3" => {
            // x = (e, i, a); infected recover at (1-f) alpha and die at f alpha
            let (kappa, p, alpha, f, eta) = (0.5, 0.67, 0.25, 0.02, 0.25);
            literature(
                vec![
                    vec![-kappa, 0.0, 0.0],
                    vec![p * kappa, -alpha, 0.0],
                    vec![(1.0 - p) * kappa, 0.0, -eta],
                ],
                vec![0.0, (1.0 - f) * alpha, eta],
                vec![0.0, f * alpha, 0.0],
                0.0,
                vec![0.05, 0.5, 0.25],
            )
        }
        other => return Err(Error::UnknownPreset(other.to_string())),
    };
    Ok(scenario)
}
