//! Structure of computed controls: labeled intervals, switching times,
//! singular arcs and checks of the singular feedback law.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dynamics::ControlTrajectory;
use crate::error::{Error, Result};
use crate::model::{CostSpec, Scenario};
use crate::pmp::{feedback_singular_n1, CostateTrajectory};
use crate::solver::SolveReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Zero,
    Max,
    Singular,
    Interior,
}

impl Label {
    pub fn token(self) -> &'static str {
        match self {
            Label::Zero => "bang(0)",
            Label::Max => "bang(max)",
            Label::Singular => "singular",
            Label::Interior => "interior",
        }
    }

    pub fn is_bang(self) -> bool {
        matches!(self, Label::Zero | Label::Max)
    }
}

/// Nodes `k_a..=k_b` of one component; the interval in time runs from
/// `t_a` to `t_b`, where `t_b` is the start of the next interval (or `t_f`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledInterval {
    pub t_a: f64,
    pub t_b: f64,
    pub k_a: usize,
    pub k_b: usize,
    pub label: Label,
}

impl LabeledInterval {
    pub fn len_nodes(&self) -> usize {
        self.k_b - self.k_a + 1
    }

    pub fn duration(&self) -> f64 {
        self.t_b - self.t_a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlStructure {
    /// `components[i]` partitions `[0, t_f]` for control `u_i`.
    pub components: Vec<Vec<LabeledInterval>>,
    /// Sorted union of the interval boundaries of all components.
    pub switch_times: Vec<f64>,
    pub sequence_string: String,
}

impl ControlStructure {
    /// Sequence with the bang values dropped, e.g. `bang-singular-bang`.
    pub fn pattern(&self) -> String {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .map(|iv| if iv.label.is_bang() { "bang" } else { iv.label.token() })
                    .collect::<Vec<_>>()
                    .join("-")
            })
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn singular_intervals(&self, i: usize) -> Vec<&LabeledInterval> {
        self.components[i]
            .iter()
            .filter(|iv| iv.label == Label::Singular)
            .collect()
    }

    pub fn has_label(&self, label: Label) -> bool {
        self.components.iter().flatten().any(|iv| iv.label == label)
    }

    pub fn is_bang_bang(&self) -> bool {
        self.components.iter().flatten().all(|iv| iv.label.is_bang())
    }

    /// Total duration of intervals with `label` in component `i`.
    pub fn duration_of(&self, i: usize, label: Label) -> f64 {
        self.components[i]
            .iter()
            .filter(|iv| iv.label == label)
            .map(LabeledInterval::duration)
            .sum()
    }
}

impl fmt::Display for ControlStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, comp) in self.components.iter().enumerate() {
            writeln!(f, "u{}:", i + 1)?;
            for iv in comp {
                writeln!(f, "  [{:8.3}, {:8.3}]  {}", iv.t_a, iv.t_b, iv.label.token())?;
            }
        }
        write!(f, "sequence: {}", self.sequence_string)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StructureOptions {
    /// Bang tolerance relative to `u_bar_i`.
    pub tol_label_rel: f64,
    /// Singular band `|Psi_i - C_i| <= tol_sing_rel * C_i`.
    pub tol_sing_rel: f64,
    pub min_nodes: usize,
}

impl Default for StructureOptions {
    fn default() -> Self {
        StructureOptions {
            tol_label_rel: 1e-3,
            tol_sing_rel: 5e-2,
            min_nodes: 3,
        }
    }
}

fn runs(labels: &[Label]) -> Vec<(usize, usize, Label)> {
    let mut out: Vec<(usize, usize, Label)> = Vec::new();
    for (k, &l) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.2 == l => last.1 = k,
            _ => out.push((k, k, l)),
        }
    }
    out
}

/// Absorbs runs shorter than `min_nodes` into their longer neighbour,
/// shortest first, then merges equal neighbours.
fn absorb_short(mut rs: Vec<(usize, usize, Label)>, min_nodes: usize) -> Vec<(usize, usize, Label)> {
    loop {
        if rs.len() <= 1 {
            return rs;
        }
        let short = rs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.1 - r.0 + 1 < min_nodes)
            .min_by_key(|(j, r)| (r.1 - r.0, *j))
            .map(|(j, _)| j);
        let Some(j) = short else { return rs };
        let len = |r: &(usize, usize, Label)| r.1 - r.0 + 1;
        let target = match (j.checked_sub(1), rs.get(j + 1)) {
            (Some(p), Some(next)) => {
                if len(&rs[p]) >= len(next) {
                    p
                } else {
                    j + 1
                }
            }
            (Some(p), None) => p,
            (None, _) => j + 1,
        };
        let label = rs[target].2;
        rs[j].2 = label;
        let merged = runs_from(&rs);
        rs = merged;
    }
}

fn runs_from(rs: &[(usize, usize, Label)]) -> Vec<(usize, usize, Label)> {
    let mut out: Vec<(usize, usize, Label)> = Vec::new();
    for &r in rs {
        match out.last_mut() {
            Some(last) if last.2 == r.2 => last.1 = r.1,
            _ => out.push(r),
        }
    }
    out
}

/// Per-node labels of component `i` before merging.
pub fn node_labels(
    u: &ControlTrajectory,
    u_bar: &[f64],
    costates: &CostateTrajectory,
    cost: &CostSpec,
    i: usize,
    options: &StructureOptions,
) -> Vec<Label> {
    let tol = options.tol_label_rel * u_bar[i];
    let c = cost.c[i];
    let linear = cost.is_linear(i);
    (0..u.grid.nodes())
        .map(|k| {
            let v = u.get(k, i);
            if v <= tol {
                Label::Zero
            } else if v >= u_bar[i] - tol {
                Label::Max
            } else if linear && (costates.psi_at(k)[i] - c).abs() <= options.tol_sing_rel * c {
                Label::Singular
            } else {
                Label::Interior
            }
        })
        .collect()
}

pub fn classify_structure(
    u: &ControlTrajectory,
    u_bar: &[f64],
    costates: &CostateTrajectory,
    cost: &CostSpec,
    options: &StructureOptions,
) -> ControlStructure {
    let grid = u.grid;
    let mut components = Vec::with_capacity(u.n);
    let mut switch_times = Vec::new();
    let mut seqs = Vec::with_capacity(u.n);
    for i in 0..u.n {
        let labels = node_labels(u, u_bar, costates, cost, i, options);
        let rs = absorb_short(runs(&labels), options.min_nodes);
        let intervals: Vec<LabeledInterval> = rs
            .iter()
            .enumerate()
            .map(|(j, &(k_a, k_b, label))| LabeledInterval {
                t_a: if j == 0 { 0.0 } else { grid.time(k_a) },
                t_b: if j + 1 == rs.len() { grid.t_f } else { grid.time(k_b + 1) },
                k_a,
                k_b,
                label,
            })
            .collect();
        switch_times.extend(intervals.iter().skip(1).map(|iv| iv.t_a));
        seqs.push(
            intervals
                .iter()
                .map(|iv| iv.label.token())
                .collect::<Vec<_>>()
                .join("-"),
        );
        components.push(intervals);
    }
    switch_times.sort_by(f64::total_cmp);
    switch_times.dedup();
    ControlStructure {
        components,
        switch_times,
        sequence_string: seqs.join("; "),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularArc {
    pub component: usize,
    pub k_a: usize,
    pub k_b: usize,
    pub t_a: f64,
    pub t_b: f64,
}

/// Maximal runs of at least `min_nodes` nodes with `|Psi_i - C_i| <= tol_sing_rel * C_i`
/// over the linear components.
pub fn detect_singular_arcs(
    costates: &CostateTrajectory,
    cost: &CostSpec,
    tol_sing_rel: f64,
    min_nodes: usize,
) -> Result<Vec<SingularArc>> {
    if !cost.any_linear() {
        return Err(Error::NoLinearComponents);
    }
    let grid = costates.grid;
    let mut arcs = Vec::new();
    for i in (0..costates.n).filter(|&i| cost.is_linear(i)) {
        let c = cost.c[i];
        let mut start = None;
        for k in 0..=grid.nodes() {
            let inside = k < grid.nodes() && (costates.psi_at(k)[i] - c).abs() <= tol_sing_rel * c;
            match (inside, start) {
                (true, None) => start = Some(k),
                (false, Some(k_a)) => {
                    if k - k_a >= min_nodes {
                        arcs.push(SingularArc {
                            component: i,
                            k_a,
                            k_b: k - 1,
                            t_a: grid.time(k_a),
                            t_b: grid.time(k - 1),
                        });
                    }
                    start = None;
                }
                _ => {}
            }
        }
    }
    Ok(arcs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArcDiagnostics {
    pub t_a: f64,
    pub t_b: f64,
    /// Max `|u - u_feedback|` over interior arc nodes.
    pub feedback_residual_max: f64,
    pub x_monotone_decreasing: bool,
    pub s_at_entry: f64,
    /// `gamma / beta_bar`.
    pub s_threshold: f64,
    /// Label of the interval preceding the arc, if any.
    pub entered_from: Option<Label>,
    pub discontinuity_jump_at_entry: f64,
    pub discontinuity_jump_at_exit: f64,
    pub nodes_checked: usize,
}

/// Checks the SIR feedback law, the decrease of `x` and the entry value of
/// `s` on the arc with nodes `k_a..=k_b` of component 0.
pub fn verify_singular_arc(
    scenario: &Scenario,
    report: &SolveReport,
    k_a: usize,
    k_b: usize,
) -> Result<ArcDiagnostics> {
    let model = &scenario.model;
    let cost = &scenario.cost;
    let Some(gamma) = model.sir_gamma() else {
        return Err(Error::NotApplicable("arc check needs n = 1 and rho = 0".into()));
    };
    let grid = report.u_opt.grid;
    if k_a > k_b || k_b >= grid.nodes() {
        return Err(Error::Config(format!("arc nodes {k_a}..={k_b} outside the grid")));
    }
    let traj = &report.traj;
    let u = &report.u_opt;
    if (k_a..=k_b).any(|k| cost.nu_hessian_diag(traj.x_at(k))[0] <= 0.0) {
        return Err(Error::NotApplicable("feedback law degenerates".into()));
    }

    let mut residual: f64 = 0.0;
    let mut checked = 0;
    let mut decreasing = true;
    for k in k_a + 1..k_b {
        let st = traj.node(k);
        let fb = feedback_singular_n1(model, cost, st.s, st.x[0], report.costates.eta[k])?;
        residual = residual.max((u.get(k, 0) - fb.clamped).abs());
        checked += 1;
        if traj.x_at(k + 1)[0] - traj.x_at(k)[0] >= 0.0 {
            decreasing = false;
        }
    }
    let entered_from = report.structure.components[0]
        .iter()
        .take_while(|iv| iv.k_b < k_a)
        .last()
        .map(|iv| iv.label);
    let jump = |a: usize, b: usize| (u.get(b, 0) - u.get(a, 0)).abs();
    Ok(ArcDiagnostics {
        t_a: grid.time(k_a),
        t_b: grid.time(k_b),
        feedback_residual_max: residual,
        x_monotone_decreasing: decreasing,
        s_at_entry: traj.s[k_a],
        s_threshold: gamma / model.beta_bar[0],
        entered_from,
        discontinuity_jump_at_entry: if k_a > 0 { jump(k_a - 1, k_a) } else { 0.0 },
        discontinuity_jump_at_exit: if k_b + 1 < grid.nodes() { jump(k_b, k_b + 1) } else { 0.0 },
        nodes_checked: checked,
    })
}

/// True iff every linear component vanishes on a terminal run of at least
/// `min_nodes` nodes with `Psi_i < C_i` there.
pub fn terminal_deactivation_check(
    u: &ControlTrajectory,
    costates: &CostateTrajectory,
    cost: &CostSpec,
    min_nodes: usize,
) -> bool {
    if !cost.any_linear() {
        return false;
    }
    let nodes = u.grid.nodes();
    if nodes < min_nodes {
        return false;
    }
    (0..u.n).filter(|&i| cost.is_linear(i)).all(|i| {
        (nodes - min_nodes..nodes).all(|k| u.get(k, i) == 0.0 && costates.psi_at(k)[i] < cost.c[i])
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub sequence_string: String,
    pub pattern: String,
    pub switch_times: Vec<f64>,
    pub intervals: Vec<Vec<LabeledInterval>>,
    pub singular_arcs: Vec<SingularArc>,
    pub arc_diagnostics: Vec<ArcDiagnostics>,
    /// Reasons arc diagnostics were skipped.
    pub arc_notes: Vec<String>,
    pub terminal_deactivation: Option<bool>,
}

pub fn structure_report(scenario: &Scenario, report: &SolveReport) -> StructureReport {
    let cost = &scenario.cost;
    let options = StructureOptions::default();
    let structure = &report.structure;
    let singular_arcs =
        detect_singular_arcs(&report.costates, cost, options.tol_sing_rel, options.min_nodes).unwrap_or_default();
    let mut arc_diagnostics = Vec::new();
    let mut arc_notes = Vec::new();
    for iv in structure.components.iter().flatten().filter(|iv| iv.label == Label::Singular) {
        match verify_singular_arc(scenario, report, iv.k_a, iv.k_b) {
            Ok(d) => arc_diagnostics.push(d),
            Err(e) => arc_notes.push(format!("arc [{}, {}]: {e}", iv.t_a, iv.t_b)),
        }
    }
    let terminal_deactivation = cost
        .any_linear()
        .then(|| terminal_deactivation_check(&report.u_opt, &report.costates, cost, options.min_nodes));
    StructureReport {
        sequence_string: structure.sequence_string.clone(),
        pattern: structure.pattern(),
        switch_times: structure.switch_times.clone(),
        intervals: structure.components.clone(),
        singular_arcs,
        arc_diagnostics,
        arc_notes,
        terminal_deactivation,
    }
}

impl fmt::Display for StructureReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "structure: {}", self.sequence_string)?;
        if !self.switch_times.is_empty() {
            let ts: Vec<String> = self.switch_times.iter().map(|t| format!("{t:.2}")).collect();
            writeln!(f, "switch times: {}", ts.join(", "))?;
        }
        for d in &self.arc_diagnostics {
            writeln!(
                f,
                "singular arc [{:.2}, {:.2}]: feedback residual {:.3e}, x decreasing {}, s at entry {:.4} (gamma/beta {:.4})",
                d.t_a, d.t_b, d.feedback_residual_max, d.x_monotone_decreasing, d.s_at_entry, d.s_threshold
            )?;
        }
        for note in &self.arc_notes {
            writeln!(f, "{note}")?;
        }
        if let Some(td) = self.terminal_deactivation {
            writeln!(f, "terminal deactivation: {td}")?;
        }
        Ok(())
    }
}
