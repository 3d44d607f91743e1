//! Command-line front end.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::analysis::structure_report;
use crate::dynamics::{epidemic_metrics, simulate_forward, ControlTrajectory, Grid};
use crate::error::{Error, Result};
use crate::io::{load_scenario, parse_scenario, read_control_csv, save_scenario, RunManifest};
use crate::model::{preset, preset_description, Scenario, PRESET_NAMES};
use crate::pmp::{integrate_adjoint, write_costates_csv};
use crate::solver::{solve, Method, SolveReport, SolverConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "epicon", version, about = "Optimal control of compartmental epidemic models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Forward simulation under a given control
    Simulate(SimulateArgs),
    /// Optimal control solve
    Solve(SolveArgs),
    /// Re-run the structure analysis on a solve output directory
    Analyze(AnalyzeArgs),
    /// List built-in scenarios
    Presets,
    /// Check a scenario file
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct SourceArgs {
    /// Built-in scenario name
    #[arg(long, conflicts_with = "scenario")]
    pub preset: Option<String>,
    /// Scenario JSON file
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Number of grid intervals
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// `zero`, `max`, a constant level, or a control CSV file
    #[arg(long, default_value = "zero")]
    pub control: String,
    #[arg(long, env = "EPICON_OUT", default_value = "epicon_out")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fbsm,
    Pg,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Built-in scenario name; repeat or pass `all` for several
    #[arg(long, conflicts_with = "scenario")]
    pub preset: Vec<String>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub grid: Option<usize>,
    /// Defaults to fbsm for superlinear costs and pg otherwise
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Concurrent solves when several presets are given
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, env = "EPICON_OUT", default_value = "epicon_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory written by `solve`
    pub dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, conflicts_with = "scenario")]
    pub preset: Option<String>,
    #[arg(long)]
    pub scenario: Option<PathBuf>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_IO,
        Error::Validation(_)
        | Error::Parse(_)
        | Error::Config(_)
        | Error::UnknownPreset(_)
        | Error::GridMismatch(_)
        | Error::LinearCostUnsupported
        | Error::SearchSpaceTooLarge(_) => EXIT_VALIDATION,
        _ => EXIT_NOT_CONVERGED,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Presets => {
            for name in PRESET_NAMES {
                println!("{name:<18} {}", preset_description(name).unwrap_or(""));
            }
            Ok(EXIT_OK)
        }
        Command::Validate(a) => cmd_validate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Solve(a) => cmd_solve(a),
        Command::Analyze(a) => cmd_analyze(a),
    }
}

fn cmd_validate(a: ValidateArgs) -> Result<i32> {
    let (scenario, label) = match (&a.preset, &a.scenario) {
        (Some(p), _) => (preset(p)?, format!("preset {p}")),
        (None, Some(path)) => (parse_scenario(&fs::read_to_string(path)?)?, path.display().to_string()),
        (None, None) => return Err(Error::Config("give --preset or --scenario".into())),
    };
    let report = scenario.validate();
    if report.ok() {
        println!("{label}: ok");
        Ok(EXIT_OK)
    } else {
        for v in &report.violations {
            eprintln!("{label}: {v}");
        }
        Ok(EXIT_VALIDATION)
    }
}

fn resolve(preset_name: Option<&str>, scenario: Option<&Path>, grid: Option<usize>) -> Result<(Scenario, String)> {
    let (mut sc, source) = match (preset_name, scenario) {
        (Some(p), _) => (preset(p)?, format!("preset:{p}")),
        (None, Some(path)) => (load_scenario(path)?, path.display().to_string()),
        (None, None) => return Err(Error::Config("give --preset or --scenario".into())),
    };
    if let Some(g) = grid {
        if g == 0 {
            return Err(Error::Config("--grid must be positive".into()));
        }
        sc = sc.with_grid(g);
    }
    sc.validate().into_result()?;
    Ok((sc, source))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
{
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    f(&mut w)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("json serializes");
    fs::write(dir.join(name), text + "\n")?;
    Ok(())
}

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn cmd_simulate(a: SimulateArgs) -> Result<i32> {
    let (sc, source) = resolve(a.source.preset.as_deref(), a.source.scenario.as_deref(), a.source.grid)?;
    let grid = Grid::of(&sc);
    let n = sc.n();
    let u = match a.control.as_str() {
        "zero" => ControlTrajectory::zeros(grid, n),
        "max" => ControlTrajectory::constant(grid, &sc.model.u_bar),
        other => match other.parse::<f64>() {
            Ok(level) => ControlTrajectory::constant(grid, &vec![level; n]),
            Err(_) => read_control_csv(Path::new(other), grid, n)?,
        },
    };
    if !u.is_admissible(&sc.model.u_bar) {
        return Err(Error::Validation("control leaves [0, u_bar]".into()));
    }
    let traj = simulate_forward(&sc, &u)?;
    let costates = integrate_adjoint(&sc, &traj, &u)?;
    let cost = crate::solver::cost_evaluate(&sc, &traj, &u)?;
    let dir = &a.out;
    fs::create_dir_all(dir)?;
    write_with(dir, "trajectory.csv", |w| traj.write_csv(w))?;
    write_with(dir, "control.csv", |w| u.write_csv(w))?;
    write_with(dir, "costates.csv", |w| write_costates_csv(w, &sc, &traj, &u, &costates))?;
    save_scenario(&dir.join("scenario.json"), &sc)?;
    let metrics = epidemic_metrics(&traj);
    let report = json!({
        "command": "simulate",
        "source": source,
        "control": a.control,
        "cost_value": cost,
        "mass_defect": traj.mass_defect(),
        "min_state": traj.min_state(),
        "metrics": metrics,
        "files": file_refs(),
        "timestamp": timestamp(),
    });
    write_json(dir, "report.json", &report)?;
    let manifest = RunManifest::collect(source, "simulate", None, dir, &OUTPUT_FILES)?;
    manifest.write(&dir.join("manifest.json"))?;
    println!(
        "cost {:.6e}  peak infected {:.5} at t = {:.1}  mass defect {:.2e}",
        cost,
        metrics.peak_infected,
        metrics.peak_time,
        traj.mass_defect()
    );
    Ok(EXIT_OK)
}

const OUTPUT_FILES: [&str; 5] = [
    "trajectory.csv",
    "control.csv",
    "costates.csv",
    "scenario.json",
    "report.json",
];

fn file_refs() -> serde_json::Value {
    json!({
        "trajectory": "trajectory.csv",
        "control": "control.csv",
        "costates": "costates.csv",
        "scenario": "scenario.json",
    })
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Fbsm => "fbsm",
        Method::ProjectedGradient => "pg",
    }
}

/// Writes every artifact of a finished solve into `dir`.
pub fn write_solve_outputs(
    dir: &Path,
    scenario: &Scenario,
    source: &str,
    config: &SolverConfig,
    report: &SolveReport,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_with(dir, "trajectory.csv", |w| report.traj.write_csv(w))?;
    write_with(dir, "control.csv", |w| report.u_opt.write_csv(w))?;
    write_with(dir, "costates.csv", |w| {
        write_costates_csv(w, scenario, &report.traj, &report.u_opt, &report.costates)
    })?;
    save_scenario(&dir.join("scenario.json"), scenario)?;
    let structure = structure_report(scenario, report);
    let min_eta = report.costates.eta.iter().copied().fold(f64::INFINITY, f64::min);
    let doc = json!({
        "command": "solve",
        "source": source,
        "method": method_name(report.method),
        "converged": report.converged,
        "iterations": report.iterations,
        "final_residual": report.residual_history.last(),
        "cost_value": report.cost_value,
        "hamiltonian_constant": report.hamiltonian_constant,
        "hamiltonian_deviation": report.hamiltonian_deviation,
        "min_eta": min_eta,
        "metrics": epidemic_metrics(&report.traj),
        "structure": structure,
        "config": config,
        "files": file_refs(),
        "timestamp": timestamp(),
    });
    write_json(dir, "report.json", &doc)?;
    let manifest = RunManifest::collect(
        source.to_string(),
        "solve",
        Some(serde_json::to_value(config).expect("config serializes")),
        dir,
        &OUTPUT_FILES,
    )?;
    manifest.write(&dir.join("manifest.json"))
}

fn cmd_solve(a: SolveArgs) -> Result<i32> {
    let mut names: Vec<String> = Vec::new();
    for p in &a.preset {
        if p == "all" {
            names.extend(PRESET_NAMES.iter().map(|s| s.to_string()));
        } else {
            names.push(p.clone());
        }
    }
    let jobs: Vec<(Option<String>, PathBuf)> = if names.is_empty() {
        vec![(None, a.out.clone())]
    } else if names.len() == 1 {
        vec![(Some(names[0].clone()), a.out.clone())]
    } else {
        names.iter().map(|n| (Some(n.clone()), a.out.join(n))).collect()
    };
    // resolve everything up front so bad input fails before any solve
    let mut work = Vec::with_capacity(jobs.len());
    for (name, dir) in jobs {
        let (sc, source) = resolve(name.as_deref(), a.scenario.as_deref(), a.grid)?;
        let mut config = match a.method {
            Some(MethodArg::Fbsm) => SolverConfig::default(),
            Some(MethodArg::Pg) => SolverConfig::projected_gradient(),
            None => SolverConfig::for_scenario(&sc),
        };
        if let Some(t) = a.tol {
            config.tol_rel = t;
        }
        if let Some(m) = a.max_iters {
            config.max_iters = m;
        }
        config.validate()?;
        work.push((sc, source, config, dir));
    }

    let next = AtomicUsize::new(0);
    let outcomes: Mutex<Vec<(usize, Result<bool>)>> = Mutex::new(Vec::new());
    let threads = a.jobs.clamp(1, work.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                let Some((sc, source, config, dir)) = work.get(idx) else { break };
                let outcome = solve(sc, config).and_then(|report| {
                    write_solve_outputs(dir, sc, source, config, &report)?;
                    println!(
                        "{source}: {} {} in {} iterations, cost {:.10e}, structure {}",
                        method_name(report.method),
                        if report.converged { "converged" } else { "did not converge" },
                        report.iterations,
                        report.cost_value,
                        report.structure.sequence_string
                    );
                    Ok(report.converged)
                });
                outcomes.lock().expect("lock").push((idx, outcome));
            });
        }
    });

    let mut outcomes = outcomes.into_inner().expect("lock");
    outcomes.sort_by_key(|(i, _)| *i);
    let mut code = EXIT_OK;
    for (idx, outcome) in outcomes {
        match outcome {
            Ok(true) => {}
            Ok(false) => code = code.max(EXIT_NOT_CONVERGED),
            Err(e) => {
                eprintln!("error: {}: {e}", work[idx].1);
                code = code.max(exit_code(&e));
            }
        }
    }
    Ok(code)
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<i32> {
    let dir = &a.dir;
    let sc = load_scenario(&dir.join("scenario.json"))?;
    let u = read_control_csv(&dir.join("control.csv"), Grid::of(&sc), sc.n())?;
    let report = SolveReport::from_control(&sc, Method::Fbsm, u, 0, true, Vec::new())?;
    let structure = structure_report(&sc, &report);
    write_json(
        dir,
        "structure.json",
        &serde_json::to_value(&structure).expect("structure serializes"),
    )?;
    print!("{structure}");
    println!(
        "cost {:.10e}  hamiltonian deviation {:.3e}",
        report.cost_value, report.hamiltonian_deviation
    );
    Ok(EXIT_OK)
}
