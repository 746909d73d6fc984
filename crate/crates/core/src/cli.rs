//! Scenario files, result emission and the command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::direct_mech::{misreport_gain, solve_m1, solve_m2, MechanismSolution};
use crate::dynamics::{self, OdeConfig, OdeState, OdeTrajectory};
use crate::error::{MechError, Result};
use crate::game::{
    check_uniqueness, default_samples, pseudo_gradient, solve_ne, GameState, NeSolveConfig,
};
use crate::iter_mech::{
    cheat_probe, default_lambda_init, run_fixed_incentives, run_mechanism, IterationConfig,
    LambdaProjection, Mechanism, StepRecord, Trajectory,
};
use crate::model::{
    validate_scenario, DesignerObjective, InfluenceMatrix, PlayerSpec, Scenario, Utility, X_MIN,
};
use crate::report::{Check, DiagnosticsReport, Verdict};

// ---------------------------------------------------------------------------
// Scenario files

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlayerFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    utility: Option<Utility>,
    beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ObjectiveFile {
    Welfare,
    LinearGlobal { gamma: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ScalarOrVec {
    Scalar(f64),
    Vec(Vec<f64>),
}

impl ScalarOrVec {
    fn expand(&self, n: usize, key: &str) -> Result<Vec<f64>> {
        match self {
            ScalarOrVec::Scalar(v) => Ok(vec![*v; n]),
            ScalarOrVec::Vec(v) if v.len() == n => Ok(v.clone()),
            ScalarOrVec::Vec(v) => Err(MechError::Load(format!(
                "{key} length {} != N = {n}",
                v.len()
            ))),
        }
    }

    fn compact(v: &[f64]) -> Self {
        match v.first() {
            Some(&first) if v.iter().all(|&x| x == first) => ScalarOrVec::Scalar(first),
            _ => ScalarOrVec::Vec(v.to_vec()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InitialFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x0: Option<ScalarOrVec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p0: Option<ScalarOrVec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    players: Vec<PlayerFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    influence: Option<Vec<Vec<f64>>>,
    objective: ObjectiveFile,
    budget: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    success_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial: Option<InitialFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    iteration: Option<IterationConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ode: Option<OdeConfig>,
}

/// Default initial investment and incentive when a file gives none.
pub const DEFAULT_X0: f64 = 0.5;
pub const DEFAULT_P0: f64 = 0.3;

/// A scenario plus the run settings stored alongside it.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioBundle {
    pub scenario: Scenario,
    pub x0: Vec<f64>,
    pub p0: Vec<f64>,
    pub iteration: IterationConfig,
    pub ode: OdeConfig,
}

/// The six-unit enterprise use case: `B = 3`, linear objective with weights
/// `gamma`, Log utilities with weights `alpha`, unit cost 3, start at
/// `x = 0.5`, `p = 0.3`, step sizes `kappa_d = 0.05`, `phi = 0.3`, success
/// threshold 2.5.
pub fn paper_scenario() -> ScenarioBundle {
    let alpha = [0.9, 0.7, 0.6, 0.8, 0.2, 0.4];
    let gamma = vec![0.8, 0.4, 0.5, 0.2, 0.3, 0.1];
    let mut scenario = Scenario::separable_log(
        &alpha,
        &[3.0; 6],
        DesignerObjective::LinearGlobal { gamma },
        3.0,
    );
    scenario.success_threshold = Some(2.5);
    ScenarioBundle {
        scenario,
        x0: vec![0.5; 6],
        p0: vec![0.3; 6],
        iteration: IterationConfig {
            kappa_d: 0.05,
            phi: 0.3,
            ..Default::default()
        },
        ode: OdeConfig::default(),
    }
}

fn parse_file(text: &str) -> Result<ScenarioFile> {
    serde_json::from_str(text).map_err(|e| MechError::Load(format!("parse error: {e}")))
}

fn bundle_from_file(f: ScenarioFile) -> Result<ScenarioBundle> {
    let players = f
        .players
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let utility = match (&p.alpha, &p.utility) {
                (Some(a), None) => Utility::log(*a),
                (None, Some(u)) => u.clone(),
                _ => {
                    return Err(MechError::Load(format!(
                        "players[{i}]: give exactly one of \"alpha\" or \"utility\""
                    )))
                }
            };
            Ok(PlayerSpec::new(utility, p.beta))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = players.len();
    let influence = match &f.influence {
        None => InfluenceMatrix::identity(n),
        Some(rows) => {
            if rows.len() != n {
                return Err(MechError::Load(format!(
                    "influence has {} rows, N = {n}",
                    rows.len()
                )));
            }
            InfluenceMatrix::from_rows(rows)
                .map_err(|e| MechError::Load(format!("influence: {e}")))?
        }
    };
    let objective = match f.objective {
        ObjectiveFile::Welfare => DesignerObjective::Welfare,
        ObjectiveFile::LinearGlobal { gamma } => {
            if gamma.len() != n {
                return Err(MechError::Load(format!(
                    "gamma length {} \u{2260} N = {n}",
                    gamma.len()
                )));
            }
            DesignerObjective::LinearGlobal { gamma }
        }
    };
    let initial = f.initial.unwrap_or(InitialFile { x0: None, p0: None });
    let x0 = initial
        .x0
        .unwrap_or(ScalarOrVec::Scalar(DEFAULT_X0))
        .expand(n, "initial.x0")?;
    let p0 = initial
        .p0
        .unwrap_or(ScalarOrVec::Scalar(DEFAULT_P0))
        .expand(n, "initial.p0")?;
    let iteration = f.iteration.unwrap_or_default();
    iteration
        .validate()
        .map_err(|e| MechError::Load(format!("iteration: {e}")))?;
    let ode = f.ode.unwrap_or_default();
    ode.validate(n)
        .map_err(|e| MechError::Load(format!("ode: {e}")))?;
    Ok(ScenarioBundle {
        scenario: Scenario {
            players,
            influence,
            objective,
            budget: f.budget,
            success_threshold: f.success_threshold,
        },
        x0,
        p0,
        iteration,
        ode,
    })
}

/// Parses a scenario document without checking the model invariants.
pub fn parse_bundle_unvalidated(text: &str) -> Result<ScenarioBundle> {
    bundle_from_file(parse_file(text)?)
}

/// Parses and validates a scenario document.
pub fn parse_bundle(text: &str) -> Result<ScenarioBundle> {
    let bundle = parse_bundle_unvalidated(text)?;
    let report = validate_scenario(&bundle.scenario);
    if let Some(c) = report.first_failure() {
        return Err(MechError::Load(format!(
            "invalid scenario ({}): {}",
            c.name, c.detail
        )));
    }
    Ok(bundle)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MechError::Load(format!("{}: {e}", path.display())))
}

pub fn load_bundle(path: &Path) -> Result<ScenarioBundle> {
    parse_bundle(&read(path)?)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    Ok(load_bundle(path)?.scenario)
}

/// Canonical JSON for a bundle; parsing it gives the same bundle back.
pub fn bundle_to_json(b: &ScenarioBundle) -> String {
    let s = &b.scenario;
    let file = ScenarioFile {
        players: s
            .players
            .iter()
            .map(|p| match p.utility {
                Utility::Log { alpha } => PlayerFile {
                    alpha: Some(alpha),
                    utility: None,
                    beta: p.cost_factor,
                },
                ref u => PlayerFile {
                    alpha: None,
                    utility: Some(u.clone()),
                    beta: p.cost_factor,
                },
            })
            .collect(),
        influence: (!s.influence.is_identity()).then(|| s.influence.rows()),
        objective: match &s.objective {
            DesignerObjective::Welfare => ObjectiveFile::Welfare,
            DesignerObjective::LinearGlobal { gamma } => ObjectiveFile::LinearGlobal {
                gamma: gamma.clone(),
            },
        },
        budget: s.budget,
        success_threshold: s.success_threshold,
        initial: Some(InitialFile {
            x0: Some(ScalarOrVec::compact(&b.x0)),
            p0: Some(ScalarOrVec::compact(&b.p0)),
        }),
        iteration: Some(b.iteration.clone()),
        ode: Some(b.ode.clone()),
    };
    let mut text = serde_json::to_string_pretty(&file).expect("scenario serializes");
    text.push('\n');
    text
}

// ---------------------------------------------------------------------------
// CSV emission

/// 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn indexed(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

pub fn trajectory_header(n: usize) -> String {
    let cols: Vec<String> = ["n", "lambda", "spend", "objective"]
        .iter()
        .map(|s| s.to_string())
        .chain(indexed("x", n))
        .chain(indexed("p", n))
        .chain(indexed("cost", n))
        .collect();
    cols.join(",")
}

fn step_row(rec: &StepRecord) -> String {
    let mut row = format!(
        "{},{},{},{}",
        rec.n,
        fmt_real(rec.lambda),
        fmt_real(rec.budget_spend),
        fmt_real(rec.objective)
    );
    for v in rec.x.iter().chain(&rec.p).chain(&rec.player_costs) {
        row.push(',');
        row.push_str(&fmt_real(*v));
    }
    row
}

/// Header plus one row per step, newline-terminated.
pub fn trajectory_csv<'a>(n: usize, steps: impl IntoIterator<Item = &'a StepRecord>) -> String {
    let mut out = trajectory_header(n);
    out.push('\n');
    for rec in steps {
        out.push_str(&step_row(rec));
        out.push('\n');
    }
    out
}

pub fn ode_csv(s: &Scenario, traj: &OdeTrajectory) -> Result<String> {
    let mech = traj
        .mechanism
        .ok_or_else(|| MechError::Precondition("ODE trajectory without mechanism".into()))?;
    let mut out = String::from("t,lambda,V_L");
    for c in indexed("x", s.n()) {
        out.push(',');
        out.push_str(&c);
    }
    out.push('\n');
    for smp in &traj.samples {
        let v = dynamics::lyapunov(s, mech, &smp.state)?;
        let _ = write!(
            out,
            "{},{},{}",
            fmt_real(smp.t),
            fmt_real(smp.state.lambda),
            fmt_real(v)
        );
        for x in &smp.state.x {
            out.push(',');
            out.push_str(&fmt_real(*x));
        }
        out.push('\n');
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Command line

#[derive(Debug, Parser)]
#[command(
    name = "incentive-mech",
    version,
    about = "Incentive mechanisms for risk-management investment games"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a direct or iterative mechanism (or the no-mechanism baseline).
    Run(RunArgs),
    /// Integrate the continuous-time mechanism dynamics.
    Ode(OdeArgs),
    /// Scenario validation, equilibrium and uniqueness diagnostics.
    Diagnose(DiagnoseArgs),
    /// Misreporting and action-deviation probes.
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Built-in six-unit use case.
    #[arg(long)]
    pub paper: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RunMech {
    Im1,
    Im2,
    M1,
    M2,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OdeMech {
    Im1,
    Im2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProbeMech {
    Im1,
    Im2,
    M1,
    M2,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum)]
    pub mech: RunMech,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Convergence tolerance (iterative) or budget tolerance (direct).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Never let the multiplier decrease (`[.]^+` on the increment).
    #[arg(long)]
    pub literal_lambda_projection: bool,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Exit 0 even when an iterative run hits `max_iters`.
    #[arg(long)]
    pub allow_unconverged: bool,
    /// Baseline with `p = 0` instead of the initial incentives.
    #[arg(long)]
    pub baseline_zero_p: bool,
}

#[derive(Debug, Args)]
pub struct OdeArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum)]
    pub mech: OdeMech,
    #[arg(long)]
    pub t_end: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Start at the equilibrium instead of the initial conditions.
    #[arg(long)]
    pub from_equilibrium: bool,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub source: Source,
    /// Latin-hypercube samples for the uniqueness check.
    #[arg(long, default_value_t = 100)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub source: Source,
    #[arg(long, value_enum)]
    pub mech: ProbeMech,
    /// 1-based player index.
    #[arg(long)]
    pub player: usize,
    /// Action deviation (iterative mechanisms).
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    /// Utility report scale (direct mechanisms).
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_LOAD: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Mech(MechError),
    Io(String),
}

impl From<MechError> for CliError {
    fn from(e: MechError) -> Self {
        match e {
            MechError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Mech(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Io(_) | CliError::Mech(MechError::Load(_)) => EXIT_LOAD,
            CliError::Mech(_) => EXIT_NUMERICAL,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage: {m}"),
            CliError::Mech(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "io: {m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn load_source(src: &Source) -> CliResult<ScenarioBundle> {
    match (&src.scenario, src.paper) {
        (_, true) => Ok(paper_scenario()),
        (Some(path), false) => Ok(load_bundle(path)?),
        (None, false) => Err(CliError::Usage("give --scenario PATH or --paper".into())),
    }
}

/// Welfare mechanisms need a welfare objective; switch and say so.
fn for_welfare(bundle: &mut ScenarioBundle) {
    if !bundle.scenario.objective.is_welfare() {
        eprintln!("note: welfare mechanism selected; designer objective set to welfare");
        bundle.scenario.objective = DesignerObjective::Welfare;
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Ode(a) => cmd_ode(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
        Command::Probe(a) => cmd_probe(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn threshold_fields(s: &Scenario, objective: f64) -> (Option<f64>, Option<bool>, Option<String>) {
    match s.success_threshold {
        None => (None, None, None),
        Some(th) => {
            let pass = objective > th;
            let note = (!pass).then(|| {
                format!("objective {objective:.6} does not exceed the success threshold {th}")
            });
            (Some(th), Some(pass), note)
        }
    }
}

fn summary_json(
    s: &Scenario,
    mech: &str,
    converged_at: Option<usize>,
    lambda: f64,
    rec: &StepRecord,
) -> String {
    let (threshold, pass, note) = threshold_fields(s, rec.objective);
    let v = json!({
        "mechanism": mech,
        "converged_at": converged_at,
        "lambda": lambda,
        "x": rec.x,
        "p": rec.p,
        "spend": rec.budget_spend,
        "objective": rec.objective,
        "success_threshold": threshold,
        "threshold_pass": pass,
        "threshold_note": note,
    });
    let mut text = serde_json::to_string_pretty(&v).expect("summary serializes");
    text.push('\n');
    text
}

fn solution_record(s: &Scenario, sol: &MechanismSolution) -> Result<StepRecord> {
    StepRecord::new(s, 0, sol.x.clone(), sol.p.clone(), sol.lambda)
}

pub fn cmd_run(a: &RunArgs) -> CliResult<i32> {
    let mut bundle = load_source(&a.source)?;
    let mut cfg = bundle.iteration.clone();
    if let Some(m) = a.max_iters {
        cfg.max_iters = m;
    }
    if a.literal_lambda_projection {
        cfg.projection = LambdaProjection::Literal;
    }
    if matches!(a.mech, RunMech::M1 | RunMech::Im1) {
        for_welfare(&mut bundle);
    }
    let s = &bundle.scenario;

    let direct = |sol: MechanismSolution, name: &str| -> CliResult<i32> {
        let rec = solution_record(s, &sol)?;
        write_file(&a.out, &trajectory_csv(s.n(), [&rec]))?;
        if let Some(path) = &a.summary {
            write_file(path, &summary_json(s, name, None, sol.lambda, &rec))?;
        }
        Ok(EXIT_OK)
    };
    let tol = a.tol.unwrap_or(1e-9);
    let traj = match a.mech {
        RunMech::M1 => return direct(solve_m1(s, tol)?, "m1"),
        RunMech::M2 => return direct(solve_m2(s, tol)?, "m2"),
        RunMech::Im1 | RunMech::Im2 | RunMech::None => {
            if let Some(t) = a.tol {
                cfg.conv_tol = t;
            }
            match a.mech {
                RunMech::Im1 => run_mechanism(s, &cfg, Mechanism::Im1, &bundle.x0, &bundle.p0)?,
                RunMech::Im2 => run_mechanism(s, &cfg, Mechanism::Im2, &bundle.x0, &bundle.p0)?,
                _ => {
                    let p = if a.baseline_zero_p {
                        vec![0.0; s.n()]
                    } else {
                        bundle.p0.clone()
                    };
                    run_fixed_incentives(s, &cfg, &bundle.x0, &p)?
                }
            }
        }
    };
    write_file(&a.out, &trajectory_csv(s.n(), &traj.steps))?;
    let name = match a.mech {
        RunMech::Im1 => "im1",
        RunMech::Im2 => "im2",
        _ => "none",
    };
    if let Some(path) = &a.summary {
        let last = traj.last();
        write_file(
            path,
            &summary_json(s, name, traj.converged_at, last.lambda, last),
        )?;
    }
    if traj.converged_at.is_none() {
        eprintln!(
            "warning: no convergence within {} iterations",
            cfg.max_iters
        );
        if !a.allow_unconverged {
            return Ok(EXIT_NUMERICAL);
        }
    }
    Ok(EXIT_OK)
}

fn ode_mechanism(m: OdeMech) -> Mechanism {
    match m {
        OdeMech::Im1 => Mechanism::Im1,
        OdeMech::Im2 => Mechanism::Im2,
    }
}

/// True when consecutive Lyapunov samples strictly decrease until they fall
/// below `floor`.
pub fn lyapunov_monotone(s: &Scenario, traj: &OdeTrajectory, floor: f64) -> Result<bool> {
    let mech = traj
        .mechanism
        .ok_or_else(|| MechError::Precondition("ODE trajectory without mechanism".into()))?;
    let values = traj
        .samples
        .iter()
        .map(|smp| dynamics::lyapunov(s, mech, &smp.state))
        .collect::<Result<Vec<_>>>()?;
    Ok(values.windows(2).all(|w| w[0] < floor || w[1] < w[0]))
}

pub fn cmd_ode(a: &OdeArgs) -> CliResult<i32> {
    let mut bundle = load_source(&a.source)?;
    let mech = ode_mechanism(a.mech);
    if mech == Mechanism::Im1 {
        for_welfare(&mut bundle);
    }
    let mut cfg = bundle.ode.clone();
    if let Some(t) = a.t_end {
        cfg.t_end = t;
    }
    if let Some(dt) = a.dt {
        cfg.dt = dt;
    }
    if let Some(r) = a.record_every {
        cfg.record_every = r;
    }
    cfg.validate(bundle.scenario.n())?;
    let s = &bundle.scenario;
    let eq = dynamics::equilibrium(s, mech)?;
    let init = if a.from_equilibrium {
        eq.clone()
    } else {
        let lambda = bundle
            .iteration
            .lambda_init
            .unwrap_or_else(|| default_lambda_init(s, mech, &bundle.p0, dynamics::LAMBDA_MIN));
        OdeState::new(bundle.x0.clone(), lambda)
    };
    let traj = dynamics::integrate(s, mech, &init, &cfg)?;
    write_file(&a.out, &ode_csv(s, &traj)?)?;
    if let Some(path) = &a.summary {
        let fit = dynamics::fit_exponential_rate(&traj, &eq).ok();
        let last = &traj.samples.last().expect("initial sample").state;
        let v = json!({
            "mechanism": match mech { Mechanism::Im1 => "im1", Mechanism::Im2 => "im2" },
            "t_end": traj.samples.last().map(|s| s.t),
            "lambda": last.lambda,
            "x": last.x,
            "equilibrium": { "lambda": eq.lambda, "x": eq.x },
            "lyapunov_final": dynamics::lyapunov(s, mech, last)?,
            "lyapunov_monotone": lyapunov_monotone(s, &traj, 1e-12)?,
            "fit": fit.map(|f| json!({ "alpha": f.alpha, "beta": f.beta, "r2": f.r2 })),
        });
        let mut text = serde_json::to_string_pretty(&v).expect("summary serializes");
        text.push('\n');
        write_file(path, &text)?;
    }
    Ok(EXIT_OK)
}

/// Validation, equilibrium at zero incentives with its pseudo-gradient, and
/// the sampled uniqueness check.
pub fn diagnose(bundle: &ScenarioBundle, samples: usize, seed: u64) -> Result<DiagnosticsReport> {
    let s = &bundle.scenario;
    let mut report = validate_scenario(s);
    if !report.passed() {
        return Ok(report);
    }
    let p = vec![0.0; s.n()];
    let x = solve_ne(s, &p, &NeSolveConfig::default())?;
    let clamped: Vec<usize> = (0..s.n())
        .filter(|&i| x[i] <= X_MIN)
        .map(|i| i + 1)
        .collect();
    report.push(if clamped.is_empty() {
        Check::pass(
            "equilibrium",
            format!("interior equilibrium at p = 0: {x:?}"),
        )
    } else {
        Check::new(
            "equilibrium",
            Verdict::Inconclusive,
            format!("players {clamped:?} clamped at x_min; equilibrium {x:?}"),
        )
    });
    let g = pseudo_gradient(s, &GameState::new(x.clone(), p))?;
    let gnorm = (0..s.n())
        .filter(|i| !clamped.contains(&(i + 1)))
        .map(|i| g[i].abs())
        .fold(0.0, f64::max);
    report.push(
        Check::new(
            "pseudo_gradient",
            if gnorm < 1e-8 {
                Verdict::Pass
            } else {
                Verdict::Fail
            },
            "sup-norm of the pseudo-gradient over interior players at the equilibrium",
        )
        .with_value(gnorm),
    );
    let upper = crate::game::strategy_box_upper(s);
    report.push(Check::pass(
        "strategy_set",
        format!("box [0, {upper:.6e}]^N: bounded with nonempty interior"),
    ));
    let mut states = vec![GameState::new(x, vec![0.0; s.n()])];
    states.extend(default_samples(s, samples, seed));
    report.extend(check_uniqueness(s, &states)?);
    Ok(report)
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> CliResult<i32> {
    let bundle = match (&a.source.scenario, a.source.paper) {
        (_, true) => paper_scenario(),
        (Some(path), false) => parse_bundle_unvalidated(&read(path)?)?,
        (None, false) => return Err(CliError::Usage("give --scenario PATH or --paper".into())),
    };
    let report = diagnose(&bundle, a.samples, a.seed)?;
    let text = if a.json {
        serde_json::to_string_pretty(&report).expect("report serializes") + "\n"
    } else {
        report.to_string()
    };
    std::io::stdout()
        .write_all(text.as_bytes())
        .map_err(|e| CliError::Io(e.to_string()))?;
    if validate_scenario(&bundle.scenario).passed() {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_LOAD)
    }
}

pub fn probe_csv(steps: &[crate::iter_mech::ProbeStep]) -> String {
    let mut out = String::from("n,cost_honest,cost_deviated,target_honest,target_deviated\n");
    for st in steps {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            st.n,
            fmt_real(st.cost_honest),
            fmt_real(st.cost_deviated),
            fmt_real(st.target_honest),
            fmt_real(st.target_deviated)
        );
    }
    out
}

pub fn cmd_probe(a: &ProbeArgs) -> CliResult<i32> {
    let mut bundle = load_source(&a.source)?;
    if matches!(a.mech, ProbeMech::M1 | ProbeMech::Im1) {
        for_welfare(&mut bundle);
    }
    let n = bundle.scenario.n();
    if a.player == 0 || a.player > n {
        return Err(CliError::Usage(format!("--player must lie in 1..={n}")));
    }
    let i = a.player - 1;
    let s = &bundle.scenario;
    let text = match a.mech {
        ProbeMech::M1 | ProbeMech::M2 => {
            let scale = a
                .scale
                .ok_or_else(|| CliError::Usage("direct mechanisms need --scale".into()))?;
            if a.mech == ProbeMech::M2 && s.objective.is_welfare() {
                return Err(CliError::Usage("m2 needs a linear_global objective".into()));
            }
            let out = misreport_gain(s, i, scale)?;
            let v = json!({
                "player": a.player,
                "scale": scale,
                "cost_truthful": out.cost_truthful,
                "cost_misreport": out.cost_misreport,
                "advantage": out.advantage,
            });
            serde_json::to_string_pretty(&v).expect("record serializes") + "\n"
        }
        ProbeMech::Im1 | ProbeMech::Im2 => {
            let delta = a
                .delta
                .ok_or_else(|| CliError::Usage("iterative mechanisms need --delta".into()))?;
            let mech = if a.mech == ProbeMech::Im1 {
                Mechanism::Im1
            } else {
                Mechanism::Im2
            };
            let honest: Trajectory =
                run_mechanism(s, &bundle.iteration, mech, &bundle.x0, &bundle.p0)?;
            probe_csv(&cheat_probe(s, &honest, i, delta)?)
        }
    };
    match &a.out {
        Some(path) => write_file(path, &text)?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Io(e.to_string()))?,
    }
    Ok(EXIT_OK)
}
