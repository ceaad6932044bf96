//! Command-line front end: scenario ingestion, subcommands and report output.

pub mod csv;
pub mod scenario_file;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::engine::simulate::{resolve_omega_com, simulate_with, RunOptions};
use crate::engine::{find_equilibrium, EngineError, Equilibrium, Method, ModelKind, OmegaCom, Scenario};
use crate::network::NodeKind;
use crate::validation::{
    audit_equilibrium, epsilon_sweep_with, oracle_crosscheck, static_line_check, AuditReport, CrosscheckReport,
    SweepOptions, SweepReport,
};

pub use csv::{format_number, trajectory_csv};
pub use scenario_file::{parse_scenario, ScenarioFile};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {message}")]
    Input { path: String, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
    #[error(transparent)]
    Model(#[from] EngineError),
}

impl CliError {
    /// 0 ok, 1 model infeasibility, 2 input error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) if e.is_model_failure() => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mgsim",
    version,
    about = "Microgrid simulator with full and reduced inverter-network models"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the scenario and write the trajectory as CSV.
    Simulate(RunArgs),
    /// Solve the synchronous operating point.
    Powerflow(RunArgs),
    /// Run the epsilon sweep, energy audit and line checks.
    Validate(RunArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Rk4,
    Trapezoidal,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output file; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    /// Output step in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// Comma-separated, strictly decreasing epsilon values.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<f64>>,
    /// Seed for randomized checks.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of random power-flow oracle instances to check.
    #[arg(long)]
    pub random: Option<usize>,
}

fn load(args: &RunArgs) -> Result<Scenario, CliError> {
    let mut scenario = parse_scenario(&args.scenario)?;
    let mut settings = scenario.settings;
    if let Some(m) = args.model {
        settings.model = match m {
            ModelArg::Full => ModelKind::Full,
            ModelArg::Reduced => ModelKind::Reduced,
        };
    }
    if let Some(m) = args.method {
        settings.method = match m {
            MethodArg::Rk4 => Method::Rk4,
            MethodArg::Trapezoidal => Method::Trapezoidal,
        };
    }
    if let Some(dt) = args.dt {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(CliError::Usage(format!("--dt must be positive, got {dt}")));
        }
        settings.dt = dt;
    }
    if settings != scenario.settings {
        scenario = scenario
            .with_settings(settings)
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(scenario)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::Output {
            path: path.display().to_string(),
            message: e.to_string(),
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate(a) => simulate_cmd(a),
        Command::Powerflow(a) => powerflow_cmd(a),
        Command::Validate(a) => validate_cmd(a),
    }
}

fn simulate_cmd(args: &RunArgs) -> Result<(), CliError> {
    let scenario = load(args)?;
    let traj = simulate_with(&scenario, &RunOptions::from_settings(&scenario.settings))?;
    log::info!(
        "{} model, {}: {} samples, {} step retries, {} clamp activations",
        traj.model.name(),
        traj.method.name(),
        traj.samples.len(),
        traj.retry_count(),
        traj.clamp_count()
    );
    if traj.clamp_count() > 0 {
        log::warn!(
            "load current commands were voltage-clamped {} time(s)",
            traj.clamp_count()
        );
    }
    emit(args.out.as_deref(), &trajectory_csv(&traj))
}

fn operating_point(scenario: &Scenario) -> Result<Equilibrium, CliError> {
    let eq = match scenario.settings.omega_com {
        OmegaCom::Synchronous => resolve_omega_com(scenario)?
            .1
            .expect("synchronous frequency resolves an equilibrium"),
        _ => find_equilibrium(scenario, resolve_omega_com(scenario)?.0)?,
    };
    Ok(eq)
}

pub fn powerflow_csv(scenario: &Scenario, eq: &Equilibrium) -> String {
    let mut out = String::from("node,kind,V,delta,P,Q,omega\n# -,-,V,rad,W,var,rad/s\n");
    for i in 0..eq.v.len() {
        let kind = match scenario.topology().kind(i) {
            NodeKind::GridForming => "grid_forming",
            NodeKind::LoadOrFeeding => "load",
        };
        let _ = writeln!(
            out,
            "{},{kind},{},{},{},{},{}",
            scenario.node_id(i),
            format_number(eq.v[i]),
            format_number(eq.delta[i]),
            format_number(eq.p[i]),
            format_number(eq.q[i]),
            format_number(eq.omega_s)
        );
    }
    out
}

fn powerflow_cmd(args: &RunArgs) -> Result<(), CliError> {
    let scenario = load(args)?;
    let eq = operating_point(&scenario)?;
    log::info!(
        "operating point found in {} Newton iterations, residual {:.3e}",
        eq.iterations,
        eq.residual
    );
    emit(args.out.as_deref(), &powerflow_csv(&scenario, &eq))
}

pub struct ValidationOutcome {
    pub sweep: SweepReport,
    pub audit: AuditReport,
    pub line_check: f64,
    pub crosscheck: Option<CrosscheckReport>,
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

impl ValidationOutcome {
    pub fn text(&self) -> String {
        let mut t = String::from("mgsim validation report\n\n");
        let s = &self.sweep;
        let _ = writeln!(t, "epsilon sweep (omega_com = {} rad/s)", format_number(s.omega_com));
        let _ = writeln!(
            t,
            "  {:>10}  {:>12}  {:>14}  {:>14}  {:>14}",
            "epsilon", "t_bl [s]", "gap delta [rad]", "gap V [V]", "gap Pm [W]"
        );
        for r in &s.rows {
            match &r.gaps {
                Ok(g) => {
                    let _ = writeln!(
                        t,
                        "  {:>10}  {:>12}  {:>14}  {:>14}  {:>14}",
                        format_number(r.epsilon),
                        format_number(r.boundary_layer),
                        format_number(g.delta),
                        format_number(g.v),
                        format_number(g.p_m)
                    );
                }
                Err(e) => {
                    let _ = writeln!(t, "  {:>10}  failed: {e}", format_number(r.epsilon));
                }
            }
        }
        let _ = writeln!(
            t,
            "  delta swing after disturbance: {} rad",
            format_number(s.delta_swing)
        );
        if let Some(ratio) = s.final_delta_ratio() {
            let _ = writeln!(t, "  smallest-epsilon delta gap / swing: {}", format_number(ratio));
        }
        let _ = writeln!(
            t,
            "  monotone decrease (factor {} per decade): {}\n",
            format_number(s.decay_per_decade),
            verdict(s.monotone)
        );

        let a = &self.audit;
        let _ = writeln!(t, "power balance audit at the operating point");
        let _ = writeln!(t, "  generation  {} W", format_number(a.generation));
        let _ = writeln!(t, "  consumption {} W", format_number(a.consumption));
        let _ = writeln!(t, "  losses      {} W", format_number(a.losses));
        let _ = writeln!(
            t,
            "  residual    {} W (relative {})",
            format_number(a.residual),
            format_number(a.relative_residual())
        );
        for n in &a.nodes {
            let _ = writeln!(
                t,
                "  node {:<12} P_flow {:>16}  mismatch {}",
                n.node,
                format_number(n.p_flow),
                format_number(n.mismatch)
            );
        }
        let _ = writeln!(t, "  verdict: {}\n", verdict(a.relative_residual() < 1e-8));

        let _ = writeln!(
            t,
            "dynamic vs static line currents: max relative deviation {} ({})",
            format_number(self.line_check),
            verdict(self.line_check < 1e-8)
        );

        if let Some(c) = &self.crosscheck {
            let failed = c.rows.iter().filter(|r| !r.pass).count();
            let worst = c.rows.iter().map(|r| r.error).fold(0.0, f64::max);
            let _ = writeln!(
                t,
                "\npower flow oracle: {} instances (seed {}), {} failed, worst relative error {} ({})",
                c.rows.len(),
                c.seed,
                failed,
                format_number(worst),
                verdict(c.all_pass())
            );
            for d in &c.dumps {
                let _ = writeln!(t, "  {d}");
            }
        }
        t
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("check,item,quantity,value,unit\n");
        let mut row = |check: &str, item: &str, quantity: &str, value: String, unit: &str| {
            let _ = writeln!(out, "{check},{item},{quantity},{value},{unit}");
        };
        for r in &self.sweep.rows {
            let item = format!("eps={}", format_number(r.epsilon));
            row("sweep", &item, "boundary_layer", format_number(r.boundary_layer), "s");
            match &r.gaps {
                Ok(g) => {
                    row("sweep", &item, "gap_delta", format_number(g.delta), "rad");
                    row("sweep", &item, "gap_v", format_number(g.v), "V");
                    row("sweep", &item, "gap_pm", format_number(g.p_m), "W");
                }
                Err(_) => row("sweep", &item, "failed", "1".into(), "-"),
            }
        }
        row(
            "sweep",
            "all",
            "delta_swing",
            format_number(self.sweep.delta_swing),
            "rad",
        );
        row("sweep", "all", "monotone", (self.sweep.monotone as u8).to_string(), "-");
        let a = &self.audit;
        row("audit", "all", "generation", format_number(a.generation), "W");
        row("audit", "all", "consumption", format_number(a.consumption), "W");
        row("audit", "all", "losses", format_number(a.losses), "W");
        row("audit", "all", "residual", format_number(a.residual), "W");
        for n in &a.nodes {
            row("audit", &n.node, "mismatch", format_number(n.mismatch), "W");
        }
        row(
            "lines",
            "all",
            "max_relative_deviation",
            format_number(self.line_check),
            "-",
        );
        if let Some(c) = &self.crosscheck {
            for r in &c.rows {
                row(
                    "oracle",
                    &format!("instance={}", r.instance),
                    "relative_error",
                    format_number(r.error),
                    "-",
                );
            }
        }
        out
    }
}

pub fn validate_scenario(
    scenario: &Scenario,
    epsilons: &[f64],
    random: Option<(usize, u64)>,
) -> Result<ValidationOutcome, CliError> {
    let opts = SweepOptions {
        dt: scenario.settings.dt,
        ..Default::default()
    };
    let sweep = epsilon_sweep_with(scenario, epsilons, &opts)?;
    let eq = find_equilibrium(scenario, sweep.omega_com)?;
    let audit = audit_equilibrium(scenario, &eq)?;
    let line_check = static_line_check(scenario.topology(), eq.omega_com, &eq.delta, &eq.v);
    let crosscheck = random.map(|(n, seed)| oracle_crosscheck(n, 10, seed, scenario.settings.omega_nominal));
    Ok(ValidationOutcome {
        sweep,
        audit,
        line_check,
        crosscheck,
    })
}

fn validate_cmd(args: &RunArgs) -> Result<(), CliError> {
    let scenario = load(args)?;
    if args.model.is_some() || args.method.is_some() {
        log::info!("validate compares both models with RK4; --model and --method are ignored");
    }
    let eps = args.sweep.clone().unwrap_or_else(|| vec![1.0, 0.1, 0.01]);
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CliError::Usage(
            "--sweep needs positive, strictly decreasing values".into(),
        ));
    }
    let random = args.random.map(|n| (n, args.seed.unwrap_or(0)));
    let outcome = validate_scenario(&scenario, &eps, random)?;
    let text = outcome.text();
    match &args.out {
        Some(path) => {
            emit(Some(path), &outcome.csv())?;
            emit(Some(&path.with_extension("txt")), &text)?;
        }
        None => emit(None, &text)?,
    }
    Ok(())
}

/// Logger configuration from `MGSIM_LOG`; unknown values fall back to `warn`.
pub fn init_logging() {
    let level = std::env::var("MGSIM_LOG").unwrap_or_default();
    let filter = match level.to_ascii_lowercase().as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        _ => log::LevelFilter::Warn,
    };
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
    if !level.is_empty() && !["error", "warn", "info", "debug"].contains(&level.to_ascii_lowercase().as_str()) {
        log::warn!("unrecognized MGSIM_LOG value '{level}', using warn");
    }
}
