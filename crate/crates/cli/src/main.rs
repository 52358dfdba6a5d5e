//! `restore`: plan repair orders, replay them under AC power flow, and run
//! the placement x mode experiment on a feeder case.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};

use restore_core::rip::{simulate_plan_with, RipOptions};
use restore_core::rop::{build_rop_with, solve_rop_with, RopConfig, RopOptions};
use restore_core::scenarios::{load_damage, load_scenario, PlacementName};
use restore_core::sweep::{run_sweep, SweepOptions};
use restore_core::{apply_damage, BuiltinBackend, apply_der_mode, load_case, CoreError, DamageSets, DerMode, DerPlacement, Network, RestorationPlan, Status, TimeGrid};

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_GAP: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "restore", version, about = "Restoration ordering and implementation for distribution feeders with DERs")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the restoration ordering problem for one case.
    Plan(PlanArgs),
    /// Replay a plan under AC power flow.
    Simulate(SimulateArgs),
    /// Plan every placement/mode case and replay each plan under every mode.
    Sweep(SweepArgs),
    /// Print the tables written by a previous sweep.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct CaseArgs {
    /// Network case file (JSON).
    #[arg(long, env = "RESTORE_CASE")]
    case: PathBuf,
    /// Damaged lines: a damage file or an inline comma-separated id list.
    /// Without it, the damage flags of the case file are used.
    #[arg(long, env = "RESTORE_DAMAGE")]
    damage: Option<String>,
    /// Number of periods (defaults to the damaged count plus one).
    #[arg(long, env = "RESTORE_HORIZON")]
    horizon: Option<usize>,
    /// Output directory.
    #[arg(long, env = "RESTORE_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SolverArgs {
    /// Relative MILP optimality gap.
    #[arg(long, env = "RESTORE_GAP", default_value_t = 1e-6)]
    gap: f64,
    /// Branch-and-bound node budget.
    #[arg(long, env = "RESTORE_NODE_BUDGET", default_value_t = 1_000_000)]
    node_budget: u64,
    /// AC residual tolerance for a converged period.
    #[arg(long, env = "RESTORE_TOL", default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// DER placement file; without it the case has no DERs.
    #[arg(long, env = "RESTORE_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Operating mode assumed by the plan (overrides the scenario file).
    #[arg(long, env = "RESTORE_MODE", value_parser = parse_mode)]
    mode: Option<DerMode>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    solver: SolverArgs,
    #[arg(long, env = "RESTORE_SCENARIO")]
    scenario: Option<PathBuf>,
    /// Actual operating mode during the replay.
    #[arg(long, env = "RESTORE_MODE", value_parser = parse_mode)]
    mode: Option<DerMode>,
    /// Plan file written by `restore plan`.
    #[arg(long, env = "RESTORE_PLAN")]
    plan: PathBuf,
    /// Worker threads.
    #[arg(long, env = "RESTORE_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    case: CaseArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// DER placement files, one per placement.
    #[arg(long = "scenario", env = "RESTORE_SCENARIO", value_delimiter = ',', required = true)]
    scenarios: Vec<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "RESTORE_JOBS")]
    jobs: Option<usize>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory written by `restore sweep`.
    #[arg(long, env = "RESTORE_OUT", default_value = "out")]
    out: PathBuf,
}

fn parse_mode(s: &str) -> Result<DerMode, String> {
    s.parse().map_err(|e: CoreError| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Plan(a) => cmd_plan(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

/// Loads the case and applies the requested damage.
fn load_network(args: &CaseArgs) -> Result<Network, CoreError> {
    let net = load_case(&args.case)?;
    match &args.damage {
        None => Ok(net),
        Some(spec) => apply_damage(&net, &parse_damage(spec)?),
    }
}

fn parse_damage(spec: &str) -> Result<Vec<usize>, CoreError> {
    let trimmed = spec.trim();
    let inline = !trimmed.is_empty() && trimmed.chars().all(|c| c.is_ascii_digit() || c == ',' || c.is_whitespace());
    if inline {
        trimmed
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse().map_err(|e| CoreError::Parse(format!("damage id '{s}': {e}"))))
            .collect()
    } else {
        Ok(load_damage(trimmed)?.damaged_lines)
    }
}

/// The placement and mode given on the command line. No scenario means no
/// DERs at all.
fn scenario(path: Option<&Path>, mode: Option<DerMode>) -> Result<(DerPlacement, DerMode), CoreError> {
    match path {
        Some(p) => {
            let s = load_scenario(p)?;
            Ok((s.placement, mode.or(s.mode).unwrap_or(DerMode::Base)))
        }
        None => Ok((
            DerPlacement { name: PlacementName::Custom, der_nodes: Vec::new(), p_max: 0.0, q_min: 0.0, q_max: 0.0 },
            mode.unwrap_or(DerMode::Base),
        )),
    }
}

fn rop_options(s: &SolverArgs) -> RopOptions {
    let mut opts = RopOptions::default();
    opts.milp.rel_gap = s.gap;
    opts.milp.node_budget = s.node_budget;
    opts
}

fn rip_options(s: &SolverArgs) -> RipOptions {
    RipOptions { tol: s.tol, ..Default::default() }
}

fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, CoreError> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| CoreError::Io(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn cmd_plan(a: &PlanArgs) -> Result<u8, CoreError> {
    let net = load_network(&a.case)?;
    let (placement, mode) = scenario(a.scenario.as_deref(), a.mode)?;
    let case = apply_der_mode(&net, &placement, mode)?;
    let damage = DamageSets::from_network(&case.network);
    let config = RopConfig::default();
    let time = match a.case.horizon {
        Some(n) => TimeGrid { n_periods: n, step_hours: 1.0 },
        None => TimeGrid::for_damage(damage.len(), config.repairs_per_period),
    };
    let inst = build_rop_with(&case, &damage, time, config)?;
    info!("planning {} with {} damaged components over {} periods", case.label(), damage.len(), time.n_periods);
    let sol = solve_rop_with(&inst, &rop_options(&a.solver), &BuiltinBackend)?;
    output::write_plan(&a.case.out, &case, &sol)?;
    println!(
        "{}: served {:.4} MWh, status {:?}, gap {:.2e}, {} nodes",
        case.label(),
        sol.plan.objective_mwh,
        sol.status,
        sol.gap,
        sol.stats.nodes
    );
    Ok(match sol.status {
        Status::Optimal => EXIT_OK,
        _ => {
            warn!("optimality gap {:.3e} not closed within the node budget", sol.gap);
            EXIT_GAP
        }
    })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<u8, CoreError> {
    let net = load_network(&a.case)?;
    let (placement, mode) = scenario(a.scenario.as_deref(), a.mode)?;
    let case = apply_der_mode(&net, &placement, mode)?;
    let text = std::fs::read_to_string(&a.plan).map_err(|e| CoreError::Io(format!("{}: {e}", a.plan.display())))?;
    let plan: RestorationPlan = serde_json::from_str(&text).map_err(|e| CoreError::Parse(format!("{}: {e}", a.plan.display())))?;
    let opts = rip_options(&a.solver);
    let rip = with_jobs(a.jobs, || simulate_plan_with(&case, &plan, &opts))??;
    output::write_simulation(&a.case.out, &case, &rip)?;
    println!(
        "{}: ENS {:.4} MWh of {:.4} MWh, max residual {:.2e}",
        case.label(),
        rip.ens_mwh,
        rip.total_demand_mwh,
        rip.max_residual()
    );
    if rip.all_converged() {
        Ok(EXIT_OK)
    } else {
        let bad: Vec<usize> = rip.converged.iter().enumerate().filter(|(_, &c)| !c).map(|(t, _)| t).collect();
        warn!("periods {bad:?} did not converge");
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn cmd_sweep(a: &SweepArgs) -> Result<u8, CoreError> {
    let net = load_network(&a.case)?;
    let placements: Vec<DerPlacement> = a.scenarios.iter().map(|p| load_scenario(p).map(|s| s.placement)).collect::<Result<_, _>>()?;
    let opts = SweepOptions { rop: rop_options(&a.solver), rip: rip_options(&a.solver), horizon: a.case.horizon, ..Default::default() };
    let result = with_jobs(a.jobs, || run_sweep(&net, &placements, &opts))??;
    output::write_sweep(&a.case.out, &result)?;
    print!("{}", output::summary_table(&result));
    for f in &result.failures {
        eprintln!("case {}-{} failed: {}", f.placement, f.mode, f.error);
    }
    if !result.failures.is_empty() {
        return Ok(EXIT_ERROR);
    }
    if !result.all_converged() {
        return Ok(EXIT_NOT_CONVERGED);
    }
    if result.cases.iter().any(|c| c.status != Status::Optimal) {
        return Ok(EXIT_GAP);
    }
    Ok(EXIT_OK)
}

fn cmd_report(a: &ReportArgs) -> Result<u8, CoreError> {
    print!("{}", output::report(&a.out)?);
    Ok(EXIT_OK)
}
