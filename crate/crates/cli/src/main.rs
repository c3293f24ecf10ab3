//! `fbmc`: evaluate zonal divisions of a power grid by flow-based market
//! coupling and compare them against the single-zone baseline.
//!
//! Exit codes: 0 when every division evaluated, 2 when any division was
//! infeasible or failed to solve, 1 on configuration or parse errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use fbmc_core::case_io;
use fbmc_core::pipeline::{
    compare_divisions, evaluate_division_artifacts, load_case, write_comparison_outputs,
    write_division_outputs, StageError,
};
use fbmc_core::EvalConfig;

#[derive(Parser)]
#[command(
    name = "fbmc",
    about = "Flow-based market coupling evaluation of zonal grid divisions",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one division end to end and write its settlement report.
    Evaluate(EvaluateArgs),
    /// Evaluate several divisions and compare them to the single-zone
    /// baseline.
    Compare(CompareArgs),
}

#[derive(Args, Default)]
struct CommonArgs {
    /// TOML config file mirroring the command-line options.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid case: MATPOWER `.m` or the native network format.
    #[arg(long)]
    case: Option<PathBuf>,
    /// Zone division file (`bus_id,zone`); repeatable for `compare`.
    #[arg(long)]
    division: Vec<PathBuf>,
    /// Wind injection file (`bus_id,mw`).
    #[arg(long)]
    wind: Option<PathBuf>,
    /// Common price of the inelastic demand bids.
    #[arg(long)]
    demand_price: Option<f64>,
    /// External id of the slack bus (default: first bus of the case).
    #[arg(long)]
    slack: Option<u64>,
    /// Feasibility tolerance in MW.
    #[arg(long)]
    feasibility_tol: Option<f64>,
    /// Stationarity tolerance.
    #[arg(long)]
    stationarity_tol: Option<f64>,
    /// Solver iteration cap.
    #[arg(long)]
    max_iter: Option<usize>,
    /// Output directory for reports and CSVs.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Write the nodal PTDF as CSV.
    #[arg(long)]
    dump_ptdf: Option<PathBuf>,
    /// Write the GSK as CSV (multi-zone divisions only).
    #[arg(long)]
    dump_gsk: Option<PathBuf>,
    /// Write the offer book as CSV.
    #[arg(long)]
    dump_offers: Option<PathBuf>,
    /// Write the clearing problem as a plain-text listing.
    #[arg(long)]
    dump_problem: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
}

/// Config file schema; every field can be overridden on the command line.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    case: Option<PathBuf>,
    divisions: Option<Vec<PathBuf>>,
    wind: Option<PathBuf>,
    demand_price: Option<f64>,
    slack_bus: Option<u64>,
    feasibility_tol: Option<f64>,
    stationarity_tol: Option<f64>,
    max_iter: Option<usize>,
    out: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Stage(StageError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Stage(e) => {
                if matches!(
                    e.stage,
                    "bootstrap" | "gsk" | "coupling" | "settlement"
                ) {
                    2
                } else {
                    1
                }
            }
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Config(m) => m.clone(),
            CliError::Stage(e) => e.to_string(),
        }
    }
}

impl From<StageError> for CliError {
    fn from(e: StageError) -> Self {
        CliError::Stage(e)
    }
}

fn resolve_config(common: &CommonArgs) -> Result<EvalConfig, CliError> {
    let file: FileConfig = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => FileConfig::default(),
    };
    let case = common
        .case
        .clone()
        .or(file.case)
        .ok_or_else(|| CliError::Config("no case file given (--case or config)".into()))?;
    let out = common
        .out
        .clone()
        .or(file.out)
        .ok_or_else(|| CliError::Config("no output directory given (--out or config)".into()))?;
    let mut cfg = EvalConfig::new(case, out);
    cfg.division_paths = if common.division.is_empty() {
        file.divisions.unwrap_or_default()
    } else {
        common.division.clone()
    };
    cfg.wind_path = common.wind.clone().or(file.wind);
    if let Some(v) = common.demand_price.or(file.demand_price) {
        cfg.demand_price = v;
    }
    cfg.slack_bus = common.slack.or(file.slack_bus);
    if let Some(v) = common.feasibility_tol.or(file.feasibility_tol) {
        cfg.feasibility_tol = v;
    }
    if let Some(v) = common.stationarity_tol.or(file.stationarity_tol) {
        cfg.stationarity_tol = v;
    }
    if let Some(v) = common.max_iter.or(file.max_iter) {
        cfg.max_iter = v;
    }
    if cfg.demand_price <= 0.0 {
        return Err(CliError::Config(format!(
            "demand price must be positive, got {}",
            cfg.demand_price
        )));
    }
    if cfg.division_paths.is_empty() {
        return Err(CliError::Config(
            "no division files given (--division or config)".into(),
        ));
    }
    Ok(cfg)
}

fn dump(path: &Path, content: &str) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn run_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&args.common)?;
    if cfg.division_paths.len() != 1 {
        return Err(CliError::Config(format!(
            "evaluate takes exactly one --division, got {}",
            cfg.division_paths.len()
        )));
    }
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| CliError::Config(format!("{}: {e}", cfg.output_dir.display())))?;
    let ctx = load_case(&cfg)?;
    let division_path = &cfg.division_paths[0];
    let text = fs::read_to_string(division_path)
        .map_err(|e| CliError::Config(format!("{}: {e}", division_path.display())))?;
    let div = case_io::load_zone_division(&text, &ctx.net)
        .map_err(|e| CliError::Config(format!("{}: {e}", division_path.display())))?;
    let id = division_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("division")
        .to_string();

    if let Some(path) = &args.dump_offers {
        dump(path, &ctx.book.to_csv(&ctx.net, &div))?;
    }
    if let Some(path) = &args.dump_ptdf {
        dump(path, &ctx.ptdf()?.to_csv(&ctx.net))?;
    }

    match evaluate_division_artifacts(&ctx, &div, &id) {
        Ok(artifacts) => {
            if let Some(path) = &args.dump_gsk {
                match &artifacts.gsk {
                    Some(gsk) => dump(path, &gsk.to_csv(&ctx.net, &div))?,
                    None => log::warn!("single-zone division has no GSK; skipping {}", path.display()),
                }
            }
            if let Some(path) = &args.dump_problem {
                dump(path, &artifacts.problem.qp.dump())?;
            }
            write_division_outputs(&id, &Ok(artifacts.report.clone()), &cfg.output_dir)?;
            print!("{}", artifacts.report.to_text());
            Ok(())
        }
        Err(e) => {
            // Division-level failures still leave a stub report behind.
            if e.division_scoped {
                write_division_outputs::<f64>(&id, &Err(e.to_string()), &cfg.output_dir)?;
            }
            Err(e.into())
        }
    }
}

fn run_compare(args: &CompareArgs) -> Result<bool, CliError> {
    let cfg = resolve_config(&args.common)?;
    let table = compare_divisions(&cfg)?;
    write_comparison_outputs(&table, &cfg.output_dir)?;
    print!("{}", table.to_csv());
    Ok(table.any_failed())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result: Result<bool, CliError> = match &cli.command {
        Command::Evaluate(args) => run_evaluate(args).map(|()| false),
        Command::Compare(args) => run_compare(args),
    };
    match result {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
