//! End-to-end evaluation: load a case, clear each candidate division, and
//! compare settlements against the single-zone baseline.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rayon::prelude::*;
use thiserror::Error;

use crate::case_io;
use crate::dcflow::{build_gsk, build_nodal_ptdf, PtdfMatrix};
use crate::market::{
    bootstrap_run, build_offer_book, solve_coupling, MarketError, OfferBook, SolveOptions,
};
use crate::network::{BusIdx, Network, ZoneDivision};
use crate::scalar::Scalar;
use crate::settlement::{settle, SettlementReport};
use crate::textfmt::fmt_money;

/// A stage-tagged pipeline failure. `division_scoped` failures poison one
/// division only; the rest of a comparison still runs.
#[derive(Debug, Error)]
#[error("{stage}: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
    pub division_scoped: bool,
}

impl StageError {
    fn case(stage: &'static str, message: impl Into<String>) -> Self {
        StageError {
            stage,
            message: message.into(),
            division_scoped: false,
        }
    }

    fn division(stage: &'static str, message: impl Into<String>) -> Self {
        StageError {
            stage,
            message: message.into(),
            division_scoped: true,
        }
    }
}

/// Evaluation configuration (mirrors the CLI and its config file).
#[derive(Debug, Clone)]
pub struct EvalConfig<S> {
    pub case_path: PathBuf,
    pub division_paths: Vec<PathBuf>,
    pub wind_path: Option<PathBuf>,
    pub demand_price: S,
    /// External bus id of the slack; defaults to the first bus of the case.
    pub slack_bus: Option<u64>,
    pub feasibility_tol: S,
    pub stationarity_tol: S,
    pub max_iter: usize,
    pub output_dir: PathBuf,
}

impl<S: Scalar> EvalConfig<S> {
    pub fn new(case_path: impl Into<PathBuf>, output_dir: impl Into<PathBuf>) -> Self {
        EvalConfig {
            case_path: case_path.into(),
            division_paths: Vec::new(),
            wind_path: None,
            demand_price: S::c(2000.0),
            slack_bus: None,
            feasibility_tol: S::c(1e-6),
            stationarity_tol: S::c(1e-6),
            max_iter: 10_000,
            output_dir: output_dir.into(),
        }
    }

    pub fn solve_options(&self) -> SolveOptions<S> {
        SolveOptions {
            feasibility: self.feasibility_tol,
            stationarity: self.stationarity_tol,
            max_iter: self.max_iter,
        }
    }
}

/// A parsed case plus everything shared between division evaluations. The
/// PTDF is built once, on first use.
pub struct CaseContext<S> {
    pub net: Network<S>,
    pub book: OfferBook<S>,
    pub wind: BTreeMap<u64, S>,
    pub slack: BusIdx,
    pub opts: SolveOptions<S>,
    pub demand_price: S,
    ptdf: OnceLock<Result<PtdfMatrix<S>, String>>,
}

impl<S: Scalar> CaseContext<S> {
    pub fn ptdf(&self) -> Result<&PtdfMatrix<S>, StageError> {
        self.ptdf
            .get_or_init(|| build_nodal_ptdf(&self.net, self.slack).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| StageError::case("ptdf", e.clone()))
    }
}

fn read(path: &Path, stage: &'static str) -> Result<String, StageError> {
    fs::read_to_string(path)
        .map_err(|e| StageError::case(stage, format!("{}: {e}", path.display())))
}

/// Parses the case file (MATPOWER `.m` or the native format, decided by
/// extension with a content sniff as fallback), the optional wind file, and
/// builds the offer book.
pub fn load_case<S: Scalar>(cfg: &EvalConfig<S>) -> Result<CaseContext<S>, StageError> {
    let text = read(&cfg.case_path, "parse-case")?;
    let is_matpower = match cfg.case_path.extension().and_then(|e| e.to_str()) {
        Some("m") => true,
        Some(_) => false,
        None => text.contains("mpc."),
    };
    let net: Network<S> = if is_matpower {
        case_io::parse_matpower(&text)
            .map_err(|e| StageError::case("parse-case", e.to_string()))?
    } else {
        case_io::parse_network(&text)
            .map_err(|e| StageError::case("parse-case", e.to_string()))?
    };
    let wind = match &cfg.wind_path {
        Some(p) => case_io::parse_wind(&read(p, "parse-wind")?)
            .map_err(|e| StageError::case("parse-wind", e.to_string()))?,
        None => BTreeMap::new(),
    };
    let book = build_offer_book(&net, &wind, cfg.demand_price)
        .map_err(|e| StageError::case("offer-book", e.to_string()))?;
    let slack = match cfg.slack_bus {
        Some(id) => net
            .bus_index(id)
            .ok_or_else(|| StageError::case("config", format!("slack bus {id} not in case")))?,
        None => 0,
    };
    Ok(CaseContext {
        net,
        book,
        wind,
        slack,
        opts: cfg.solve_options(),
        demand_price: cfg.demand_price,
        ptdf: OnceLock::new(),
    })
}

fn market_stage_error(stage: &'static str, e: MarketError) -> StageError {
    StageError::division(stage, e.to_string())
}

/// Everything produced while evaluating one division; the CLI uses the
/// intermediate pieces for its dump options.
pub struct EvaluationArtifacts<S> {
    pub report: SettlementReport<S>,
    pub solution: crate::market::CouplingSolution<S>,
    pub gsk: Option<crate::dcflow::GskMatrix<S>>,
    pub problem: crate::market::CouplingProblem<S>,
}

/// Clears and settles one division: bootstrap and GSK for multi-zone
/// divisions, then the zonal solve, prices, welfare and redispatch.
pub fn evaluate_division<S: Scalar>(
    ctx: &CaseContext<S>,
    div: &ZoneDivision,
    id: &str,
) -> Result<SettlementReport<S>, StageError> {
    evaluate_division_artifacts(ctx, div, id).map(|a| a.report)
}

/// As [`evaluate_division`], returning the intermediate artifacts too.
pub fn evaluate_division_artifacts<S: Scalar>(
    ctx: &CaseContext<S>,
    div: &ZoneDivision,
    id: &str,
) -> Result<EvaluationArtifacts<S>, StageError> {
    let (sol, gsk, problem) = if div.n_zones() >= 2 {
        let ptdf = ctx.ptdf()?;
        let injections = bootstrap_run(&ctx.net, div, &ctx.book, ptdf, &ctx.opts)
            .map_err(|e| market_stage_error("bootstrap", e))?;
        let gsk = build_gsk(&ctx.net, div, &injections)
            .map_err(|e| StageError::division("gsk", e.to_string()))?;
        let zptdf = crate::dcflow::zonal_ptdf(ptdf, &gsk, &ctx.net, div)
            .map_err(|e| StageError::division("gsk", e.to_string()))?;
        let constraints =
            crate::market::zonal_flow_constraints(&ctx.net, div, &zptdf, &ctx.book);
        let problem = crate::market::assemble_problem(&ctx.book, &constraints)
            .map_err(|e| market_stage_error("coupling", e))?;
        let sol = solve_coupling(&ctx.net, div, &ctx.book, Some((ptdf, &gsk)), &ctx.opts)
            .map_err(|e| market_stage_error("coupling", e))?;
        (sol, Some(gsk), problem)
    } else {
        // Single zone: only the balance and the acceptance box constrain
        // the market, so the PTDF is never built.
        let problem = crate::market::assemble_problem(&ctx.book, &[])
            .map_err(|e| market_stage_error("coupling", e))?;
        let sol = solve_coupling(&ctx.net, div, &ctx.book, None, &ctx.opts)
            .map_err(|e| market_stage_error("coupling", e))?;
        (sol, None, problem)
    };
    let report = settle(&ctx.net, div, &ctx.book, &sol, ctx.slack, id)
        .map_err(|e| StageError::division("settlement", e.to_string()))?;
    Ok(EvaluationArtifacts {
        report,
        solution: sol,
        gsk,
        problem,
    })
}

/// Per-division outcome inside a comparison run.
#[derive(Debug)]
pub struct ComparisonRow<S> {
    pub division: String,
    pub zones: usize,
    pub result: Result<SettlementReport<S>, String>,
}

#[derive(Debug)]
pub struct ComparisonTable<S> {
    pub baseline: SettlementReport<S>,
    pub rows: Vec<ComparisonRow<S>>,
}

impl<S: Scalar> ComparisonTable<S> {
    /// CSV with the baseline absolutes in a comment header block and one
    /// delta row per division (division value minus baseline value).
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# baseline sw {}\n", fmt_money(self.baseline.sw)));
        out.push_str(&format!(
            "# baseline redispatch {}\n",
            fmt_money(self.baseline.redispatch_cost)
        ));
        out.push_str(&format!(
            "# baseline sw_corrected {}\n",
            fmt_money(self.baseline.sw_corrected)
        ));
        out.push_str("division,zones,d_sw,d_redispatch,d_sw_corr\n");
        for row in &self.rows {
            match &row.result {
                Ok(rep) => {
                    let d_sw = rep.sw - self.baseline.sw;
                    let d_rd = rep.redispatch_cost - self.baseline.redispatch_cost;
                    // Derived, not re-subtracted, so the delta identity is
                    // exact in the emitted values.
                    let d_corr = d_sw - d_rd;
                    out.push_str(&format!(
                        "{},{},{},{},{}\n",
                        row.division,
                        row.zones,
                        fmt_money(d_sw),
                        fmt_money(d_rd),
                        fmt_money(d_corr)
                    ));
                }
                Err(_) => {
                    out.push_str(&format!(
                        "{},{},infeasible,infeasible,infeasible\n",
                        row.division, row.zones
                    ));
                }
            }
        }
        out
    }

    pub fn any_failed(&self) -> bool {
        self.rows.iter().any(|r| r.result.is_err())
    }
}

fn division_id(path: &Path, taken: &[String]) -> String {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("division")
        .to_string();
    if !taken.contains(&stem) {
        return stem;
    }
    let mut k = 2;
    loop {
        let candidate = format!("{stem}-{k}");
        if !taken.contains(&candidate) {
            return candidate;
        }
        k += 1;
    }
}

/// Evaluates the single-zone baseline plus every configured division.
/// Division evaluations run in parallel; output order follows the config.
pub fn compare_divisions<S: Scalar>(
    cfg: &EvalConfig<S>,
) -> Result<ComparisonTable<S>, StageError> {
    if cfg.division_paths.is_empty() {
        return Err(StageError::case("config", "no division files given"));
    }
    let ctx = load_case(cfg)?;
    let baseline = baseline_report(&ctx)?;

    let mut ids = Vec::new();
    for path in &cfg.division_paths {
        ids.push(division_id(path, &ids));
    }
    let rows: Vec<ComparisonRow<S>> = cfg
        .division_paths
        .par_iter()
        .zip(ids.par_iter())
        .map(|(path, id)| {
            let loaded = read(path, "parse-division").and_then(|text| {
                case_io::load_zone_division(&text, &ctx.net)
                    .map_err(|e| StageError::division("parse-division", e.to_string()))
            });
            match loaded {
                Ok(div) => {
                    let zones = div.n_zones();
                    match evaluate_division(&ctx, &div, id) {
                        Ok(rep) => ComparisonRow {
                            division: id.clone(),
                            zones,
                            result: Ok(rep),
                        },
                        Err(e) => ComparisonRow {
                            division: id.clone(),
                            zones,
                            result: Err(e.to_string()),
                        },
                    }
                }
                Err(e) => ComparisonRow {
                    division: id.clone(),
                    zones: 0,
                    result: Err(e.to_string()),
                },
            }
        })
        .collect();

    Ok(ComparisonTable { baseline, rows })
}

/// The always-computed single-zone reference settlement.
pub fn baseline_report<S: Scalar>(
    ctx: &CaseContext<S>,
) -> Result<SettlementReport<S>, StageError> {
    let single = ZoneDivision::single_zone(&ctx.net, "ALL");
    evaluate_division(ctx, &single, "baseline")
}

fn write(path: &Path, content: &str) -> Result<(), StageError> {
    fs::write(path, content)
        .map_err(|e| StageError::case("output", format!("{}: {e}", path.display())))
}

/// Writes `<id>.report.txt` (+ `<id>.zones.csv` when feasible).
pub fn write_division_outputs<S: Scalar>(
    id: &str,
    result: &Result<SettlementReport<S>, String>,
    out_dir: &Path,
) -> Result<(), StageError> {
    match result {
        Ok(rep) => {
            write(&out_dir.join(format!("{id}.report.txt")), &rep.to_text())?;
            write(&out_dir.join(format!("{id}.zones.csv")), &rep.per_zone_csv())
        }
        Err(reason) => write(
            &out_dir.join(format!("{id}.report.txt")),
            &SettlementReport::<S>::infeasible_stub(id, reason),
        ),
    }
}

/// Writes the comparison CSV plus baseline and per-division reports.
pub fn write_comparison_outputs<S: Scalar>(
    table: &ComparisonTable<S>,
    out_dir: &Path,
) -> Result<(), StageError> {
    fs::create_dir_all(out_dir)
        .map_err(|e| StageError::case("output", format!("{}: {e}", out_dir.display())))?;
    write_division_outputs(
        "baseline",
        &Ok(table.baseline.clone()),
        out_dir,
    )?;
    for row in &table.rows {
        write_division_outputs(&row.division, &row.result, out_dir)?;
    }
    write(&out_dir.join("comparison.csv"), &table.to_csv())
}
