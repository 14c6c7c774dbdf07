//! `rotasurv` command line: config-driven generate / simulate / analyze /
//! compare. Exit codes: 0 ok, 2 config or validation error, 3 data error,
//! 4 capacity error.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::allocation::AllocationKind;
use crate::analytics::{
    cov_full, cov_partial, mise, var_ise_exact_small, var_ise_full_asym, var_ise_partial_asym,
    EXACT_PATH_CAP,
};
use crate::config::RunConfig;
use crate::designs::{validate_design, DesignKind, DesignSpec};
use crate::error::{Error, Result};
use crate::harness::{compare_reports, run_scenario, EstimatorChoice, SimulationReport};

#[derive(Parser)]
#[command(
    name = "rotasurv",
    version,
    about = "Rotation sampling designs and estimators for populations of curves"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic population CSV from the config
    Gen(CommonArgs),
    /// Run the Monte Carlo scenario grid and write reports
    Simulate(SimulateArgs),
    /// Write analytic covariance kernels, MISE and Var(ISE) tables
    Analyze(CommonArgs),
    /// Compare simulation reports cell by cell
    Compare(CompareArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file
    #[arg(long)]
    config: PathBuf,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory override
    #[arg(long, env = "ROTASURV_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Worker threads (0 = runtime default)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    /// Simulation report JSON files (two or more)
    reports: Vec<PathBuf>,
    /// Output directory
    #[arg(long, env = "ROTASURV_OUT")]
    out: Option<PathBuf>,
}

/// Parse arguments and run; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Analyze(args) => cmd_analyze(&args),
        Command::Compare(args) => cmd_compare(&args),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn scenario_id(config_path: &Path) -> String {
    config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into())
}

fn cmd_gen(args: &CommonArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    let mut spec = config.synthetic_spec()?.clone();
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let pop = crate::synth::synth_population(&spec)?;
    let dir = config.out_dir(args.out.as_deref());
    ensure_dir(&dir)?;
    let path = dir.join(&config.output.population_csv);
    pop.save_csv(&path)?;
    println!(
        "wrote {} ({} units, {} strata, {} grid points)",
        path.display(),
        pop.n_units(),
        pop.n_strata(),
        pop.grid().len()
    );
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let config = RunConfig::load(&args.common.config)?;
    let pop = config.population(None)?;
    let scenario = config.scenario(&pop, &scenario_id(&args.common.config), args.common.seed)?;
    let workers = args.workers.unwrap_or(config.scenario.workers);
    let report = if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| run_scenario(&scenario, &pop))?
    } else {
        run_scenario(&scenario, &pop)?
    };

    let dir = config.out_dir(args.common.out.as_deref());
    ensure_dir(&dir)?;
    let json_path = dir.join("report.json");
    std::fs::write(&json_path, report.to_json())?;
    report.write_long_csv(&dir.join("report_long.csv"))?;
    if scenario.estimator == EstimatorChoice::Composite {
        report.write_composite_optima_csv(&dir.join("composite_optima.csv"))?;
    }
    for cell in &report.cells {
        println!(
            "cell {}: mise={:.6e} sd_ise={:.6e} degenerate={}",
            cell.scenario_id, cell.mise, cell.sd_ise, cell.flags.degenerate_overlap
        );
    }
    println!("wrote {}", json_path.display());
    Ok(())
}

#[derive(Serialize)]
struct AnalysisRow {
    alpha: f64,
    mise: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_ise: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    var_ise_exact: Option<f64>,
}

#[derive(Serialize)]
struct AnalysisReport {
    schema_version: u32,
    design_kind: String,
    rows: Vec<AnalysisRow>,
}

fn cmd_analyze(args: &CommonArgs) -> Result<()> {
    let config = RunConfig::load(&args.config)?;
    if config.allocation.kind == AllocationKind::Adaptive {
        return Err(Error::Config(
            "adaptive allocation has random sizes; analytic kernels need a planned allocation".into(),
        ));
    }
    if config.design.kind == DesignKind::ConventionalRotation {
        return Err(Error::Config(
            "conventional rotation has no analytic covariance kernel here; simulate it instead".into(),
        ));
    }
    let pop = config.population(None)?;
    let duration = *pop.grid().duration();
    let taus = config.taus_hours(duration);
    let tau_idx = crate::designs::snap_taus(pop.grid(), &taus)?;
    let dir = config.out_dir(args.out.as_deref());
    ensure_dir(&dir)?;

    let mut rows = Vec::new();
    for &alpha in &config.scenario.alpha_grid {
        let alpha_vec = vec![alpha; pop.n_strata()];
        let trace = crate::allocation::plan_trace(
            &config.allocation,
            &pop,
            config.design.kind,
            &alpha_vec,
            &tau_idx,
        )?;
        let spec = DesignSpec {
            kind: config.design.kind,
            taus_hours: taus.clone(),
            alpha: alpha_vec,
            density: config.design.density.clone(),
            pattern: None,
        };
        let vd = validate_design(&spec, &trace, &pop)?;
        let (kernel, var_ise) = match vd.kind() {
            DesignKind::FullReplacement => {
                let k = cov_full(&pop, &vd)?;
                let v = if vd.replacements() >= 1 { Some(var_ise_full_asym(&pop, &vd)?) } else { None };
                (k, v)
            }
            _ => {
                let k = cov_partial(&pop, &vd)?;
                (k, Some(var_ise_partial_asym(&pop, &vd)?))
            }
        };
        if config.analyze.kernels {
            kernel.write_csv(&dir.join(format!("kernel_alpha{alpha}.csv")))?;
        }
        let var_ise_exact = if config.analyze.exact_var_ise {
            Some(var_ise_exact_small(&pop, &vd, EXACT_PATH_CAP)?)
        } else {
            None
        };
        rows.push(AnalysisRow { alpha, mise: mise(&kernel), var_ise, var_ise_exact });
    }
    let report = AnalysisReport {
        schema_version: 1,
        design_kind: config.design.kind.as_str().into(),
        rows,
    };
    let path = dir.join("analysis.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report).expect("serializable"))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    if args.reports.len() < 2 {
        return Err(Error::Config("compare needs at least two report files".into()));
    }
    let reports: Vec<SimulationReport> = args
        .reports
        .iter()
        .map(|p| SimulationReport::from_json_file(p))
        .collect::<Result<_>>()?;
    let table = compare_reports(&reports)?;
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    ensure_dir(&dir)?;
    let path = dir.join("comparison.csv");
    table.write_csv(&path)?;
    println!("wrote {} ({} rows)", path.display(), table.rows.len());
    Ok(())
}
