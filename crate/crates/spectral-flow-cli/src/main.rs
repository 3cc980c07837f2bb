//! `sflow`: spectral flow of paths of self-adjoint operators.
//!
//! Subcommands: `path` analyzes an operator path read from a sample file,
//! `pde` runs the elliptic-system bifurcation report, `ham` runs the
//! two-pathway homoclinic report, and `selftest` checks the engine's
//! defining properties on seeded random paths. Reports are deterministic
//! structured text (the timestamp line can be switched off), eigenvalue
//! curves go to CSV. Exit codes: 0 success, 1 invalid configuration or
//! input, 2 numerical failure, 3 I/O failure.

mod config;
mod error;
mod pathfile;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use spectral_flow::ham::{hamiltonian_report, HamOptions};
use spectral_flow::pde::{assemble_hessian_path, bifurcation_report, newton_branch_search, BranchSearch};
use spectral_flow::selftest::run_selftest;
use spectral_flow::sflcore::{equivariant_spectral_flow, FlowEngine, Verdict};
use spectral_flow::Error as FlowError;

use config::{CommonRun, FileConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(
    name = "sflow",
    version,
    about = "Spectral flow of paths of self-adjoint operators",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    /// TOML configuration file (sections [run], [engine], and one per subcommand).
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory for report.txt and the CSV eigenvalue curves.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads for the sample engine.
    #[arg(long, value_name = "P")]
    parallel: Option<usize>,
    /// Omit the timestamp line, making the report byte-reproducible.
    #[arg(long)]
    no_timestamp: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze an operator path read from a plain-text sample file.
    Path {
        /// The operator-path file (alternatively set [path] file in the config).
        file: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Bifurcation report for the two-component elliptic system on (0, pi).
    Pde {
        /// Built-in problem: indefinite-cubic or even-quartic.
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Sine modes per component.
        #[arg(long, value_name = "N")]
        modes: Option<usize>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Two-pathway report for a homoclinic Hamiltonian operator path.
    Ham {
        /// Built-in problem: pejsachowicz-loop.
        #[arg(long, value_name = "NAME")]
        preset: Option<String>,
        /// Truncation half-width T of the time window [-T, T].
        #[arg(long, value_name = "T")]
        truncation: Option<f64>,
        /// Interior time-grid nodes (even).
        #[arg(long, value_name = "M")]
        grid: Option<usize>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Property self-test of the engine on seeded random paths.
    Selftest {
        /// Seed for the reproducible case generator.
        #[arg(long, value_name = "K")]
        seed: Option<u64>,
        #[command(flatten)]
        common: CommonFlags,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let ok = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
            let _ = e.print();
            return ExitCode::from(if ok { 0 } else { 1 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let common = match &cli.command {
        Command::Path { common, .. }
        | Command::Pde { common, .. }
        | Command::Ham { common, .. }
        | Command::Selftest { common, .. } => common,
    };
    let cfg = match &common.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::empty(),
    };
    let run = config::common_run(
        &cfg,
        common.out.clone(),
        common.parallel,
        common.no_timestamp,
    )?;
    init_parallel(run.parallel)?;

    match &cli.command {
        Command::Path { file, .. } => run_path(&cfg, &run, file.clone()),
        Command::Pde { preset, modes, .. } => run_pde(&cfg, &run, preset.as_deref(), *modes),
        Command::Ham {
            preset,
            truncation,
            grid,
            ..
        } => run_ham(&cfg, &run, preset.as_deref(), *truncation, *grid),
        Command::Selftest { seed, .. } => run_selftest_cmd(&cfg, &run, *seed),
    }
}

/// Configure the global worker pool; sampling results do not depend on the
/// degree, only wall time does.
fn init_parallel(parallel: Option<usize>) -> CliResult<()> {
    if let Some(threads) = parallel {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("cannot configure parallelism: {e}")))?;
    }
    Ok(())
}

fn uniform_grid(l0: f64, l1: f64, points: usize) -> Vec<f64> {
    let n = points.max(2);
    (0..n)
        .map(|i| l0 + (l1 - l0) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Errors that mean an analysis method declines the input (and the report
/// degrades gracefully) rather than that the computation broke.
fn analysis_declined(e: &FlowError) -> bool {
    matches!(
        e,
        FlowError::NonRegularCrossing { .. }
            | FlowError::NearKernelAmbiguity { .. }
            | FlowError::BoundaryEigenvalue { .. }
            | FlowError::AmbiguousKernel { .. }
            | FlowError::DegenerateForm { .. }
    )
}

fn run_path(cfg: &FileConfig, run: &CommonRun, file_flag: Option<PathBuf>) -> CliResult<()> {
    let spec = config::path_run(cfg, file_flag)?;
    let text = std::fs::read_to_string(&spec.file).map_err(|e| {
        CliError::Io(format!(
            "cannot read operator-path file {}: {e}",
            spec.file.display()
        ))
    })?;
    let parsed = pathfile::parse_path_file(&text, spec.sym_tol)?;
    let path = parsed.to_operator_path()?;
    let opts = config::engine_options(cfg)?;

    let engine = FlowEngine::new(&path, opts.clone());
    engine.samples(&uniform_grid(parsed.lambda0, parsed.lambda1, run.curve_points))?;
    let endpoint_margins = engine.endpoint_invertibility()?;
    let partition = engine.partition_flow()?;

    let mut skipped = Vec::new();
    let crossings = match engine.find_crossings() {
        Ok(list) => Some(list),
        Err(e) if analysis_declined(&e) => {
            skipped.push(format!("crossing analysis declined: {e}"));
            None
        }
        Err(e) => return Err(e.into()),
    };
    let morse = match engine.morse_flow() {
        Ok(flow) => Some(flow),
        Err(e) if analysis_declined(&e) => {
            skipped.push(format!("endpoint Morse difference declined: {e}"));
            None
        }
        Err(e) => return Err(e.into()),
    };

    // Cross-check whichever methods completed; a mismatch is a numerical
    // failure, not a report line.
    if let Some(m) = morse {
        if m != partition.flow {
            return Err(CliError::Numerical(format!(
                "computation pathways disagree: partition sfl = {}, morse difference = {m}",
                partition.flow
            )));
        }
    }
    if let Some(list) = &crossings {
        if list.iter().all(|c| c.regular) {
            let crossing_flow: i64 = list.iter().map(|c| c.signature).sum();
            if crossing_flow != partition.flow {
                return Err(CliError::Numerical(format!(
                    "computation pathways disagree: partition sfl = {}, crossing-form sfl = {crossing_flow}",
                    partition.flow
                )));
            }
        }
    }

    let equivariant = match path.involution() {
        Some(_) => Some(equivariant_spectral_flow(&path, &opts)?),
        None => None,
    };
    let certified = match &equivariant {
        Some(eq) => !eq.flow.is_zero(),
        None => partition.flow != 0,
    };
    let verdict = if certified {
        Verdict::BifurcationCertified
    } else {
        Verdict::Inconclusive
    };

    let mut rep = report::Report::new("path", run.timestamp);
    report::render_path(
        &mut rep,
        &spec.file.display().to_string(),
        parsed.dim,
        parsed.samples.len(),
        (parsed.lambda0, parsed.lambda1),
        endpoint_margins,
        &partition,
        morse,
        crossings.as_deref(),
        &skipped,
        equivariant.as_ref(),
        verdict,
    );
    let csv = report::csv_text(&engine.cached_curves())?;
    report::emit(run, &rep, &[(report::curve_file_name("path"), csv)])
}

fn run_pde(
    cfg: &FileConfig,
    run: &CommonRun,
    preset_flag: Option<&str>,
    modes_flag: Option<usize>,
) -> CliResult<()> {
    let spec = config::pde_run(cfg, preset_flag, modes_flag)?;
    let opts = config::engine_options(cfg)?;
    let pde_report = bifurcation_report(&spec.problem, &opts)?;

    let mut branches: Vec<(f64, BranchSearch)> = Vec::new();
    if spec.problem.nonlinearity.is_some() {
        for crossing in &pde_report.crossings {
            let search = newton_branch_search(
                &spec.problem,
                crossing.lambda,
                spec.branch_radius,
                spec.branch_grid,
            )?;
            branches.push((crossing.lambda, search));
        }
    }

    let path = assemble_hessian_path(&spec.problem)?;
    let engine = FlowEngine::new(&path, opts);
    let (l0, l1) = spec.problem.lambda_range;
    engine.samples(&uniform_grid(l0, l1, run.curve_points))?;

    let mut rep = report::Report::new("pde", run.timestamp);
    report::render_pde(&mut rep, spec.preset.as_deref(), &pde_report, &branches);
    let csv = report::csv_text(&engine.cached_curves())?;
    report::emit(run, &rep, &[(report::curve_file_name("pde"), csv)])
}

fn run_ham(
    cfg: &FileConfig,
    run: &CommonRun,
    preset_flag: Option<&str>,
    truncation_flag: Option<f64>,
    grid_flag: Option<usize>,
) -> CliResult<()> {
    let spec = config::ham_run(cfg, preset_flag, truncation_flag, grid_flag)?;
    let opts = HamOptions {
        flow: config::engine_options(cfg)?,
        scan_points: spec.scan_points,
        convergence: spec.convergence,
    };
    let ham_report = hamiltonian_report(&spec.problem, &opts)?;

    let mut rep = report::Report::new("ham", run.timestamp);
    report::render_ham(&mut rep, spec.preset.as_deref(), spec.problem.dim, &ham_report);
    let mut csvs = Vec::new();
    for block in &ham_report.blocks {
        csvs.push((
            report::curve_file_name(&block.name),
            report::csv_text(&block.curve)?,
        ));
    }
    report::emit(run, &rep, &csvs)
}

fn run_selftest_cmd(cfg: &FileConfig, run: &CommonRun, seed_flag: Option<u64>) -> CliResult<()> {
    let opts = config::selftest_run(cfg, seed_flag, config::engine_options(cfg)?)?;
    let outcome = run_selftest(&opts)?;

    let mut rep = report::Report::new("selftest", run.timestamp);
    report::render_selftest(
        &mut rep,
        opts.agreement_cases,
        opts.property_cases,
        opts.max_dim,
        &outcome,
    );
    report::emit(run, &rep, &[])?;
    if !outcome.passed {
        return Err(CliError::Numerical(format!(
            "selftest failed with {} violation(s)",
            outcome.total_violations()
        )));
    }
    Ok(())
}
