use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use spatial_mra::decomposer::{
    filter_levels, Decomposer, DecompositionConfig, DomainRule, LevelFilterSpec, PenaltyRule,
};
use spatial_mra::exposure::{compute_exposures, AggregateOptions, ExposureArchive, WindowKind};
use spatial_mra::harness::{
    read_result, run_scenario, simulate_cohort, simulate_surfaces, write_reports, write_tables,
    SimConfig,
};
use spatial_mra::health_model::{run_model, ExposureMode, ModelSpec};
use spatial_mra::io;
use spatial_mra::wavelet_basis::{cascade, daubechies_filter, mother_wavelet};

#[derive(Parser)]
#[command(name = "spatial-mra", version, about = "Wavelet decomposition of daily pollution surfaces and scale-specific health models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Daubechies scaling function and wavelet tables.
    Basis {
        #[command(subcommand)]
        action: BasisAction,
    },
    /// Split daily surfaces into mean, low and high components.
    Decompose(DecomposeArgs),
    /// Window-averaged exposures for a cohort.
    Exposures(ExposureArgs),
    /// Mixed model of outcomes on exposures.
    Fit(FitArgs),
    /// Run a simulation scenario and write its reports.
    Simulate(SimulateArgs),
    /// Rewrite tables from a stored scenario result.
    Report(ReportArgs),
}

#[derive(Subcommand)]
enum BasisAction {
    /// Print `x,phi,psi` on the dyadic grid.
    Tabulate {
        #[arg(long, default_value_t = 5)]
        order: usize,
        #[arg(long, default_value_t = 8)]
        depth: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DecomposeArgs {
    /// CSV with `date,x1,x2,value`.
    #[arg(long)]
    surfaces: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    levels: u32,
    #[arg(long, default_value_t = 3)]
    low_cutoff: u32,
    #[arg(long, default_value_t = 5)]
    order: usize,
    /// `cv`, `fixed:<lambda>` or `fraction:<f>`.
    #[arg(long, default_value = "cv")]
    penalty: PenaltyRule,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, default_value_t = 100)]
    n_lambdas: usize,
    /// `minmax` or `periodic`.
    #[arg(long, default_value = "minmax")]
    domain: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Args)]
struct ExposureArgs {
    /// Directory written by `decompose`.
    #[arg(long)]
    decomposition: PathBuf,
    #[arg(long)]
    subjects: PathBuf,
    /// t1, t2, t3, full or last30.
    #[arg(long, default_value = "last30")]
    window: WindowKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = spatial_mra::exposure::DEFAULT_MIN_COVERAGE)]
    min_coverage: f64,
    /// Levels to remove for the filtered exposure, e.g. `6,7`.
    #[arg(long, value_delimiter = ',')]
    drop_levels: Vec<u32>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    subjects: PathBuf,
    #[arg(long)]
    exposures: PathBuf,
    /// total, triple or filtered.
    #[arg(long, default_value = "triple")]
    mode: ExposureMode,
    #[arg(long, default_value = "last30")]
    window: WindowKind,
    /// Confounder columns; all of them when omitted.
    #[arg(long, value_delimiter = ',')]
    confounders: Option<Vec<String>>,
    /// Natural spline df for calendar time.
    #[arg(long)]
    spline_df: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Directory for `fit.json` and `intervals.csv`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// `key = value` config file; defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `key=value`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Output directory of `simulate`, or its `scenario.json`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Basis {
            action: BasisAction::Tabulate { order, depth, out },
        } => tabulate(order, depth, out),
        Command::Decompose(a) => decompose(a),
        Command::Exposures(a) => exposures(a),
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Report(a) => report(a),
    }
}

fn tabulate(order: usize, depth: u32, out: Option<PathBuf>) -> Result<()> {
    let filter = daubechies_filter(order)?;
    let phi = cascade(&filter, depth)?;
    let psi = mother_wavelet(&filter, &phi)?;
    let sink: Box<dyn Write> = match out {
        Some(p) => Box::new(std::fs::File::create(&p).with_context(|| p.display().to_string())?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["x", "phi", "psi"])?;
    for i in 0..phi.values().len() {
        w.write_record([
            phi.knot(i).to_string(),
            phi.values()[i].to_string(),
            psi.values()[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn decompose(a: DecomposeArgs) -> Result<()> {
    let domain = match a.domain.as_str() {
        "minmax" => DomainRule::MinMax,
        "periodic" => DomainRule::Periodic,
        other => bail!("unknown domain '{other}' (minmax or periodic)"),
    };
    let config = DecompositionConfig {
        levels: a.levels,
        low_cutoff: a.low_cutoff,
        order: a.order,
        penalty: a.penalty,
        folds: a.folds,
        n_lambdas: a.n_lambdas,
        domain,
        seed: a.seed,
        workers: a.workers,
        ..DecompositionConfig::default()
    };
    let surfaces = io::read_surfaces(&a.surfaces)?;
    let outcome = Decomposer::new(config.clone())?.decompose_batch(&surfaces)?;
    for f in &outcome.failures {
        eprintln!("warning: {} skipped: {}", f.date, f.error);
    }
    for d in &outcome.days {
        for w in &d.cv_warnings {
            eprintln!("warning: {}: {w}", d.date);
        }
    }
    io::write_decomposition_dir(&a.out, &outcome.days, &config)?;
    eprintln!(
        "decomposed {} of {} days into {}",
        outcome.days.len(),
        surfaces.len(),
        a.out.display()
    );
    Ok(())
}

fn exposures(a: ExposureArgs) -> Result<()> {
    let (config, days) = io::read_decomposition_dir(&a.decomposition)?;
    let mut archive = ExposureArchive::from_decomposed(&days)?;
    if !a.drop_levels.is_empty() {
        let spec = LevelFilterSpec::new(a.drop_levels.iter().copied(), config.levels)?;
        let decomposer = Decomposer::new(config)?;
        let mut grid = None;
        for d in &days {
            // Reuse the design while the points stay the same.
            if grid.as_ref().is_none_or(|(pts, _)| pts != &d.points) {
                grid = Some((d.points.clone(), decomposer.prepare_grid(&d.points)?));
            }
            let (_, cache) = grid.as_ref().expect("grid prepared");
            archive.set_filtered(d.date, filter_levels(d, &spec, cache.design())?)?;
        }
    }
    let cohort = io::read_subjects(&a.subjects)?;
    let opts = AggregateOptions {
        min_coverage: a.min_coverage,
        ..AggregateOptions::default()
    };
    let records = compute_exposures(&cohort.subjects, a.window, &archive, &opts)?;
    io::write_exposures(&a.out, &records)?;
    eprintln!("{} exposure rows written to {}", records.len(), a.out.display());
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let cohort = io::read_subjects(&a.subjects)?;
    let records = io::read_exposures(&a.exposures)?;
    let mut spec = ModelSpec::new(a.mode, a.window);
    spec.confounders = a.confounders;
    spec.spline_df = a.spline_df;
    spec.alpha = a.alpha;
    let result = run_model(&spec, &cohort, &records)?;
    std::fs::create_dir_all(&a.out)?;
    io::write_fit_json(&a.out.join("fit.json"), &result)?;
    io::write_intervals(&a.out.join("intervals.csv"), &result.ci)?;
    println!("{:<16} {:>12} {:>12} {:>12} {:>12}", "coefficient", "estimate", "std_error", "lower", "upper");
    for r in &result.ci.rows {
        println!(
            "{:<16} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
            r.name, r.estimate, r.std_error, r.lower, r.upper
        );
    }
    if let Some(c) = &result.contrast {
        println!("low - high: {:.4} (se {:.4}, p {:.4})", c.estimate, c.std_error, c.p_value);
    }
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut config = match &a.config {
        Some(p) => SimConfig::from_file(p)?,
        None => SimConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("override '{kv}' is not key=value"))?;
        config.set(k.trim(), v.trim())?;
    }
    config.validate()?;
    let result = run_scenario(&config)?;
    write_reports(&result, &a.out)?;
    // Inputs for running the individual stages by hand.
    let sims = simulate_surfaces(&config)?;
    io::write_surfaces(&a.out.join("surfaces.csv"), &sims.surfaces)?;
    let cohort = simulate_cohort(&config, &sims, 0)?.cohort;
    io::write_subjects(&a.out.join("subjects.csv"), &cohort)?;
    print_flags(&result);
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let path = if a.input.is_dir() {
        a.input.join("scenario.json")
    } else {
        a.input.clone()
    };
    let result = read_result(&path)?;
    write_tables(&result, &a.out)?;
    print_flags(&result);
    Ok(())
}

fn print_flags(result: &spatial_mra::harness::ScenarioResult) {
    for f in &result.flags {
        println!(
            "{} {} value {:.4} threshold {}",
            if f.passed { "PASS" } else { "FAIL" },
            f.rule,
            f.value,
            f.threshold
        );
    }
}
