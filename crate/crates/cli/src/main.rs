//! `mklrate` command-line driver.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! computation fails.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mklrate::diagnostics::diagnose;
use mklrate::harness::{
    compare_profiles, run_sweep, single_fit, write_csv, ExperimentConfig, SweepSummary,
};
use mklrate::Error;

use output::{sig4, write_atomic};

#[derive(Parser, Debug)]
#[command(name = "mklrate", version, about = "Elastic-net MKL rate experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one sample and print the solution report.
    Solve(SingleArgs),
    /// Run every (n, replication) cell; write results.csv and summary.json.
    Sweep(CommonArgs),
    /// Run the configuration under both norm profiles with paired seeds.
    Compare(CommonArgs),
    /// Print incoherence and norm diagnostics for one sample.
    Diagnose(SingleArgs),
    /// Print empirical versus configured kernel eigenvalues.
    Spectrum(SpectrumArgs),
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Base seed; overrides the configuration.
    #[arg(long, value_name = "U64", env = "MKLRATE_SEED")]
    seed: Option<u64>,
    /// Worker threads (default: available cores).
    #[arg(long, value_name = "N")]
    jobs: Option<usize>,
    /// Suppress the human-readable summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args, Debug)]
struct SingleArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sample size (default: largest size of the grid).
    #[arg(long)]
    n: Option<usize>,
    /// Replication index of the cell to reproduce.
    #[arg(long, default_value_t = 0)]
    rep: usize,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    #[command(flatten)]
    single: SingleArgs,
    /// Number of eigenvalues to print.
    #[arg(long, default_value_t = 10)]
    top: usize,
}

/// Failures mapped to exit codes.
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parameter { .. } | Error::Domain { .. } | Error::Json(_) => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn load_config(args: &CommonArgs) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Failure::Usage(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let mut config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("invalid config {}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn configure_threads(jobs: Option<usize>) -> CliResult {
    if let Some(jobs) = jobs {
        if jobs == 0 {
            return Err(Failure::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn output_dir(args: &CommonArgs) -> CliResult<PathBuf> {
    let dir = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    Ok(dir)
}

fn write_json<T: serde::Serialize>(dir: &Path, name: &str, value: &T) -> CliResult {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    write_atomic(&dir.join(name), text.as_bytes())
}

fn single_n(config: &ExperimentConfig, args: &SingleArgs) -> usize {
    args.n
        .unwrap_or_else(|| *config.n_grid.last().expect("validated grid is nonempty"))
}

fn cmd_solve(args: &SingleArgs) -> CliResult {
    let config = load_config(&args.common)?;
    configure_threads(args.common.jobs)?;
    let n = single_n(&config, args);
    let fit = single_fit(&config, n, args.rep)?;
    let report = fit.solution.report();
    if let Some(dir) = &args.common.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        write_json(dir, "solution.json", &report)?;
    }
    if !args.common.quiet {
        let plan = &report.plan;
        println!(
            "n = {n}, lambda1 = {}, lambda2 = lambda3 = {}",
            sig4(plan.lambda1),
            sig4(plan.lambda2)
        );
        println!(
            "converged in {} sweeps, KKT residual {}, objective {}",
            report.sweeps_used,
            sig4(report.kkt_residual),
            sig4(*report.objective_history.last().unwrap_or(&f64::NAN))
        );
        println!(
            "active set {:?} (truth {:?}), excess risk {}",
            report.active_set,
            fit.truth.active_set(),
            sig4(fit.err_l2sq)
        );
        for b in &report.blocks {
            println!(
                "  block {:>3}: empirical norm {}, RKHS norm {}",
                b.index,
                sig4(b.empirical_norm),
                sig4(b.rkhs_norm)
            );
        }
    }
    Ok(())
}

fn cmd_sweep(args: &CommonArgs) -> CliResult {
    let config = load_config(args)?;
    configure_threads(args.jobs)?;
    let dir = output_dir(args)?;
    let report = run_sweep(&config)?;

    // Diagnostics on the smallest sample keep the range computations cheap.
    let diagnostics = single_fit(&config, config.n_grid[0], 0).and_then(|fit| {
        diagnose(&fit.gram, &fit.truth, &fit.kernels[0])
    });
    let diagnostics = match diagnostics {
        Ok(d) => Some(d),
        Err(e) => {
            eprintln!("warning: diagnostics unavailable: {e}");
            None
        }
    };

    let mut csv = Vec::new();
    write_csv(&report, &mut csv)?;
    write_atomic(&dir.join("results.csv"), &csv)?;
    write_json(&dir, "summary.json", &SweepSummary::new(&report, diagnostics))?;

    if !args.quiet {
        println!("   n   mean error   std error   d log(M)/n");
        for p in &report.per_n {
            println!(
                "{:>6}  {:>10}  {:>10}  {:>10}",
                p.n,
                sig4(p.mean_error),
                sig4(p.standard_error),
                sig4(p.secondary_term)
            );
        }
        match report.fit {
            Some(fit) => println!(
                "fitted exponent {} (se {}), reference {}",
                sig4(fit.exponent),
                sig4(fit.standard_error),
                sig4(report.reference_exponent)
            ),
            None => println!(
                "fewer than 4 sample sizes: no slope fit (reference {})",
                sig4(report.reference_exponent)
            ),
        }
        let support = report.rows.iter().filter(|r| r.support_ok).count();
        println!("support recovered in {support}/{} cells", report.rows.len());
        for w in &report.warnings {
            println!("warning: {w}");
        }
        println!("wrote {}", dir.display());
    }
    Ok(())
}

fn cmd_compare(args: &CommonArgs) -> CliResult {
    let config = load_config(args)?;
    configure_threads(args.jobs)?;
    let mut other = config.clone();
    other.profile = config.profile.other();
    let comparison = compare_profiles(&config, &other)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        write_json(dir, "comparison.json", &comparison)?;
    }
    if !args.quiet {
        println!("   n   homogeneous  inhomogeneous   ratio  inhom <= hom");
        for p in &comparison.points {
            println!(
                "{:>6}  {:>10}  {:>12}  {:>8}  {}",
                p.n,
                sig4(p.homogeneous_mean),
                sig4(p.inhomogeneous_mean),
                sig4(p.ratio),
                p.inhomogeneous_not_worse
            );
        }
        println!(
            "reference bound ratio (l2 vs l-infinity ball): {}",
            sig4(comparison.reference_bound_ratio)
        );
    }
    Ok(())
}

fn cmd_diagnose(args: &SingleArgs) -> CliResult {
    let config = load_config(&args.common)?;
    configure_threads(args.common.jobs)?;
    let n = single_n(&config, args);
    let fit = single_fit(&config, n, args.rep)?;
    let report = diagnose(&fit.gram, &fit.truth, &fit.kernels[0])?;
    if let Some(dir) = &args.common.out {
        std::fs::create_dir_all(dir)
            .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        write_json(dir, "diagnostics.json", &report)?;
    }
    if !args.common.quiet {
        println!("n = {n}, index set {:?}", report.index_set);
        println!("kappa_min = {}", sig4(report.kappa_min));
        println!("rho = {}", sig4(report.rho));
        println!("incoherence_product = {}", sig4(report.incoherence_product));
        let m = &report.mixed_norms;
        println!(
            "R1 = {}, R2 = {}, Rinf = {}",
            sig4(m.r1),
            sig4(m.r2),
            sig4(m.r_inf)
        );
        let e = &report.exponents;
        println!(
            "rate exponent {}, minimax n-exponent {} (l2 ball), entropy exponent {}",
            sig4(e.rate_exponent),
            sig4(e.minimax_l2.n_exponent),
            sig4(e.entropy_exponent)
        );
    }
    Ok(())
}

fn cmd_spectrum(args: &SpectrumArgs) -> CliResult {
    let config = load_config(&args.single.common)?;
    let n = single_n(&config, &args.single);
    let kernel = config.kernel()?;
    let fit = single_fit(&config, n, args.single.rep)?;
    let empirical = fit.gram.empirical_spectrum(0);
    let top = args.top.min(kernel.truncation_level());
    println!("   k   configured   empirical   relative gap");
    for k in 0..top {
        let mu = kernel.eigenvalues()[k];
        let emp = empirical.get(k).copied().unwrap_or(0.0);
        println!(
            "{:>4}  {:>10}  {:>10}  {:>10}",
            k + 1,
            sig4(mu),
            sig4(emp),
            sig4((emp - mu).abs() / mu)
        );
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match &cli.command {
        Command::Solve(a) => cmd_solve(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Spectrum(a) => cmd_spectrum(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
