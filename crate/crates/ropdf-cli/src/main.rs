//! Command-line front end for the reduced-order PDF pipeline.
//!
//! Exit codes: 0 on success, 2 for configuration or usage problems, 3 when
//! a run fails after the configuration was accepted.

use clap::{Args, Parser, Subcommand};
use ropdf::config::ExperimentConfig;
use ropdf::pipeline::{
    cross_case_slope, emit_complexity, emit_joint, emit_marginal, run_complexity, run_joint,
    run_marginal,
};
use ropdf::{build_noise, parse_case_bundle};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "ropdf",
    about = "Failure-probability estimation for stochastic power-grid models",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file
    #[arg(long)]
    config: PathBuf,
    /// Override the configured random seed
    #[arg(long)]
    seed: Option<u64>,
    /// Shrink ensembles and burn-in for a fast smoke run
    #[arg(long)]
    quick: bool,
    /// Override the configured output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-line failure probabilities from the 1D RO-PDF equation
    Marginal(RunArgs),
    /// Joint failure probability of a line pair from the 2D equation
    Joint(RunArgs),
    /// L1 error against the benchmark density over a ladder of ensemble sizes
    Complexity {
        /// Experiment configuration file; repeat for a cross-case sweep
        #[arg(long, required = true)]
        config: Vec<PathBuf>,
        /// Override the configured random seed
        #[arg(long)]
        seed: Option<u64>,
        /// Shrink ensembles and burn-in for a fast smoke run
        #[arg(long)]
        quick: bool,
        /// Override the configured output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated working-ensemble sizes
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
        sizes: Vec<usize>,
        /// Error level defining the required sample count
        #[arg(long, default_value_t = 0.01)]
        gamma: f64,
    },
    /// Mutual information between the two recorded line energies
    Mutualinfo(RunArgs),
    /// Check a configuration and its case bundle without running anything
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_config_at(
    path: &PathBuf,
    seed: Option<u64>,
    quick: bool,
    out: &Option<PathBuf>,
) -> Result<ExperimentConfig, ExitCode> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.output_dir = out.clone();
    }
    if quick {
        cfg.m_r = cfg.m_r.min(500);
        cfg.m_kde = cfg.m_kde.min(1000);
        cfg.burn_in_t = cfg.burn_in_t.min(5.0);
    }
    Ok(cfg)
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, ExitCode> {
    load_config_at(&args.config, args.seed, args.quick, &args.out)
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(3)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Command::Marginal(args) => {
            let cfg = match load_config(&args) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let run = match run_marginal(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            for s in &run.summaries {
                println!(
                    "line {}: P[u > {:.4}] = {:.4e} (kde {:.4e}, empirical {:.4e}) \
                     at t = {:.2}, L1 = {:.4e}",
                    s.line, s.rating, s.p_ropdf, s.p_kde, s.p_empirical, s.peak_time, s.l1_vs_kde
                );
            }
            match emit_marginal(&cfg, &run) {
                Ok(paths) => {
                    println!("wrote {} artifacts to {}", paths.len(), cfg.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Joint(args) => {
            let cfg = match load_config(&args) {
                Ok(c) => c,
                Err(code) => return code,
            };
            let run = match run_joint(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
            let s = &run.summary;
            println!(
                "joint {} & {}: P = {:.4e} (independent {:.4e}, kde {:.4e}, \
                 empirical {:.4e}) at t = {:.2}",
                s.lines[0],
                s.lines[1],
                s.p_joint_ropdf,
                s.p_independent,
                s.p_joint_kde,
                s.p_joint_empirical,
                s.peak_time
            );
            match emit_joint(&cfg, &run) {
                Ok(paths) => {
                    println!("wrote {} artifacts to {}", paths.len(), cfg.output_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Complexity {
            config,
            seed,
            quick,
            out,
            sizes,
            gamma,
        } => {
            let mut scaling: Vec<(usize, usize)> = Vec::new();
            for path in &config {
                let cfg = match load_config_at(path, seed, quick, &out) {
                    Ok(c) => c,
                    Err(code) => return code,
                };
                let report = match run_complexity(&cfg, &sizes, gamma) {
                    Ok(r) => r,
                    Err(e) => return fail(e),
                };
                println!("{} ({} edges):", path.display(), report.edges);
                for ((m, re), ke) in report
                    .sizes
                    .iter()
                    .zip(&report.ropdf_errors)
                    .zip(&report.kde_errors)
                {
                    println!("  m = {m}: L1(ropdf) = {re:.4e}, L1(kde) = {ke:.4e}");
                }
                for l in &report.lines {
                    match l.ropdf_required {
                        Some(m) => println!("  line {}: m* = {m}", l.line),
                        None => println!("  line {}: gamma = {gamma} not reached", l.line),
                    }
                }
                if let Some(agg) = report.ropdf_aggregate {
                    println!("  aggregate m* = {agg}");
                    scaling.push((report.edges, agg));
                }
                if let (Some(rs), Some(ks)) = (report.ropdf_slope, report.kde_slope) {
                    println!("  log-log slopes: ropdf {rs:.3}, kde {ks:.3}");
                }
                match emit_complexity(&cfg, &report) {
                    Ok(path) => println!("  wrote {}", path.display()),
                    Err(e) => return fail(e),
                }
            }
            if let Some(s) = cross_case_slope(&scaling) {
                println!("cross-case slope of m* vs edge count: {s:.3}");
            }
            ExitCode::SUCCESS
        }
        Command::Mutualinfo(args) => {
            let cfg = match load_config(&args) {
                Ok(c) => c,
                Err(code) => return code,
            };
            match run_joint(&cfg) {
                Ok(run) => {
                    println!(
                        "mutual information at t = {:.2}: ropdf {:.4e}, kde {:.4e}",
                        run.summary.peak_time,
                        run.summary.mutual_information,
                        run.summary.mutual_information_kde
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Validate { config } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let (case, _) = match parse_case_bundle(&cfg.bundle) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            if let Err(e) = build_noise(case.n(), cfg.r, cfg.theta, cfg.alpha) {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            for l in cfg.record_lines.iter().chain(cfg.tripped_line.iter()) {
                if !case.has_edge(*l) {
                    eprintln!("error: line {l} is not an edge of the case");
                    return ExitCode::from(2);
                }
            }
            println!(
                "ok: {} buses, {} lines, {} recorded",
                case.n(),
                case.edges().len(),
                cfg.record_lines.len()
            );
            ExitCode::SUCCESS
        }
    }
}
