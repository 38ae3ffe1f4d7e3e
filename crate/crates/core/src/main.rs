//! Command-line driver: resolve a configuration, run the requested task,
//! write the JSON report and CSV tables, print a short summary.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use pearcey_lab::config::{ExperimentConfig, Overrides};
use pearcey_lab::experiment::{emit, run_experiment, Task};

/// Environment fallback for `--threads`; the flag wins when both are set.
const THREADS_ENV: &str = "PEARCEY_LAB_THREADS";

#[derive(Parser)]
#[command(
    name = "pearcey-lab",
    version,
    about = "Monte Carlo and quadrature laboratory for the Pearcey point process"
)]
struct Cli {
    /// Flat key-value configuration file (TOML syntax)
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Master seed; trial i draws from a stream derived from (seed, i)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of Monte Carlo trials
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// External source strength
    #[arg(long, global = true, allow_negative_numbers = true)]
    rho: Option<f64>,
    /// Matrix dimension (even)
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Band-widening epsilon for the rigidity guides
    #[arg(long, global = true)]
    eps: Option<f64>,
    /// Output directory for the report and tables
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Worker threads; falls back to PEARCEY_LAB_THREADS, then 1.
    /// Results are identical for every value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the scaling-law hypotheses against the closed forms
    Audit,
    /// Full pipeline: audit, figure tables, CLT, rigidity, exponential moments
    Simulate,
    /// Standardized counting and point samples with their KS distances
    Clt,
    /// Sup-deviation coverage and band-entry fractions plus figure tables
    Rigidity,
    /// Kernel-diagonal density table and the integrated mean-count cross-check
    Kernel,
    /// Exponential-moment ratio over the configured abscissa grid
    Expmoment,
    /// Figure tables from the plotted trial only
    Figures,
}

impl Command {
    fn task(self) -> Task {
        match self {
            Command::Audit => Task::Audit,
            Command::Simulate => Task::Simulate,
            Command::Clt => Task::Clt,
            Command::Rigidity => Task::Rigidity,
            Command::Kernel => Task::Kernel,
            Command::Expmoment => Task::ExpMoment,
            Command::Figures => Task::Figures,
        }
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(raw) => {
            let parsed = raw
                .parse::<usize>()
                .with_context(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
            Ok(Some(parsed))
        }
        Err(_) => Ok(None),
    }
}

fn overrides(cli: &Cli) -> Result<Overrides> {
    Ok(Overrides {
        n: cli.n,
        rho: cli.rho,
        trials: cli.trials,
        master_seed: cli.seed,
        epsilon: cli.eps,
        output_dir: cli.out.clone(),
        threads: cli.threads.or(threads_from_env()?),
    })
}

fn summarize(report: &pearcey_lab::report::JsonReport) {
    if let Some(audit) = &report.audit {
        println!(
            "audit: hypotheses {} (variance log-slope estimate {:.6})",
            if audit.all_hold { "hold" } else { "VIOLATED" },
            audit.report.variance_slope_estimate
        );
    }
    if let Some(clt) = &report.clt {
        println!(
            "clt counting at s={:.3}: mean {:+.4}, variance {:.4}, KS {:.4}",
            clt.s, clt.counting.mean, clt.counting.variance, clt.counting.ks_distance
        );
        println!(
            "clt point at k={}: mean {:+.4}, variance {:.4}, KS {:.4}",
            clt.k, clt.point.mean, clt.point.variance, clt.point.ks_distance
        );
    }
    if let Some(rig) = &report.rigidity {
        for rung in &rig.coverage {
            println!(
                "coverage at eps={:.3}: counting {:.3}, point {:.3}",
                rung.epsilon, rung.counting_fraction, rung.point_fraction
            );
        }
        println!(
            "band entry at eps={:.3}: counting {:.3}, point {:.3}",
            rig.band_entry.epsilon,
            rig.band_entry.counting_fraction,
            rig.band_entry.point_fraction
        );
    }
    if let Some(em) = &report.exp_moment {
        match em.ratio_spread {
            Some(spread) => println!(
                "exp-moment ratios over {} abscissas: spread {:.4}",
                em.entries.len(),
                spread
            ),
            None => println!("exp-moment ratios unavailable (no finite estimates)"),
        }
    }
    if let Some(kernel) = &report.kernel {
        println!(
            "kernel diagonal: {} points, evenness gap {:.2e}; \
             integrated count at x={}: {:.6} vs mu {:.6}",
            kernel.points.len(),
            kernel.evenness_max_gap,
            kernel.mean_count.x,
            kernel.mean_count.integrated,
            kernel.mean_count.mu
        );
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let over = overrides(&cli)?;
    let config = ExperimentConfig::resolve(cli.config.as_deref(), &over)
        .context("configuration is invalid")?;
    let output = run_experiment(&config, cli.command.task())?;
    let written = emit(&config, &output)?;
    summarize(&output.report);
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
