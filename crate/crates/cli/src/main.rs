use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use hepo_cli::config::{load_config, resolve_seeds, ConfigError, SEED_ENV};
use hepo_cli::plot::plot_experiments;
use hepo_cli::report::{compare, raw_stats, raw_table};
use hepo_cli::runs::discover;
use hepo_core::oracle::{run_check, CHECKS};
use hepo_core::stats::{BootstrapConfig, ScoreMetric};

#[derive(Parser)]
#[command(name = "hepo-lab", version, about = "Train and evaluate heuristic-enhanced policy optimization")]
struct Cli {
    /// Worker threads (defaults to the number of cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    JReturn,
    SuccessRate,
}

impl From<Metric> for ScoreMetric {
    fn from(m: Metric) -> Self {
        match m {
            Metric::JReturn => ScoreMetric::JReturn,
            Metric::SuccessRate => ScoreMetric::SuccessRate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured algorithm and seed
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Seed list such as `0..10` or `1,4,7`; overrides the config and HEPO_LAB_SEED
        #[arg(long)]
        seeds: Option<String>,
        /// Output root; overrides `output_dir`
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
    /// Normalized scores, IQM and probability of improvement
    Compare {
        results: PathBuf,
        #[arg(long, default_value = "h_only")]
        baseline: String,
        /// Directory with `random` runs for experiments that have none
        #[arg(long)]
        random_runs: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "j-return")]
        metric: Metric,
        #[arg(long, default_value_t = 2000)]
        resamples: usize,
    },
    /// Raw final-score summaries per algorithm
    Stats {
        results: PathBuf,
        #[arg(long, value_enum, default_value = "j-return")]
        metric: Metric,
    },
    /// SVG learning curves
    Plot {
        results: PathBuf,
        /// Output directory; defaults to `<results>/plots`
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Exact identity checks: pdl, pbrs, gae, gradcheck or all
    Oracle {
        #[arg(default_value = "all")]
        check: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.downcast_ref::<ConfigError>().is_some();
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train {
            config,
            seeds,
            out,
            quiet,
        } => {
            let mut cfg = load_config(&config)?;
            let env_seeds = std::env::var(SEED_ENV).ok();
            cfg.seeds = resolve_seeds(seeds.as_deref(), env_seeds.as_deref(), &cfg.seeds)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.clone());
            hepo_cli::train(&cfg, &out, !quiet)?;
        }
        Command::Compare {
            results,
            baseline,
            random_runs,
            metric,
            resamples,
        } => {
            let experiments = discover(&results)?;
            let pool = match &random_runs {
                Some(dir) => discover(dir).with_context(|| format!("loading random runs from {}", dir.display()))?,
                None => Vec::new(),
            };
            let boot = BootstrapConfig {
                resamples,
                ..BootstrapConfig::default()
            };
            let report = compare(&experiments, &pool, &baseline, metric.into(), &boot)?;
            print!("{}", report.table());
            let path = results.join("compare.json");
            std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
            println!("summary written to {}", path.display());
        }
        Command::Stats { results, metric } => {
            let rows = raw_stats(&discover(&results)?, metric.into());
            print!("{}", raw_table(&rows));
        }
        Command::Plot { results, out } => {
            let experiments = discover(&results)?;
            let out = out.unwrap_or_else(|| results.join("plots"));
            for p in plot_experiments(&experiments, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Oracle { check, seed } => {
            let names: Vec<&str> = if check == "all" {
                CHECKS.to_vec()
            } else if CHECKS.contains(&check.as_str()) {
                vec![check.as_str()]
            } else {
                bail!("unknown check `{check}`; expected one of {} or all", CHECKS.join(", "));
            };
            let mut all_ok = true;
            for name in names {
                let r = run_check(name, seed).expect("known check");
                all_ok &= r.ok();
                println!(
                    "{} {}: {}/{} within {:e} (max error {:.3e})",
                    if r.ok() { "PASS" } else { "FAIL" },
                    r.name,
                    r.passed,
                    r.cases,
                    r.tolerance,
                    r.max_error
                );
            }
            if !all_ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
