//! Experiment runner behind the `hepo-lab` binary.

pub mod config;
pub mod plot;
pub mod report;
pub mod runs;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use rayon::prelude::*;
use serde::Serialize;

use hepo_core::trainer::{run, Algorithm, TrainConfig};

use crate::runs::{experiment_dir, write_run, RunSummary};

#[derive(Debug, Serialize)]
pub struct TrainSummary {
    pub experiment: String,
    pub environment: String,
    pub steps_per_iteration: usize,
    pub iterations: usize,
    pub runs: Vec<RunSummary>,
}

/// Trains every (algorithm, seed) pair of `config` in parallel and writes
/// CSVs, policies, the resolved config and `summary.json` under
/// `<out>/<name>/`. Progress goes to stdout when `verbose`.
pub fn train(config: &TrainConfig, out: &Path, verbose: bool) -> Result<PathBuf> {
    config.validate()?;
    let dir = experiment_dir(out, config);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), config::render_config(config))?;

    let jobs: Vec<(Algorithm, u64)> = config
        .algorithms
        .iter()
        .flat_map(|a| config.seeds.iter().map(move |s| (*a, *s)))
        .collect();
    let every = (config.budget.iterations / 10).max(1);
    let results: Vec<_> = jobs
        .par_iter()
        .map(|&(alg, seed)| {
            let result = run(config, alg, seed, |t| {
                let last = t.iteration + 1 == config.budget.iterations;
                if verbose && ((t.iteration + 1) % every == 0 || last) {
                    let r = &t.record;
                    println!(
                        "progress algorithm={alg} seed={seed} iteration={} env_steps={} J_return={:.4} success_rate={:.3} alpha={:.4}",
                        t.iteration + 1,
                        r.env_steps,
                        r.j_return,
                        r.success_rate,
                        r.alpha
                    );
                }
            });
            let written = result.map_err(anyhow::Error::from).and_then(|out| {
                write_run(&dir, &out)?;
                Ok(RunSummary::of(&out))
            });
            (alg, seed, written)
        })
        .collect();

    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for (alg, seed, r) in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(e) => failures.push(format!("{alg} seed {seed}: {e:#}")),
        }
    }
    let summary = TrainSummary {
        experiment: config.name.clone(),
        environment: config.env.name().to_string(),
        steps_per_iteration: config.budget.steps_per_iteration,
        iterations: config.budget.iterations,
        runs: summaries,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    if !failures.is_empty() {
        bail!("{} run(s) failed:\n  {}", failures.len(), failures.join("\n  "));
    }
    if verbose {
        println!("done experiment={} runs={} dir={}", config.name, summary.runs.len(), dir.display());
    }
    Ok(dir)
}
