//! On-disk run layout: `<out>/<experiment>/<algorithm>/<seed>.csv`.
//!
//! Dual-policy runs also leave `<seed>_reference.csv` with the reference
//! policy's metrics, and every learning run leaves `<seed>_policy.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use hepo_core::stats::{final_score, read_csv, write_csv, ScoreMetric};
use hepo_core::trainer::{MetricRecord, RunOutput, TrainConfig};

/// Runs of one experiment, keyed by algorithm and then seed.
#[derive(Debug, Clone, Default)]
pub struct Experiment {
    pub name: String,
    pub dir: PathBuf,
    pub runs: BTreeMap<String, BTreeMap<u64, Vec<MetricRecord>>>,
}

impl Experiment {
    pub fn final_scores(&self, algorithm: &str, metric: ScoreMetric) -> Vec<f64> {
        self.runs
            .get(algorithm)
            .map(|seeds| seeds.values().filter_map(|r| final_score(r, metric)).collect())
            .unwrap_or_default()
    }
}

pub fn experiment_dir(out: &Path, config: &TrainConfig) -> PathBuf {
    out.join(&config.name)
}

pub fn write_run(dir: &Path, run: &RunOutput) -> Result<()> {
    let alg_dir = dir.join(run.algorithm.as_str());
    fs::create_dir_all(&alg_dir).with_context(|| format!("creating {}", alg_dir.display()))?;
    let csv_path = alg_dir.join(format!("{}.csv", run.seed));
    write_records(&csv_path, &run.records)?;
    if let Some(reference) = &run.reference_records {
        write_records(&alg_dir.join(format!("{}_reference.csv", run.seed)), reference)?;
    }
    if let Some(policy) = &run.policy {
        let json = serde_json::to_string(policy)?;
        fs::write(alg_dir.join(format!("{}_policy.json", run.seed)), json)?;
    }
    if let Some(policy) = &run.reference_policy {
        let json = serde_json::to_string(policy)?;
        fs::write(alg_dir.join(format!("{}_reference_policy.json", run.seed)), json)?;
    }
    Ok(())
}

fn write_records(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(std::io::BufWriter::new(file), records).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub seed: u64,
    pub iterations: usize,
    pub env_steps: u64,
    pub final_j_return: f64,
    pub final_success_rate: f64,
    pub final_alpha: f64,
}

impl RunSummary {
    pub fn of(run: &RunOutput) -> Self {
        let last = run.records.last();
        Self {
            algorithm: run.algorithm.to_string(),
            seed: run.seed,
            iterations: run.records.len(),
            env_steps: last.map_or(0, |r| r.env_steps),
            final_j_return: final_score(&run.records, ScoreMetric::JReturn).unwrap_or(f64::NAN),
            final_success_rate: final_score(&run.records, ScoreMetric::SuccessRate).unwrap_or(f64::NAN),
            final_alpha: last.map_or(0.0, |r| r.alpha),
        }
    }
}

fn seed_of(path: &Path) -> Option<u64> {
    if path.extension()? != "csv" {
        return None;
    }
    path.file_stem()?.to_str()?.parse().ok()
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

/// Loads an experiment directory, or `None` if it holds no run CSVs.
pub fn load_experiment(dir: &Path) -> Result<Option<Experiment>> {
    let mut exp = Experiment {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string()),
        dir: dir.to_path_buf(),
        runs: BTreeMap::new(),
    };
    for sub in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        let algorithm = sub.file_name().unwrap().to_string_lossy().into_owned();
        for file in sorted_entries(&sub)? {
            let Some(seed) = seed_of(&file) else { continue };
            let f = fs::File::open(&file)?;
            let records = read_csv(f).with_context(|| format!("reading {}", file.display()))?;
            exp.runs.entry(algorithm.clone()).or_default().insert(seed, records);
        }
    }
    Ok(if exp.runs.is_empty() { None } else { Some(exp) })
}

/// A results directory is either one experiment or a suite of experiments,
/// one per subdirectory.
pub fn discover(dir: &Path) -> Result<Vec<Experiment>> {
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    if let Some(exp) = load_experiment(dir)? {
        return Ok(vec![exp]);
    }
    let mut out = Vec::new();
    for sub in sorted_entries(dir)?.into_iter().filter(|p| p.is_dir()) {
        if let Some(exp) = load_experiment(&sub)? {
            out.push(exp);
        }
    }
    if out.is_empty() {
        bail!("no runs found under {}", dir.display());
    }
    Ok(out)
}
