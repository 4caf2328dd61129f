//! Aggregate reports over discovered runs.

use std::fmt::Write as _;

use anyhow::{bail, Result};
use serde::Serialize;

use hepo_core::stats::{
    iqm, iqm_with_ci, normalized_return, poi_with_ci, BootstrapConfig, Interval, ScoreMatrix,
    ScoreMetric,
};

use crate::runs::Experiment;

pub const RANDOM: &str = "random";

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmRow {
    pub algorithm: String,
    pub runs: usize,
    pub iqm: f64,
    pub iqm_ci: Interval,
    pub poi_vs_baseline: f64,
    pub poi_ci: Interval,
    /// Per-task normalized scores, in task order.
    pub normalized: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub baseline: String,
    pub metric: ScoreMetric,
    pub tasks: Vec<String>,
    pub excluded_tasks: Vec<String>,
    /// Reference returns per task: `(random, baseline)`.
    pub references: Vec<(f64, f64)>,
    /// Tasks whose baseline scores below random, so normalized scores
    /// reverse the ordering of raw scores there.
    pub inverted_tasks: Vec<String>,
    pub algorithms: Vec<AlgorithmRow>,
}

impl CompareReport {
    pub fn row(&self, algorithm: &str) -> Option<&AlgorithmRow> {
        self.algorithms.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "normalized {} (reference: {} = 1, random = 0)",
            match self.metric {
                ScoreMetric::JReturn => "task return",
                ScoreMetric::SuccessRate => "success rate",
            },
            self.baseline
        );
        for t in &self.inverted_tasks {
            let _ = writeln!(s, "warning: task `{t}` has {} below random; normalized scores reverse the raw order there", self.baseline);
        }
        for t in &self.excluded_tasks {
            let _ = writeln!(s, "warning: task `{t}` excluded, {} and random scores coincide", self.baseline);
        }
        let _ = writeln!(
            s,
            "{:<14} {:>5} {:>8} {:>19} {:>8} {:>19}",
            "algorithm", "runs", "IQM", "95% CI", "PoI", "95% CI"
        );
        for r in &self.algorithms {
            let _ = writeln!(
                s,
                "{:<14} {:>5} {:>8.3} {:>19} {:>8.3} {:>19}",
                r.algorithm,
                r.runs,
                r.iqm,
                format!("[{:.3}, {:.3}]", r.iqm_ci.low, r.iqm_ci.high),
                r.poi_vs_baseline,
                format!("[{:.3}, {:.3}]", r.poi_ci.low, r.poi_ci.high),
            );
        }
        s
    }
}

/// Normalizes every run against per-task references and aggregates.
///
/// The reference returns of a task are the IQMs of the final scores of the
/// random runs and of the baseline runs. Probability of improvement is
/// computed on raw final scores: it is invariant to the per-task affine
/// normalization when the baseline beats random, and keeps its orientation
/// when it does not. `random_pool` supplies random runs
/// for tasks that have none of their own: matched by name, or used for every
/// task when it holds a single experiment.
pub fn compare(
    experiments: &[Experiment],
    random_pool: &[Experiment],
    baseline: &str,
    metric: ScoreMetric,
    boot: &BootstrapConfig,
) -> Result<CompareReport> {
    let mut tasks = Vec::new();
    let mut excluded = Vec::new();
    let mut references = Vec::new();
    let mut inverted = Vec::new();
    let mut per_alg: std::collections::BTreeMap<String, Vec<Vec<f64>>> = Default::default();
    let mut per_alg_raw: std::collections::BTreeMap<String, Vec<Vec<f64>>> = Default::default();

    for exp in experiments {
        let base = exp.final_scores(baseline, metric);
        if base.is_empty() {
            bail!("experiment `{}` has no `{baseline}` runs to normalize against", exp.name);
        }
        let mut random = exp.final_scores(RANDOM, metric);
        if random.is_empty() {
            let source = match random_pool {
                [only] => Some(only),
                pool => pool.iter().find(|e| e.name == exp.name),
            };
            random = source.map(|e| e.final_scores(RANDOM, metric)).unwrap_or_default();
        }
        if random.is_empty() {
            bail!(
                "experiment `{}` has no random-policy runs; train the `random` algorithm \
                 or point --random-runs at a directory containing them",
                exp.name
            );
        }
        let (j_random, j_base) = (iqm(&random), iqm(&base));
        if normalized_return(j_base, j_base, j_random).is_none() {
            excluded.push(exp.name.clone());
            continue;
        }
        if j_base < j_random {
            inverted.push(exp.name.clone());
        }
        let task_index = tasks.len();
        tasks.push(exp.name.clone());
        references.push((j_random, j_base));
        for alg in exp.runs.keys() {
            let raw = exp.final_scores(alg, metric);
            let scores: Vec<f64> = raw
                .iter()
                .filter_map(|&j| normalized_return(j, j_base, j_random))
                .collect();
            for (table, row) in [(&mut per_alg, scores), (&mut per_alg_raw, raw)] {
                let rows = table.entry(alg.clone()).or_default();
                rows.resize(task_index + 1, Vec::new());
                rows[task_index] = row;
            }
        }
    }
    if tasks.is_empty() {
        bail!("every task was excluded: {baseline} and random scores coincide");
    }
    let matrix = |rows: &Vec<Vec<f64>>| {
        let mut scores = rows.clone();
        scores.resize(tasks.len(), Vec::new());
        ScoreMatrix {
            tasks: tasks.clone(),
            scores,
        }
    };
    let base_raw = matrix(per_alg_raw.get(baseline).expect("baseline present"));
    let algorithms = per_alg
        .iter()
        .map(|(alg, rows)| {
            let m = matrix(rows);
            let (point, ci) = iqm_with_ci(&m, boot);
            let (poi, poi_ci) = poi_with_ci(&matrix(&per_alg_raw[alg]), &base_raw, boot);
            AlgorithmRow {
                algorithm: alg.clone(),
                runs: m.runs(),
                iqm: point,
                iqm_ci: ci,
                poi_vs_baseline: poi,
                poi_ci,
                normalized: m.scores,
            }
        })
        .collect();
    Ok(CompareReport {
        baseline: baseline.to_string(),
        metric,
        tasks,
        excluded_tasks: excluded,
        references,
        inverted_tasks: inverted,
        algorithms,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RawRow {
    pub experiment: String,
    pub algorithm: String,
    pub runs: usize,
    pub mean: f64,
    pub median: f64,
    pub iqm: f64,
    pub min: f64,
    pub max: f64,
}

/// Unnormalized final-score summaries per experiment and algorithm.
pub fn raw_stats(experiments: &[Experiment], metric: ScoreMetric) -> Vec<RawRow> {
    let mut out = Vec::new();
    for exp in experiments {
        for alg in exp.runs.keys() {
            let s = exp.final_scores(alg, metric);
            if s.is_empty() {
                continue;
            }
            out.push(RawRow {
                experiment: exp.name.clone(),
                algorithm: alg.clone(),
                runs: s.len(),
                mean: s.iter().sum::<f64>() / s.len() as f64,
                median: hepo_core::stats::median(&s),
                iqm: iqm(&s),
                min: s.iter().copied().fold(f64::INFINITY, f64::min),
                max: s.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    out
}

pub fn raw_table(rows: &[RawRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<18} {:<14} {:>5} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "experiment", "algorithm", "runs", "mean", "median", "IQM", "min", "max"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<18} {:<14} {:>5} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            r.experiment, r.algorithm, r.runs, r.mean, r.median, r.iqm, r.min, r.max
        );
    }
    s
}
