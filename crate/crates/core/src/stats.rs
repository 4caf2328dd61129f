//! Evaluation statistics and the metrics CSV format.
//!
//! Scores are normalized per task against a random policy and the
//! heuristic-only baseline, aggregated with the interquartile mean, and
//! compared with the probability of improvement. Confidence intervals come
//! from a stratified bootstrap that resamples runs within each task.

use std::io::{Read, Write};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::RngStream;
use crate::trainer::MetricRecord;

pub const CSV_HEADER: &str = "algorithm,seed,iteration,env_steps,J_return,H_return,alpha,success_rate";

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("unexpected csv header `{0}`")]
    Header(String),
    #[error("no metric rows")]
    Empty,
}

/// `(J_X − J_random) / (J_H-only − J_random)`, or `None` when the
/// denominator is too small to normalize by.
pub fn normalized_return(j_x: f64, j_h_only: f64, j_random: f64) -> Option<f64> {
    let denom = j_h_only - j_random;
    if denom.abs() < 1e-9 {
        None
    } else {
        Some((j_x - j_random) / denom)
    }
}

/// Mean after discarding `floor(n/4)` scores from each end.
pub fn iqm(scores: &[f64]) -> f64 {
    if scores.is_empty() {
        return f64::NAN;
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 4;
    let mid = &v[k..v.len() - k];
    mid.iter().sum::<f64>() / mid.len() as f64
}

/// Fraction of cross pairs with `x > y`, ties counting one half.
pub fn probability_of_improvement(xs: &[f64], ys: &[f64]) -> f64 {
    if xs.is_empty() || ys.is_empty() {
        return f64::NAN;
    }
    let mut wins = 0.0;
    for x in xs {
        for y in ys {
            wins += match x.partial_cmp(y) {
                Some(std::cmp::Ordering::Greater) => 1.0,
                Some(std::cmp::Ordering::Equal) => 0.5,
                _ => 0.0,
            };
        }
    }
    wins / (xs.len() * ys.len()) as f64
}

/// Per-task final scores of one algorithm: `scores[task][run]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub tasks: Vec<String>,
    pub scores: Vec<Vec<f64>>,
}

impl ScoreMatrix {
    pub fn flatten(&self) -> Vec<f64> {
        self.scores.iter().flatten().copied().collect()
    }

    pub fn runs(&self) -> usize {
        self.scores.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            resamples: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

fn resample<R: Rng>(xs: &[f64], rng: &mut R) -> Vec<f64> {
    (0..xs.len()).map(|_| xs[rng.random_range(0..xs.len())]).collect()
}

fn percentile_interval(mut stats: Vec<f64>, level: f64) -> Interval {
    stats.retain(|x| x.is_finite());
    if stats.is_empty() {
        return Interval {
            low: f64::NAN,
            high: f64::NAN,
        };
    }
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let at = |q: f64| stats[((stats.len() - 1) as f64 * q).round() as usize];
    Interval {
        low: at(tail),
        high: at(1.0 - tail),
    }
}

/// IQM of all scores with a stratified percentile bootstrap interval.
pub fn iqm_with_ci(m: &ScoreMatrix, cfg: &BootstrapConfig) -> (f64, Interval) {
    let point = iqm(&m.flatten());
    let stats: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, i as u64);
            let sample: Vec<f64> = m.scores.iter().flat_map(|task| resample(task, &mut rng)).collect();
            iqm(&sample)
        })
        .collect();
    (point, percentile_interval(stats, cfg.level))
}

/// Task-averaged probability of improvement of `x` over `y`, tasks matched by name.
pub fn poi_matrix(x: &ScoreMatrix, y: &ScoreMatrix) -> f64 {
    let pairs = matched_tasks(x, y);
    if pairs.is_empty() {
        return f64::NAN;
    }
    pairs
        .iter()
        .map(|(a, b)| probability_of_improvement(a, b))
        .sum::<f64>()
        / pairs.len() as f64
}

fn matched_tasks<'a>(x: &'a ScoreMatrix, y: &'a ScoreMatrix) -> Vec<(&'a [f64], &'a [f64])> {
    x.tasks
        .iter()
        .zip(&x.scores)
        .filter_map(|(t, xs)| {
            let j = y.tasks.iter().position(|u| u == t)?;
            Some((xs.as_slice(), y.scores[j].as_slice()))
        })
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .collect()
}

/// Probability of improvement with a stratified bootstrap interval; runs of
/// both algorithms are resampled independently within each task.
pub fn poi_with_ci(x: &ScoreMatrix, y: &ScoreMatrix, cfg: &BootstrapConfig) -> (f64, Interval) {
    let point = poi_matrix(x, y);
    let pairs = matched_tasks(x, y);
    let stats: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(cfg.seed, (1 << 32) + i as u64);
            let total: f64 = pairs
                .iter()
                .map(|(a, b)| {
                    let ra = resample(a, &mut rng);
                    let rb = resample(b, &mut rng);
                    probability_of_improvement(&ra, &rb)
                })
                .sum();
            total / pairs.len() as f64
        })
        .collect();
    (point, percentile_interval(stats, cfg.level))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMetric {
    #[default]
    JReturn,
    SuccessRate,
}

/// Mean of `metric` over the final tenth of a run's rows (at least one row).
pub fn final_score(records: &[MetricRecord], metric: ScoreMetric) -> Option<f64> {
    if records.is_empty() {
        return None;
    }
    let k = (records.len() / 10).max(1);
    let tail = &records[records.len() - k..];
    let value = |r: &MetricRecord| match metric {
        ScoreMetric::JReturn => r.j_return,
        ScoreMetric::SuccessRate => r.success_rate,
    };
    Some(tail.iter().map(value).sum::<f64>() / k as f64)
}

pub fn median(xs: &[f64]) -> f64 {
    crate::dual::median(xs)
}

/// Writes records with the fixed header and `\n` line endings.
pub fn write_csv<W: Write>(out: W, records: &[MetricRecord]) -> Result<(), StatsError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricRecord>, StatsError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(StatsError::Header(header));
    }
    let rows = rd.deserialize().collect::<Result<Vec<MetricRecord>, _>>()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_values() {
        assert_eq!(normalized_return(1.5, 1.5, 0.5), Some(1.0));
        assert_eq!(normalized_return(0.5, 1.5, 0.5), Some(0.0));
        assert_eq!(normalized_return(2.0, 1.5, 0.5), Some(1.5));
        assert_eq!(normalized_return(2.0, 0.5, 0.5), None);
    }

    #[test]
    fn normalization_is_shift_invariant() {
        let a = normalized_return(0.7, 1.3, -0.2).unwrap();
        let b = normalized_return(10.7, 11.3, 9.8).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn iqm_values() {
        assert_eq!(iqm(&[1.0, 2.0, 3.0, 4.0]), 2.5);
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(iqm(&hundred), 50.5);
        assert_eq!(iqm(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn constant_scores_give_zero_width_interval() {
        let m = ScoreMatrix {
            tasks: vec!["t".into()],
            scores: vec![vec![0.7; 9]],
        };
        let (point, ci) = iqm_with_ci(&m, &BootstrapConfig::default());
        assert_eq!(point, 0.7);
        assert_eq!((ci.low, ci.high), (0.7, 0.7));
    }

    #[test]
    fn poi_values() {
        let x = [1.0, 2.0, 3.0];
        assert_eq!(probability_of_improvement(&x, &x), 0.5);
        assert_eq!(probability_of_improvement(&[5.0, 6.0], &[1.0, 2.0]), 1.0);
        assert_eq!(probability_of_improvement(&[1.0, 3.0], &[2.0, 2.0]), 0.5);
        let y = [0.5, 2.0, 2.5, 9.0];
        let s = probability_of_improvement(&x, &y) + probability_of_improvement(&y, &x);
        assert_eq!(s, 1.0);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let m = ScoreMatrix {
            tasks: vec!["a".into(), "b".into()],
            scores: vec![vec![0.1, 0.5, 0.9, 0.3], vec![1.0, 1.2, 0.8]],
        };
        let cfg = BootstrapConfig::default();
        assert_eq!(iqm_with_ci(&m, &cfg), iqm_with_ci(&m, &cfg));
        let (p, ci) = iqm_with_ci(&m, &cfg);
        assert!(ci.low <= p && p <= ci.high);
    }

    #[test]
    fn final_score_uses_last_tenth() {
        let rows: Vec<MetricRecord> = (0..20)
            .map(|i| MetricRecord {
                algorithm: "x".into(),
                seed: 0,
                iteration: i,
                env_steps: i as u64,
                j_return: i as f64,
                h_return: 0.0,
                alpha: 0.0,
                success_rate: 0.0,
            })
            .collect();
        assert_eq!(final_score(&rows, ScoreMetric::JReturn), Some(18.5));
        assert_eq!(final_score(&rows[..3], ScoreMetric::JReturn), Some(2.0));
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![MetricRecord {
            algorithm: "hepo".into(),
            seed: 3,
            iteration: 0,
            env_steps: 64,
            j_return: 1.0,
            h_return: -0.25,
            alpha: 0.0,
            success_rate: 0.5,
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, format!("{CSV_HEADER}\nhepo,3,0,64,1.0,-0.25,0.0,0.5\n"));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }
}
