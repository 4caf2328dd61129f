//! Learning curves as standalone SVG files.
//!
//! Curve coordinates are written in data units inside a transformed group,
//! so the `points` attributes can be read back and compared to the CSVs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Result;

use hepo_core::trainer::MetricRecord;

use crate::runs::Experiment;

pub const METRICS: [&str; 4] = ["J_return", "success_rate", "H_return", "alpha"];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_Y: f64 = 40.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
];

fn metric_value(r: &MetricRecord, metric: &str) -> f64 {
    match metric {
        "J_return" => r.j_return,
        "success_rate" => r.success_rate,
        "H_return" => r.h_return,
        "alpha" => r.alpha,
        other => panic!("unknown metric {other}"),
    }
}

/// Mean curve and a 95% normal band across seeds, aligned by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub algorithm: String,
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

pub fn curve(algorithm: &str, runs: &[&Vec<MetricRecord>], metric: &str) -> Option<Curve> {
    let len = runs.iter().map(|r| r.len()).min()?;
    if len == 0 {
        return None;
    }
    let n = runs.len() as f64;
    let mut c = Curve {
        algorithm: algorithm.to_string(),
        x: runs[0][..len].iter().map(|r| r.env_steps as f64).collect(),
        mean: Vec::with_capacity(len),
        low: Vec::with_capacity(len),
        high: Vec::with_capacity(len),
    };
    for i in 0..len {
        let vals: Vec<f64> = runs.iter().map(|r| metric_value(&r[i], metric)).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let half = if runs.len() > 1 {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            1.96 * (var / n).sqrt()
        } else {
            0.0
        };
        c.mean.push(mean);
        c.low.push(mean - half);
        c.high.push(mean + half);
    }
    Some(c)
}

fn points(xs: &[f64], ys: &[f64]) -> String {
    xs.iter()
        .zip(ys)
        .map(|(x, y)| format!("{x},{y}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

pub fn render_svg(title: &str, metric: &str, curves: &[Curve]) -> String {
    let (x0, x1) = span(curves.iter().flat_map(|c| c.x.iter().copied()));
    let (y0, y1) = span(curves.iter().flat_map(|c| c.low.iter().chain(&c.high).copied()));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - 2.0 * MARGIN_Y;
    let sx = plot_w / (x1 - x0);
    let sy = plot_h / (y1 - y0);
    let tx = MARGIN_LEFT - x0 * sx;
    let ty = MARGIN_Y + plot_h + y0 * sy;
    let px = |x: f64| x * sx + tx;
    let py = |y: f64| ty - y * sy;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, MARGIN_LEFT + plot_w / 2.0);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_Y}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            px(fx),
            HEIGHT - MARGIN_Y + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">env steps</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 6.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{metric}</text>"#,
        MARGIN_Y + plot_h / 2.0,
        MARGIN_Y + plot_h / 2.0
    );
    let _ = writeln!(s, r#"<g class="data" transform="matrix({sx} 0 0 {} {tx} {ty})">"#, -sy);
    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut band_x = c.x.clone();
        band_x.extend(c.x.iter().rev());
        let mut band_y = c.high.clone();
        band_y.extend(c.low.iter().rev());
        let _ = writeln!(
            s,
            r#"<polygon class="band" data-algorithm="{}" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            c.algorithm,
            points(&band_x, &band_y)
        );
        let _ = writeln!(
            s,
            r#"<polyline class="mean" data-algorithm="{}" points="{}" fill="none" stroke="{color}" stroke-width="2" vector-effect="non-scaling-stroke"/>"#,
            c.algorithm,
            points(&c.x, &c.mean)
        );
    }
    let _ = writeln!(s, "</g>");
    for (i, c) in curves.iter().enumerate() {
        let y = MARGIN_Y + 14.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_RIGHT + 12.0;
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            x + 20.0,
            x + 26.0,
            y + 4.0,
            c.algorithm
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Writes one SVG per (experiment, metric) into `out`; returns the paths.
pub fn plot_experiments(experiments: &[Experiment], out: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for exp in experiments {
        for metric in METRICS {
            let curves: Vec<Curve> = exp
                .runs
                .iter()
                .filter_map(|(alg, seeds)| {
                    let runs: Vec<&Vec<MetricRecord>> = seeds.values().collect();
                    curve(alg, &runs, metric)
                })
                .collect();
            if curves.is_empty() {
                continue;
            }
            let path = out.join(format!("{}_{metric}.svg", exp.name));
            fs::write(&path, render_svg(&exp.name, metric, &curves))?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Reads the mean polylines of an SVG written by [`render_svg`]:
/// `(algorithm, points)` pairs in data units.
pub fn read_mean_curves(svg: &str) -> Vec<(String, Vec<(f64, f64)>)> {
    svg.lines()
        .filter(|l| l.starts_with(r#"<polyline class="mean""#))
        .filter_map(|l| {
            let alg = attr(l, "data-algorithm")?;
            let pts = attr(l, "points")?
                .split_whitespace()
                .filter_map(|p| {
                    let (x, y) = p.split_once(',')?;
                    Some((x.parse().ok()?, y.parse().ok()?))
                })
                .collect();
            Some((alg.to_string(), pts))
        })
        .collect()
}

fn attr<'a>(line: &'a str, name: &str) -> Option<&'a str> {
    let key = format!(r#"{name}=""#);
    let start = line.find(&key)? + key.len();
    let end = line[start..].find('"')? + start;
    Some(&line[start..end])
}
