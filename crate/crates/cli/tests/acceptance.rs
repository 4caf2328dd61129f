//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Experiments run through the `hepo-lab` binary on the configs shipped in
//! `configs/`, then are scored with the library's report code.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use hepo_cli::report::compare;
use hepo_cli::runs::{discover, Experiment};
use hepo_core::dual::{AlphaConfig, AlphaState};
use hepo_core::envs::{EnvSpec, HeuristicFamily, SparseChainSpec};
use hepo_core::stats::{iqm, median, normalized_return, probability_of_improvement, BootstrapConfig, ScoreMetric};
use hepo_core::trainer::{run, Algorithm, Budget, NetChoice, TrainConfig};

type Verdict = (bool, String);

fn hepo_lab() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hepo-lab"));
    c.env_remove("HEPO_LAB_SEED");
    c
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.toml"))
}

/// Trains a shipped config into `out`; returns the experiment and wall time.
fn train(name: &str, out: &Path, extra: &[&str]) -> Result<(Experiment, Duration), String> {
    let start = Instant::now();
    let status = hepo_lab()
        .args(["train", "--quiet", "--config"])
        .arg(config_path(name))
        .arg("--out")
        .arg(out)
        .args(extra)
        .status()
        .map_err(|e| e.to_string())?;
    if !status.success() {
        return Err(format!("training {name} exited with {status}"));
    }
    let elapsed = start.elapsed();
    let mut exps = discover(&out.join(name)).map_err(|e| format!("{e:#}"))?;
    Ok((exps.remove(0), elapsed))
}

fn budget_steps(name: &str) -> u64 {
    let text = fs::read_to_string(config_path(name)).unwrap();
    let cfg: TrainConfig = toml::from_str(&text).unwrap();
    (cfg.budget.steps_per_iteration * cfg.budget.iterations) as u64
}

fn median_success(exp: &Experiment, alg: &str) -> f64 {
    median(&exp.final_scores(alg, ScoreMetric::SuccessRate))
}

fn oracle_identities() -> Verdict {
    let start = Instant::now();
    let out = hepo_lab().arg("oracle").output().expect("run oracle");
    let secs = start.elapsed().as_secs_f64();
    let text = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = text.lines().collect();
    let passed = lines.iter().filter(|l| l.starts_with("PASS")).count();
    (
        out.status.success() && passed == 4 && secs < 10.0,
        format!("{passed}/4 checks pass in {secs:.2}s [{}]", lines.join("; ")),
    )
}

fn controller_contracts() -> Verdict {
    let start = Instant::now();
    let c = AlphaConfig::default();
    let defaults = c.init == 0.0 && c.lr == 0.01 && c.clip == 1.0 && c.window == 8;

    let mut rng_state = 0x2545f4914f6cdd1du64;
    let mut next = move || {
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        (rng_state as f64 / u64::MAX as f64 - 0.5) * 2e3
    };
    let mut s = AlphaState::default();
    let (mut projected, mut clipped, mut signed) = (true, true, true);
    for _ in 0..10_000 {
        let before = s.alpha;
        let step = s.update(next());
        projected &= step.alpha >= 0.0;
        clipped &= step.delta.abs() <= 1.0 && (step.alpha - before).abs() <= 1.0;
        signed &= step.delta * step.smoothed >= 0.0;
    }

    // seven negative gaps and one huge positive outlier: α must still rise
    let mut s = AlphaState::default();
    let mut rising = true;
    for k in 0..8 {
        let before = s.alpha;
        let step = s.update(if k == 5 { 1e9 } else { -0.3 });
        rising &= step.alpha > before;
    }
    let secs = start.elapsed().as_secs_f64();
    (
        defaults && projected && clipped && signed && rising && secs < 5.0,
        format!(
            "defaults {defaults}, alpha >= 0 {projected}, |step| <= 1 {clipped}, sign follows median {signed}, outlier-robust {rising} ({secs:.3}s)"
        ),
    )
}

fn budget_parity() -> Verdict {
    let mut cfg = TrainConfig::new(EnvSpec::SparseChain(SparseChainSpec::new(6, HeuristicFamily::PotentialShaping)));
    cfg.network = NetChoice::Tabular;
    cfg.budget = Budget {
        steps_per_iteration: 64,
        iterations: 4,
        num_envs: 4,
    };
    let mut ok = true;
    let mut notes = Vec::new();
    for alg in Algorithm::ALL {
        let mut traces = Vec::new();
        if let Err(e) = run(&cfg, alg, 0, |t| traces.push(t.clone())) {
            return (false, format!("{alg} failed: {e}"));
        }
        let exact = traces.len() == 4 && traces.iter().all(|t| t.total_steps() == 64);
        ok &= exact;
        if alg == Algorithm::Hepo {
            let split = traces.iter().all(|t| (t.enhanced_steps, t.reference_steps) == (32, 32));
            ok &= split;
            notes.push(format!("hepo joint split 32/32 {split}"));
        }
        if !exact {
            notes.push(format!("{alg} off budget"));
        }
    }
    (ok, format!("B = 64 per iteration for all {} algorithms; {}", Algorithm::ALL.len(), notes.join(", ")))
}

fn constraint_improvement(trap: &Experiment, secs: f64) -> Verdict {
    let (hepo, h_only) = (median_success(trap, "hepo"), median_success(trap, "h_only"));
    let boot = BootstrapConfig::default();
    let report = match compare(std::slice::from_ref(trap), &[], "h_only", ScoreMetric::JReturn, &boot) {
        Ok(r) => r,
        Err(e) => return (false, format!("{e:#}")),
    };
    let row = report.row("hepo").expect("hepo row");
    let steps = budget_steps("trap_grid");
    let seeds = trap.runs["hepo"].len();
    (
        hepo >= h_only
            && row.poi_vs_baseline >= 0.5
            && row.poi_ci.low >= 0.45
            && seeds >= 10
            && steps <= 2_000_000
            && secs < 900.0,
        format!(
            "median success hepo {hepo:.3} vs h_only {h_only:.3}; PoI {:.3} [{:.3}, {:.3}]; {seeds} seeds, {steps} steps/run, {secs:.1}s",
            row.poi_vs_baseline, row.poi_ci.low, row.poi_ci.high
        ),
    )
}

fn wrong_sign_robustness(exp: &Experiment, secs: f64) -> Verdict {
    let (hepo, j_only, h_only) = (
        median_success(exp, "hepo"),
        median_success(exp, "j_only"),
        median_success(exp, "h_only"),
    );
    (
        hepo >= j_only - 0.05 && h_only <= 0.1 && secs < 600.0,
        format!("median success hepo {hepo:.3}, j_only {j_only:.3}, h_only {h_only:.3}; {secs:.1}s"),
    )
}

fn helpful_heuristic(exp: &Experiment, secs: f64) -> Verdict {
    let (h_only, hepo, j_only) = (
        median_success(exp, "h_only"),
        median_success(exp, "hepo"),
        median_success(exp, "j_only"),
    );
    (
        h_only >= 0.9 && hepo >= 0.9 && j_only <= 0.5 && secs < 600.0,
        format!("median success h_only {h_only:.3}, hepo {hepo:.3}, j_only {j_only:.3}; {secs:.1}s"),
    )
}

/// Joint against Alternating rollouts on TrapGrid. Normalized return is an
/// affine map of task return per task; when the baseline scores below random
/// the map is decreasing, so the comparison is made in task-return order.
fn ablation_direction(trap: &Experiment) -> Verdict {
    let j = |alg| trap.final_scores(alg, ScoreMetric::JReturn);
    let (j_base, j_random) = (iqm(&j("h_only")), iqm(&j("random")));
    let norm = |alg| {
        let v: Vec<f64> = j(alg).into_iter().filter_map(|x| normalized_return(x, j_base, j_random)).collect();
        median(&v)
    };
    let (joint, alternating) = (median(&j("hepo")), median(&j("eipo_variant")));
    let increasing = j_base > j_random;
    (
        joint >= alternating,
        format!(
            "median task return joint {joint:.4} vs alternating {alternating:.4}; normalized {:.3} vs {:.3} ({} map)",
            norm("hepo"),
            norm("eipo_variant"),
            if increasing { "increasing" } else { "decreasing" }
        ),
    )
}

fn statistics_values() -> Verdict {
    let one = normalized_return(0.8, 0.8, 0.1) == Some(1.0);
    let zero = normalized_return(0.1, 0.8, 0.1) == Some(0.0);
    let xs: Vec<f64> = (1..=100).map(f64::from).collect();
    let iqm_ok = iqm(&xs) == 50.5;
    let ys = [0.3, 0.9, 0.1, 0.9, 0.5];
    let poi_ok = probability_of_improvement(&ys, &ys) == 0.5;
    (
        one && zero && iqm_ok && poi_ok,
        format!(
            "normalized(H-only) = 1 {one}, normalized(random) = 0 {zero}, IQM(1..100) = {}, PoI(X, X) = {}",
            iqm(&xs),
            probability_of_improvement(&ys, &ys)
        ),
    )
}

fn determinism(root: &Path) -> Verdict {
    let mut dirs = Vec::new();
    for tag in ["first", "second"] {
        let out = root.join(tag);
        if let Err(e) = train("trap_grid", &out, &["--seeds", "3"]) {
            return (false, e);
        }
        dirs.push(out.join("trap_grid"));
    }
    let mut compared = 0;
    for alg in ["hepo", "eipo_variant", "h_only", "j_only", "random"] {
        for file in ["3.csv", "3_reference.csv"] {
            let a = dirs[0].join(alg).join(file);
            if !a.exists() {
                continue;
            }
            let b = dirs[1].join(alg).join(file);
            if fs::read(&a).ok() != fs::read(&b).ok() {
                return (false, format!("{alg}/{file} differs"));
            }
            compared += 1;
        }
    }
    (compared >= 5, format!("{compared} metric CSVs byte-identical across two invocations"))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temp dir");
    let mut verdicts: Vec<(u32, Verdict)> = vec![
        (1, oracle_identities()),
        (2, controller_contracts()),
        (3, budget_parity()),
    ];

    let experiments = root.path().join("experiments");
    let trained: Vec<_> = ["trap_grid", "wrong_sign", "chain_long"]
        .iter()
        .map(|name| train(name, &experiments, &[]))
        .collect();
    match &trained[0] {
        Ok((trap, secs)) => {
            verdicts.push((4, constraint_improvement(trap, secs.as_secs_f64())));
            verdicts.push((7, ablation_direction(trap)));
        }
        Err(e) => {
            verdicts.push((4, (false, e.clone())));
            verdicts.push((7, (false, e.clone())));
        }
    }
    verdicts.push((
        5,
        match &trained[1] {
            Ok((exp, secs)) => wrong_sign_robustness(exp, secs.as_secs_f64()),
            Err(e) => (false, e.clone()),
        },
    ));
    verdicts.push((
        6,
        match &trained[2] {
            Ok((exp, secs)) => helpful_heuristic(exp, secs.as_secs_f64()),
            Err(e) => (false, e.clone()),
        },
    ));
    verdicts.push((8, statistics_values()));
    verdicts.push((9, determinism(&root.path().join("determinism"))));
    verdicts.sort_by_key(|v| v.0);

    let mut all = true;
    for (n, (pass, detail)) in &verdicts {
        all &= *pass;
        println!("criterion {n} {}: {detail}", if *pass { "PASS" } else { "FAIL" });
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
