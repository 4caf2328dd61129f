mod common;

use std::collections::HashMap;

use hepo_core::approx::{Activation, Approximator, InitRole, MlpSpec};
use hepo_core::dual::estimate_gradient;
use hepo_core::envs::{
    discounted_visitation, exact_advantage, value_iteration, EnvSpec, GridGoalSpec, HeuristicFamily,
    RewardSelect, SparseChainSpec, TabularMdp, TabularPolicy,
};
use hepo_core::mdp::{ActionValue, Observation, RngStream};
use hepo_core::trainer::{run, Algorithm, Budget, NetChoice, TrainConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Same network evaluated with dense matrix algebra, reading the parameter
/// layout `[W₁ (row-major, out × in), b₁, W₂, b₂, …]`.
fn matrix_forward(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let mut dims = vec![spec.input_dim];
    dims.extend(&spec.hidden);
    dims.push(spec.output_dim);
    let mut h = DVector::from_column_slice(x);
    let mut off = 0;
    for (i, pair) in dims.windows(2).enumerate() {
        let w = DMatrix::from_row_slice(pair[1], pair[0], &params[off..off + pair[0] * pair[1]]);
        off += pair[0] * pair[1];
        let b = DVector::from_column_slice(&params[off..off + pair[1]]);
        off += pair[1];
        h = w * h + b;
        if i + 2 < dims.len() {
            h = h.map(|v| match spec.activation {
                Activation::Tanh => v.tanh(),
                Activation::Relu => v.max(0.0),
            });
        }
    }
    h.iter().copied().collect()
}

#[test]
fn mlp_forward_matches_matrix_arithmetic() {
    let mut rng = RngStream::new(4, 0);
    for activation in [Activation::Tanh, Activation::Relu] {
        let spec = MlpSpec {
            input_dim: 5,
            hidden: vec![7, 6],
            activation,
            output_dim: 3,
        };
        let net = Approximator::Mlp(spec.clone());
        for _ in 0..20 {
            let mut params = net.init(InitRole::Value, &mut rng);
            // non-zero biases too
            params.iter_mut().for_each(|p| *p += rng.random_range(-0.5..0.5));
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = net.forward(&params, &Observation::continuous(x.clone()));
            let want = matrix_forward(&spec, &params, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }
}

/// Simulated transition counts agree with the enumerated dynamics.
#[test]
fn tabular_enumeration_matches_simulation() {
    let mut spec = GridGoalSpec::new(3, 3, HeuristicFamily::PotentialShaping);
    spec.slip = 0.3;
    let env_spec = EnvSpec::GridGoal(spec);
    let mdp = env_spec.to_tabular(0.99).unwrap();
    let mut env = env_spec.build().unwrap();
    let mut rng = RngStream::new(8, 0);
    let mut obs = env.reset(&mut rng);

    let mut visits: HashMap<(usize, usize), usize> = HashMap::new();
    let mut outcomes: HashMap<(usize, usize, usize), usize> = HashMap::new();
    for _ in 0..20_000 {
        let s = obs.index.unwrap();
        let a = rng.random_range(0..4);
        let out = env.step(&ActionValue::Discrete(a), &mut rng).unwrap();
        let next = out.next_observation.index.unwrap();
        *visits.entry((s, a)).or_default() += 1;
        *outcomes.entry((s, a, next)).or_default() += 1;
        obs = if out.terminated || out.truncated {
            env.reset(&mut rng)
        } else {
            out.next_observation
        };
    }
    // Pearson statistic over every visited (s, a) row, standardized by its
    // degrees of freedom, must sit within 3σ; impossible outcomes never occur.
    let (mut chi2, mut dof) = (0.0, 0usize);
    for (&(s, a), &n) in &visits {
        let mut support = 0;
        for next in 0..mdp.states {
            let p = mdp.p(s, a, next);
            let observed = *outcomes.get(&(s, a, next)).unwrap_or(&0) as f64;
            if p == 0.0 {
                assert_eq!(observed, 0.0, "impossible P[{s},{a},{next}] observed");
                continue;
            }
            let expected = p * n as f64;
            chi2 += (observed - expected).powi(2) / expected;
            support += 1;
        }
        dof += support - 1;
    }
    let z = (chi2 - dof as f64) / (2.0 * dof as f64).sqrt();
    assert!(z.abs() < 3.0, "chi2 {chi2} over {dof} dof, z = {z}");
}

fn expected_advantage(mdp: &TabularMdp, behavior: &TabularPolicy, adv: &[f64]) -> f64 {
    let d = discounted_visitation(mdp, behavior).unwrap();
    let total: f64 = d.iter().sum();
    (0..mdp.states)
        .flat_map(|s| (0..mdp.actions).map(move |a| (s, a)))
        .map(|(s, a)| d[s] * behavior.prob(s, a) * adv[s * mdp.actions + a])
        .sum::<f64>()
        / total
}

#[test]
fn identical_policies_give_zero_alpha_gradient() {
    let mut rng = RngStream::new(6, 0);
    for _ in 0..20 {
        let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
        let pi = TabularPolicy::random(5, 3, &mut rng);
        let pi_h = pi.clone();
        let a_pi = exact_advantage(&mdp, &pi, RewardSelect::Task).unwrap();
        let a_h = exact_advantage(&mdp, &pi_h, RewardSelect::Task).unwrap();
        let ref_on_enh = expected_advantage(&mdp, &pi, &a_h);
        let enh_on_ref = expected_advantage(&mdp, &pi_h, &a_pi);
        assert!(ref_on_enh.abs() < 1e-8 && enh_on_ref.abs() < 1e-8);
        assert!(estimate_gradient(&[ref_on_enh], &[enh_on_ref]).abs() < 1e-8);
    }
}

#[test]
fn pbrs_and_task_reward_learn_the_same_greedy_policy() {
    let chain = SparseChainSpec::new(5, HeuristicFamily::PotentialShaping);
    let env = EnvSpec::SparseChain(chain);
    let mut config = TrainConfig::new(env.clone());
    config.network = NetChoice::Tabular;
    config.budget = Budget {
        steps_per_iteration: 256,
        iterations: 40,
        num_envs: 4,
    };
    config.ppo.lr = 0.05;
    config.ppo.value_lr = 0.1;

    let mdp = env.to_tabular(config.ppo.gamma).unwrap();
    let (_, optimal) = value_iteration(&mdp, RewardSelect::Task, 1e-12).unwrap();
    let greedy = |alg| {
        let out = run(&config, alg, 0, |_| {}).unwrap();
        let table = out.policy.unwrap().to_tabular().unwrap();
        (0..mdp.states)
            .filter(|s| !mdp.terminal[*s])
            .map(|s| {
                (0..mdp.actions)
                    .max_by(|a, b| table.prob(s, *a).total_cmp(&table.prob(s, *b)))
                    .unwrap()
            })
            .collect::<Vec<_>>()
    };
    let task = greedy(Algorithm::JOnly);
    let shaped = greedy(Algorithm::Pbrs);
    let best: Vec<usize> = (0..mdp.states).filter(|s| !mdp.terminal[*s]).map(|s| optimal[s]).collect();
    assert_eq!(task, shaped);
    assert_eq!(task, best);
}
