//! Exact checks against independent computations: the performance
//! difference lemma, potential-shaping invariance, GAE against Monte-Carlo
//! returns, and reverse-mode gradients against finite differences.

use rand::Rng;
use serde::Serialize;

use crate::approx::{ActionHead, Activation, Approximator, Loss, MlpSpec, Policy};
use crate::envs::{
    discounted_visitation, exact_advantage, policy_evaluation_direct, value_iteration,
    RewardSelect, TabularMdp, TabularPolicy,
};
use crate::estimate::{gae, ValueRegressionLoss};
use crate::mdp::{BehaviorPolicy, Observation, PolicyTag, RngStream, RolloutBatch};
use crate::ppo::{SurrogateLoss, SurrogatePart};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub cases: usize,
    pub passed: usize,
    pub max_error: f64,
    pub tolerance: f64,
}

impl OracleReport {
    pub fn ok(&self) -> bool {
        self.cases > 0 && self.passed == self.cases
    }

    fn tally(name: &str, errors: &[f64], tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            cases: errors.len(),
            passed: errors.iter().filter(|e| **e < tolerance).count(),
            max_error: errors.iter().copied().fold(0.0, f64::max),
            tolerance,
        }
    }
}

/// `J(π) − J(π')` against `Σ_s d^π(s) Σ_a π(a|s) A^{π'}(s, a)` on random MDPs.
pub fn pdl_check(cases: usize, seed: u64) -> OracleReport {
    let errors: Vec<f64> = (0..cases)
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
            let pi = TabularPolicy::random(5, 3, &mut rng);
            let pi_prime = TabularPolicy::random(5, 3, &mut rng);
            let select = RewardSelect::Task;
            let j = |p: &TabularPolicy| mdp.objective(&policy_evaluation_direct(&mdp, p, select).unwrap());
            let lhs = j(&pi) - j(&pi_prime);
            let adv = exact_advantage(&mdp, &pi_prime, select).unwrap();
            let d = discounted_visitation(&mdp, &pi).unwrap();
            let rhs: f64 = (0..5)
                .map(|s| d[s] * (0..3).map(|a| pi.prob(s, a) * adv[s * 3 + a]).sum::<f64>())
                .sum();
            (lhs - rhs).abs()
        })
        .collect();
    OracleReport::tally("pdl", &errors, 1e-8)
}

/// Greedy policies of `r` and `r + γΦ(s') − Φ(s)` on random MDPs; the error
/// of a case is its number of differing states.
pub fn pbrs_check(cases: usize, seed: u64) -> OracleReport {
    let errors: Vec<f64> = (0..cases)
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            let mdp = TabularMdp::random(5, 3, 0.9, &mut rng);
            let phi: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, plain) = value_iteration(&mdp, RewardSelect::Task, 1e-12).unwrap();
            let (_, shaped) = value_iteration(&mdp.shaped(&phi), RewardSelect::Task, 1e-12).unwrap();
            plain.iter().zip(&shaped).filter(|(a, b)| a != b).count() as f64
        })
        .collect();
    OracleReport::tally("pbrs", &errors, 0.5)
}

/// GAE with `λ = 1` against discounted Monte-Carlo returns minus the baseline
/// on random terminated episodes.
pub fn gae_check(cases: usize, seed: u64) -> OracleReport {
    let errors: Vec<f64> = (0..cases)
        .map(|i| {
            let mut rng = RngStream::new(seed, i as u64);
            let n = rng.random_range(1..=30);
            let gamma = rng.random_range(0.5..1.0);
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut next = v[1..].to_vec();
            next.push(rng.random_range(-2.0..2.0));
            let mut term = vec![false; n];
            term[n - 1] = true;
            let adv = gae(&r, &v, &next, &term, &term, gamma, 1.0).unwrap();
            let mut ret = 0.0;
            let mut worst: f64 = 0.0;
            for t in (0..n).rev() {
                ret = r[t] + gamma * ret;
                worst = worst.max((adv[t] - (ret - v[t])).abs());
            }
            worst
        })
        .collect();
    OracleReport::tally("gae", &errors, 1e-6)
}

/// Central finite differences of `loss` at `params`.
pub fn finite_difference<L: Loss + ?Sized>(loss: &L, params: &[f64], step: f64) -> Vec<f64> {
    let mut x = params.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let up = loss.loss(&x).expect("finite loss");
            x[i] = orig - step;
            let down = loss.loss(&x).expect("finite loss");
            x[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// `‖g − g_fd‖∞ / max(‖g_fd‖∞, 1e-6)`.
pub fn relative_gradient_error<L: Loss + ?Sized>(loss: &L, params: &[f64]) -> f64 {
    let (_, g) = loss.loss_and_grad(params).expect("finite loss");
    let fd = finite_difference(loss, params, 1e-5);
    let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-6);
    diff / scale
}

fn synthetic_batch(policy: &Policy, obs: &[Observation], rng: &mut RngStream, eps: f64) -> RolloutBatch {
    let mut b = RolloutBatch::empty(PolicyTag::Enhanced);
    for o in obs {
        let (a, lp) = policy.act(o, rng);
        // shift the behavior log-prob so ratios are spread but stay off the clip kinks
        let shift = loop {
            let s: f64 = rng.random_range(-0.4..0.4);
            let ratio = (-s).exp();
            if (ratio - (1.0 - eps)).abs() > 1e-3 && (ratio - (1.0 + eps)).abs() > 1e-3 {
                break s;
            }
        };
        b.observations.push(o.clone());
        b.next_observations.push(o.clone());
        b.actions.push(a);
        b.log_prob_behavior.push(lp + shift);
        b.task_rewards.push(0.0);
        b.heuristic_rewards.push(0.0);
        b.state_heuristics.push(0.0);
        b.terminated.push(false);
        b.truncated.push(false);
    }
    b
}

/// Gradient checks of every training loss on small random instances:
/// value regression (tabular and MLP) and the clipped surrogate for
/// categorical and Gaussian policies, each with an entropy term.
pub fn gradcheck(seed: u64) -> OracleReport {
    let mut rng = RngStream::new(seed, 0);
    let mut errors = Vec::new();
    let eps = 0.2;
    for (activation, continuous) in [
        (Activation::Tanh, false),
        (Activation::Tanh, true),
        (Activation::Relu, false),
    ] {
        let dim = 3;
        let obs: Vec<Observation> = (0..12)
            .map(|_| Observation::continuous((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()))
            .collect();
        let (head, outputs) = if continuous {
            (ActionHead::Gaussian { dim: 2 }, 2)
        } else {
            (ActionHead::Categorical { actions: 4 }, 4)
        };
        let net = Approximator::Mlp(MlpSpec {
            input_dim: dim,
            hidden: vec![8, 6],
            activation,
            output_dim: outputs,
        });
        let mut policy = Policy::new(net, head, &mut rng).unwrap();
        // move away from the near-zero output init so logits matter
        for p in policy.params_mut().values_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let batch = synthetic_batch(&policy, &obs, &mut rng, eps);
        let utilities: Vec<f64> = (0..obs.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let half = obs.len() / 2;
        let loss = SurrogateLoss {
            policy: &policy,
            parts: vec![
                SurrogatePart {
                    batch: &batch,
                    utilities: &utilities,
                    indices: (0..half).collect(),
                },
                SurrogatePart {
                    batch: &batch,
                    utilities: &utilities,
                    indices: (half..obs.len()).collect(),
                },
            ],
            clip_eps: eps,
            entropy_coef: 0.01,
        };
        errors.push(relative_gradient_error(&loss, policy.params().values()));

        let vnet = Approximator::Mlp(MlpSpec {
            input_dim: dim,
            hidden: vec![8, 6],
            activation,
            output_dim: 1,
        });
        let vparams = vnet.init(crate::approx::InitRole::Value, &mut rng);
        let vloss = ValueRegressionLoss {
            net: &vnet,
            observations: obs.iter().collect(),
            targets: (0..obs.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        errors.push(relative_gradient_error(&vloss, &vparams));
    }
    let tab = Approximator::Tabular { states: 4, outputs: 1 };
    let tparams: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let tobs: Vec<Observation> = (0..10).map(|i| Observation::one_hot(i % 4, 4)).collect();
    let tloss = ValueRegressionLoss {
        net: &tab,
        observations: tobs.iter().collect(),
        targets: (0..10).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    errors.push(relative_gradient_error(&tloss, &tparams));
    OracleReport::tally("gradcheck", &errors, 1e-4)
}

pub const CHECKS: [&str; 4] = ["pdl", "pbrs", "gae", "gradcheck"];

pub fn run_check(name: &str, seed: u64) -> Option<OracleReport> {
    Some(match name {
        "pdl" => pdl_check(100, seed),
        "pbrs" => pbrs_check(100, seed),
        "gae" => gae_check(100, seed),
        "gradcheck" => gradcheck(seed),
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for name in CHECKS {
            let r = run_check(name, 0).unwrap();
            assert!(r.ok(), "{r:?}");
        }
        assert!(run_check("nope", 0).is_none());
    }
}
