//! Per-step training rewards for the single-policy baselines.

use serde::{Deserialize, Serialize};

use crate::mdp::RolloutBatch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    #[default]
    Linear,
    /// Geometric approach: the remaining gap shrinks by 100× over the horizon.
    Exponential,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HurlSchedule {
    pub beta0: f64,
    pub beta_final: f64,
    /// Iterations to reach `beta_final`; `None` means the whole run.
    pub horizon: Option<usize>,
    pub shape: ScheduleShape,
}

impl Default for HurlSchedule {
    fn default() -> Self {
        Self {
            beta0: 0.3,
            beta_final: 1.0,
            horizon: None,
            shape: ScheduleShape::Linear,
        }
    }
}

impl HurlSchedule {
    pub fn with_horizon(mut self, iterations: usize) -> Self {
        self.horizon.get_or_insert(iterations);
        self
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.beta0) && (0.0..=1.0).contains(&self.beta_final) && self.beta0 <= self.beta_final
    }
}

/// Coefficient `β_i` at `iteration`, clamped to `[0, 1]`.
pub fn hurl_beta(schedule: &HurlSchedule, iteration: usize) -> f64 {
    let horizon = schedule.horizon.unwrap_or(1).max(1);
    let beta = if iteration >= horizon {
        schedule.beta_final
    } else {
        let frac = iteration as f64 / horizon as f64;
        let gap = schedule.beta_final - schedule.beta0;
        match schedule.shape {
            ScheduleShape::Linear => schedule.beta0 + gap * frac,
            ScheduleShape::Exponential => schedule.beta_final - gap * 0.01f64.powf(frac),
        }
    };
    beta.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CompositionSpec {
    JOnly,
    HOnly,
    JPlusH { lambda: f64 },
    Pbrs,
    Hurl(HurlSchedule),
}

/// Training reward for one step. `h` is the step's heuristic reward;
/// `phi` and `phi_next` are the heuristic values of the states before and
/// after the step (see [`state_potentials`]).
pub fn compose(
    spec: &CompositionSpec,
    r: f64,
    h: f64,
    phi: f64,
    phi_next: f64,
    gamma: f64,
    iteration: usize,
) -> f64 {
    match spec {
        CompositionSpec::JOnly => r,
        CompositionSpec::HOnly => h,
        CompositionSpec::JPlusH { lambda } => r + lambda * h,
        CompositionSpec::Pbrs => r + gamma * phi_next - phi,
        CompositionSpec::Hurl(s) => r + (1.0 - hurl_beta(s, iteration)) * gamma * phi_next,
    }
}

/// Heuristic values `(h(s_t), h(s_{t+1}))` for every step. Environments pay
/// the heuristic on arrival, so the value of a state is the reward received on
/// entering it: 0 at an episode's first state and at terminal states.
pub fn state_potentials(batch: &RolloutBatch) -> (Vec<f64>, Vec<f64>) {
    let next = (0..batch.len())
        .map(|t| if batch.terminated[t] { 0.0 } else { batch.heuristic_rewards[t] })
        .collect();
    (batch.state_heuristics.clone(), next)
}

pub fn compose_batch(spec: &CompositionSpec, batch: &RolloutBatch, gamma: f64, iteration: usize) -> Vec<f64> {
    let (phi, phi_next) = state_potentials(batch);
    (0..batch.len())
        .map(|t| {
            compose(
                spec,
                batch.task_rewards[t],
                batch.heuristic_rewards[t],
                phi[t],
                phi_next[t],
                gamma,
                iteration,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{ActionValue, Observation, PolicyTag, RngStream};
    use rand::Rng;

    #[test]
    fn pbrs_constant_potential_vanishes() {
        for r in [0.0, 1.0, -0.3] {
            assert_eq!(compose(&CompositionSpec::Pbrs, r, 0.7, 0.7, 0.7, 1.0, 0), r);
        }
    }

    #[test]
    fn hurl_with_full_beta_is_task_reward() {
        let s = HurlSchedule {
            beta0: 1.0,
            ..HurlSchedule::default()
        };
        assert_eq!(compose(&CompositionSpec::Hurl(s), 0.4, 9.0, 9.0, 9.0, 0.99, 3), 0.4);
    }

    #[test]
    fn j_plus_h_default_weight() {
        assert_eq!(compose(&CompositionSpec::JPlusH { lambda: 1.0 }, 0.25, 0.5, 0.0, 0.0, 0.99, 0), 0.75);
    }

    #[test]
    fn linear_schedule() {
        let s = HurlSchedule {
            beta0: 0.0,
            beta_final: 1.0,
            horizon: Some(10),
            shape: ScheduleShape::Linear,
        };
        assert_eq!(hurl_beta(&s, 0), 0.0);
        assert_eq!(hurl_beta(&s, 5), 0.5);
        assert_eq!(hurl_beta(&s, 10), 1.0);
        assert_eq!(hurl_beta(&s, 50), 1.0);
    }

    #[test]
    fn schedules_are_monotone_and_bounded() {
        for shape in [ScheduleShape::Linear, ScheduleShape::Exponential] {
            let s = HurlSchedule {
                beta0: 0.3,
                beta_final: 1.0,
                horizon: Some(37),
                shape,
            };
            assert!((hurl_beta(&s, 0) - 0.3).abs() < 1e-12);
            let betas: Vec<f64> = (0..60).map(|i| hurl_beta(&s, i)).collect();
            assert!(betas.windows(2).all(|w| w[1] >= w[0]));
            assert!(betas.iter().all(|b| (0.0..=1.0).contains(b)));
        }
    }

    #[test]
    fn composition_is_linear_in_lambda() {
        let mut rng = RngStream::new(8, 0);
        for _ in 0..100 {
            let (r, h): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (l1, l2) = (rng.random_range(0.0..2.0), rng.random_range(0.0..2.0));
            let a = compose(&CompositionSpec::JPlusH { lambda: l1 + l2 }, r, h, 0.0, 0.0, 0.9, 0);
            let b = compose(&CompositionSpec::JPlusH { lambda: l1 }, r, h, 0.0, 0.0, 0.9, 0) + l2 * h;
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pbrs_episode_telescopes() {
        let mut rng = RngStream::new(9, 0);
        let gamma = 0.93;
        let n = 7;
        let mut b = RolloutBatch::empty(PolicyTag::Enhanced);
        for t in 0..n {
            b.observations.push(Observation::one_hot(0, 1));
            b.next_observations.push(Observation::one_hot(0, 1));
            b.actions.push(ActionValue::Discrete(0));
            b.log_prob_behavior.push(0.0);
            b.task_rewards.push(rng.random_range(-1.0..1.0));
            b.heuristic_rewards.push(rng.random_range(-1.0..1.0));
            // the batch starts mid-episode, at a state worth some heuristic
            let phi = if t == 0 { rng.random_range(-1.0..1.0) } else { b.heuristic_rewards[t - 1] };
            b.state_heuristics.push(phi);
            b.terminated.push(t == n - 1);
            b.truncated.push(false);
        }
        let shaped = compose_batch(&CompositionSpec::Pbrs, &b, gamma, 0);
        let diff: f64 = (0..n)
            .map(|t| gamma.powi(t as i32) * (shaped[t] - b.task_rewards[t]))
            .sum();
        assert!((diff + b.state_heuristics[0]).abs() < 1e-12);
    }
}
