use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, HeuristicFamily, TabularMdp};
use crate::mdp::{ActionSpace, ActionValue, Environment, MdpError, Observation, RngStream, StepOutcome};

const LEFT: usize = 0;
const RIGHT: usize = 1;

/// Chain of `length + 1` states. The agent starts at 0 and is paid task
/// reward 1 on entering state `length`, which terminates the episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SparseChainSpec {
    pub length: usize,
    #[serde(default = "default_family")]
    pub heuristic: HeuristicFamily,
    #[serde(default = "default_scale")]
    pub heuristic_scale: f64,
    /// Episode cap; defaults to `4 · length`.
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Probability that the chosen action is replaced by a uniform one.
    #[serde(default)]
    pub slip: f64,
}

fn default_family() -> HeuristicFamily {
    HeuristicFamily::PotentialShaping
}

fn default_scale() -> f64 {
    1.0
}

impl SparseChainSpec {
    pub fn new(length: usize, heuristic: HeuristicFamily) -> Self {
        Self {
            length,
            heuristic,
            heuristic_scale: 1.0,
            max_steps: None,
            slip: 0.0,
        }
    }

    pub(super) fn validate(&self) -> Result<(), EnvError> {
        if self.length < 2 {
            return Err(EnvError::InvalidSpec(format!(
                "chain length must be >= 2, got {}",
                self.length
            )));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(EnvError::InvalidSpec("slip must lie in [0, 1]".into()));
        }
        self.heuristic.validate()
    }

    pub fn episode_cap(&self) -> usize {
        self.max_steps.unwrap_or(4 * self.length)
    }

    fn next_state(&self, s: usize, a: usize) -> usize {
        match a {
            LEFT => s.saturating_sub(1),
            _ => (s + 1).min(self.length),
        }
    }

    fn rewards(&self, s: usize, next: usize) -> (f64, f64) {
        let task = if next == self.length { 1.0 } else { 0.0 };
        let distance = (self.length - next) as f64 / self.length as f64;
        let effort = if next != s { 1.0 } else { 0.0 };
        let in_trap = self
            .heuristic
            .trap_region()
            .is_some_and(|r| r.contains_cell([next, 0]));
        let h = self
            .heuristic
            .reward(self.heuristic_scale, distance, effort, in_trap);
        (task, h)
    }

    pub(super) fn to_tabular(&self, gamma: f64) -> Result<TabularMdp, EnvError> {
        self.validate()?;
        let states = self.length + 1;
        let mut mdp = TabularMdp::zeros(states, 2, gamma);
        mdp.initial[0] = 1.0;
        mdp.terminal[self.length] = true;
        for s in 0..states {
            for a in 0..2 {
                if s == self.length {
                    mdp.set_transition(s, a, s, 1.0);
                    continue;
                }
                for (outcome, p) in self.outcome_distribution(a) {
                    let next = self.next_state(s, outcome);
                    let (r, h) = self.rewards(s, next);
                    mdp.add_transition(s, a, next, p, r, h);
                }
            }
        }
        Ok(mdp)
    }

    /// Effective actions and their probabilities under slipping.
    fn outcome_distribution(&self, a: usize) -> Vec<(usize, f64)> {
        let mut out = vec![(LEFT, self.slip * 0.5), (RIGHT, self.slip * 0.5)];
        out[a].1 += 1.0 - self.slip;
        out.retain(|(_, p)| *p > 0.0);
        out
    }
}

#[derive(Debug, Clone)]
pub struct SparseChain {
    spec: SparseChainSpec,
    state: usize,
    t: usize,
}

impl SparseChain {
    pub fn new(spec: SparseChainSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(Self {
            spec,
            state: 0,
            t: 0,
        })
    }

    pub fn state(&self) -> usize {
        self.state
    }

    /// Places the agent at `state`; used by tests that start mid-chain.
    pub fn set_state(&mut self, state: usize) {
        self.state = state.min(self.spec.length);
    }

    fn observe(&self) -> Observation {
        Observation::one_hot(self.state, self.spec.length + 1)
    }
}

impl Environment for SparseChain {
    fn observation_dim(&self) -> usize {
        self.spec.length + 1
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn reset(&mut self, _rng: &mut RngStream) -> Observation {
        self.state = 0;
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &ActionValue, rng: &mut RngStream) -> Result<StepOutcome, MdpError> {
        self.action_space().validate(action)?;
        let ActionValue::Discrete(mut a) = *action else {
            unreachable!("validated as discrete")
        };
        if self.spec.slip > 0.0 && rng.random::<f64>() < self.spec.slip {
            a = rng.random_range(0..2);
        }
        let next = self.spec.next_state(self.state, a);
        let (task_reward, heuristic_reward) = self.spec.rewards(self.state, next);
        self.state = next;
        self.t += 1;
        let terminated = next == self.spec.length;
        Ok(StepOutcome {
            next_observation: self.observe(),
            task_reward,
            heuristic_reward,
            terminated,
            truncated: !terminated && self.t >= self.spec.episode_cap(),
        })
    }
}
