//! A sampling environment and a fixed behavior policy over a `TabularMdp`.

#![allow(dead_code)]

use hepo_core::envs::{TabularMdp, TabularPolicy};
use hepo_core::mdp::{
    ActionSpace, ActionValue, BehaviorPolicy, Environment, MdpError, Observation, RngStream, StepOutcome,
};
use rand::Rng;

/// Samples `s' ~ P(s, a)` and pays the expected rewards `R[s, a]`, `Hr[s, a]`.
pub struct SampledMdp {
    pub mdp: TabularMdp,
    pub state: usize,
}

fn draw(probs: &[f64], rng: &mut RngStream) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

impl SampledMdp {
    pub fn new(mdp: TabularMdp) -> Self {
        Self { mdp, state: 0 }
    }
}

impl Environment for SampledMdp {
    fn observation_dim(&self) -> usize {
        self.mdp.states
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.mdp.actions)
    }

    fn reset(&mut self, rng: &mut RngStream) -> Observation {
        self.state = draw(&self.mdp.initial, rng);
        Observation::one_hot(self.state, self.mdp.states)
    }

    fn step(&mut self, action: &ActionValue, rng: &mut RngStream) -> Result<StepOutcome, MdpError> {
        self.action_space().validate(action)?;
        let ActionValue::Discrete(a) = *action else { unreachable!() };
        let s = self.state;
        let next = draw(self.mdp.row(s, a), rng);
        let k = s * self.mdp.actions + a;
        self.state = next;
        Ok(StepOutcome {
            next_observation: Observation::one_hot(next, self.mdp.states),
            task_reward: self.mdp.task_reward[k],
            heuristic_reward: self.mdp.heuristic_reward[k],
            terminated: self.mdp.terminal[next],
            truncated: false,
        })
    }
}

/// Acts from a fixed table of action probabilities.
pub struct TablePolicy(pub TabularPolicy);

impl BehaviorPolicy for TablePolicy {
    fn observation_dim(&self) -> usize {
        self.0.states
    }

    fn act(&self, observation: &Observation, rng: &mut RngStream) -> (ActionValue, f64) {
        let s = observation.index.expect("one-hot observation");
        let row: Vec<f64> = (0..self.0.actions).map(|a| self.0.prob(s, a)).collect();
        let a = draw(&row, rng);
        (ActionValue::Discrete(a), row[a].ln())
    }
}

/// Random MDP whose last state is terminal, so episodes end.
pub fn episodic_mdp(states: usize, actions: usize, gamma: f64, seed: u64) -> TabularMdp {
    let mut rng = RngStream::new(seed, 0);
    let mut mdp = TabularMdp::random(states, actions, gamma, &mut rng);
    let last = states - 1;
    mdp.terminal[last] = true;
    mdp.initial = vec![0.0; states];
    mdp.initial[0] = 1.0;
    for a in 0..actions {
        for next in 0..states {
            mdp.set_transition(last, a, next, 0.0);
        }
        mdp.set_transition(last, a, last, 1.0);
        mdp.task_reward[last * actions + a] = 0.0;
        mdp.heuristic_reward[last * actions + a] = 0.0;
    }
    mdp
}
