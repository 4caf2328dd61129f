use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, HeuristicFamily, Region};
use crate::mdp::{ActionSpace, ActionValue, Environment, MdpError, Observation, RngStream, StepOutcome};

const DAMPING: f64 = 0.9;
const ACCEL_GAIN: f64 = 0.2;
const DT: f64 = 0.1;

/// Point mass in the square `[-1, 1]²` driven by a bounded 2-D acceleration.
/// Task reward 1 on entering the goal disc; the heuristic is a dense distance
/// term from the chosen family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMassSpec {
    #[serde(default = "default_goal")]
    pub goal: [f64; 2],
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    /// Start positions are drawn uniformly from this axis-aligned box.
    #[serde(default = "default_start_low")]
    pub start_low: [f64; 2],
    #[serde(default = "default_start_high")]
    pub start_high: [f64; 2],
    #[serde(default = "default_action_bound")]
    pub action_bound: f64,
    #[serde(default = "default_family")]
    pub heuristic: HeuristicFamily,
    #[serde(default = "default_scale")]
    pub heuristic_scale: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_goal() -> [f64; 2] {
    [0.5, 0.5]
}
fn default_goal_radius() -> f64 {
    0.1
}
fn default_start_low() -> [f64; 2] {
    [-0.6, -0.6]
}
fn default_start_high() -> [f64; 2] {
    [-0.4, -0.4]
}
fn default_action_bound() -> f64 {
    1.0
}
fn default_family() -> HeuristicFamily {
    HeuristicFamily::PotentialShaping
}
fn default_scale() -> f64 {
    1.0
}
fn default_max_steps() -> usize {
    100
}

impl Default for PointMassSpec {
    fn default() -> Self {
        Self {
            goal: default_goal(),
            goal_radius: default_goal_radius(),
            start_low: default_start_low(),
            start_high: default_start_high(),
            action_bound: default_action_bound(),
            heuristic: default_family(),
            heuristic_scale: default_scale(),
            max_steps: default_max_steps(),
        }
    }
}

impl PointMassSpec {
    pub(super) fn validate(&self) -> Result<(), EnvError> {
        let finite = self
            .goal
            .iter()
            .chain(&self.start_low)
            .chain(&self.start_high)
            .all(|v| v.is_finite() && v.abs() <= 1.0);
        if !finite {
            return Err(EnvError::InvalidSpec("positions must be finite and inside [-1, 1]".into()));
        }
        if !(self.goal_radius > 0.0) {
            return Err(EnvError::InvalidSpec("goal radius must be > 0".into()));
        }
        if !(self.action_bound > 0.0 && self.action_bound.is_finite()) {
            return Err(EnvError::InvalidSpec("action bound must be finite and > 0".into()));
        }
        if self.start_low.iter().zip(&self.start_high).any(|(lo, hi)| lo > hi) {
            return Err(EnvError::InvalidSpec("start box is empty".into()));
        }
        if let Some(region) = self.heuristic.trap_region() {
            if !matches!(region, Region::Disc { .. }) {
                return Err(EnvError::InvalidSpec("point-mass traps are discs".into()));
            }
        }
        self.heuristic.validate()
    }

    fn distance(&self, p: [f64; 2]) -> f64 {
        let dx = p[0] - self.goal[0];
        let dy = p[1] - self.goal[1];
        (dx * dx + dy * dy).sqrt() / (2.0 * std::f64::consts::SQRT_2)
    }
}

#[derive(Debug, Clone)]
pub struct PointMass {
    spec: PointMassSpec,
    position: [f64; 2],
    velocity: [f64; 2],
    t: usize,
}

impl PointMass {
    pub fn new(spec: PointMassSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(Self {
            spec,
            position: [0.0; 2],
            velocity: [0.0; 2],
            t: 0,
        })
    }

    pub fn position(&self) -> [f64; 2] {
        self.position
    }

    fn observe(&self) -> Observation {
        Observation::continuous(vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
        ])
    }
}

impl Environment for PointMass {
    fn observation_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        let b = self.spec.action_bound;
        ActionSpace::Box {
            low: vec![-b, -b],
            high: vec![b, b],
        }
    }

    fn reset(&mut self, rng: &mut RngStream) -> Observation {
        for d in 0..2 {
            let (lo, hi) = (self.spec.start_low[d], self.spec.start_high[d]);
            self.position[d] = if hi > lo { rng.random_range(lo..hi) } else { lo };
        }
        self.velocity = [0.0; 2];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &ActionValue, _rng: &mut RngStream) -> Result<StepOutcome, MdpError> {
        self.action_space().validate(action)?;
        let ActionValue::Continuous(accel) = action else {
            unreachable!("validated as continuous")
        };
        for d in 0..2 {
            self.velocity[d] = DAMPING * self.velocity[d] + ACCEL_GAIN * accel[d];
            let p = self.position[d] + DT * self.velocity[d];
            if p.abs() > 1.0 {
                self.position[d] = p.clamp(-1.0, 1.0);
                self.velocity[d] = 0.0;
            } else {
                self.position[d] = p;
            }
        }
        self.t += 1;
        let distance = self.spec.distance(self.position);
        let reached = distance * 2.0 * std::f64::consts::SQRT_2 <= self.spec.goal_radius;
        let effort = (accel[0] * accel[0] + accel[1] * accel[1]).sqrt();
        let in_trap = self
            .spec
            .heuristic
            .trap_region()
            .is_some_and(|r| r.contains_point(self.position));
        let heuristic_reward = self.spec.heuristic.reward(
            self.spec.heuristic_scale,
            distance,
            effort,
            in_trap,
        );
        Ok(StepOutcome {
            next_observation: self.observe(),
            task_reward: if reached { 1.0 } else { 0.0 },
            heuristic_reward,
            terminated: reached,
            truncated: !reached && self.t >= self.spec.max_steps,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_lands_in_start_box() {
        let spec = PointMassSpec::default();
        let mut env = PointMass::new(spec.clone()).unwrap();
        let mut rng = RngStream::new(3, 1);
        for _ in 0..50 {
            let obs = env.reset(&mut rng);
            for d in 0..2 {
                assert!(obs.features[d] >= spec.start_low[d] && obs.features[d] <= spec.start_high[d]);
            }
            assert_eq!(&obs.features[2..], &[0.0, 0.0]);
        }
    }

    #[test]
    fn out_of_bounds_action_rejected() {
        let mut env = PointMass::new(PointMassSpec::default()).unwrap();
        let mut rng = RngStream::new(0, 0);
        env.reset(&mut rng);
        assert!(env.step(&ActionValue::Continuous(vec![1.5, 0.0]), &mut rng).is_err());
        assert!(env.step(&ActionValue::Continuous(vec![f64::NAN, 0.0]), &mut rng).is_err());
        assert!(env.step(&ActionValue::Discrete(0), &mut rng).is_err());
    }

    #[test]
    fn pushing_toward_goal_reaches_it() {
        let mut env = PointMass::new(PointMassSpec::default()).unwrap();
        let mut rng = RngStream::new(0, 0);
        env.reset(&mut rng);
        let mut reached = false;
        let mut last_h = f64::NEG_INFINITY;
        for _ in 0..60 {
            let p = env.position();
            let dir = [0.5 - p[0], 0.5 - p[1]];
            let n = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt().max(1e-9);
            // brake once close so the mass does not overshoot the disc
            let gain = if n < 0.3 { 0.3 } else { 1.0 };
            let a = vec![gain * dir[0] / n, gain * dir[1] / n];
            let out = env.step(&ActionValue::Continuous(a), &mut rng).unwrap();
            last_h = out.heuristic_reward;
            if out.terminated {
                assert_eq!(out.task_reward, 1.0);
                reached = true;
                break;
            }
        }
        assert!(reached);
        assert!(last_h > -0.1);
    }

    #[test]
    fn invalid_radius_rejected() {
        let spec = PointMassSpec {
            goal_radius: 0.0,
            ..PointMassSpec::default()
        };
        assert!(PointMass::new(spec).is_err());
    }
}
