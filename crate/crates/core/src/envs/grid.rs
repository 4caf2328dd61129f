use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EnvError, HeuristicFamily, Region, TabularMdp};
use crate::mdp::{ActionSpace, ActionValue, Environment, MdpError, Observation, RngStream, StepOutcome};

/// Moves: up (y+1), down (y-1), left (x-1), right (x+1).
const MOVES: [(i64, i64); 4] = [(0, 1), (0, -1), (-1, 0), (1, 0)];

/// Rectangular grid with a single goal cell. Entering the goal pays task
/// reward 1 and terminates. Bumping into the border leaves the agent in place.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridGoalSpec {
    pub width: usize,
    pub height: usize,
    #[serde(default)]
    pub start: [usize; 2],
    /// Defaults to the corner opposite the origin.
    #[serde(default)]
    pub goal: Option<[usize; 2]>,
    #[serde(default = "default_family")]
    pub heuristic: HeuristicFamily,
    #[serde(default = "default_scale")]
    pub heuristic_scale: f64,
    /// Episode cap; defaults to `4 · (width + height)`.
    #[serde(default)]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub slip: f64,
}

fn default_family() -> HeuristicFamily {
    HeuristicFamily::PotentialShaping
}

fn default_scale() -> f64 {
    1.0
}

impl GridGoalSpec {
    pub fn new(width: usize, height: usize, heuristic: HeuristicFamily) -> Self {
        Self {
            width,
            height,
            start: [0, 0],
            goal: None,
            heuristic,
            heuristic_scale: 1.0,
            max_steps: None,
            slip: 0.0,
        }
    }

    /// 6×6 grid whose top-left block pays a heuristic bonus large enough
    /// that parking there beats reaching the goal under the heuristic alone.
    pub fn trap_grid() -> Self {
        Self::new(
            6,
            6,
            HeuristicFamily::TrapLure {
                region: Region::Cells(vec![[0, 5]]),
                bonus: 1.0,
            },
        )
    }

    pub fn goal_cell(&self) -> [usize; 2] {
        self.goal.unwrap_or([self.width - 1, self.height - 1])
    }

    pub fn episode_cap(&self) -> usize {
        self.max_steps.unwrap_or(4 * (self.width + self.height))
    }

    pub fn index(&self, cell: [usize; 2]) -> usize {
        cell[1] * self.width + cell[0]
    }

    pub fn cell(&self, index: usize) -> [usize; 2] {
        [index % self.width, index / self.width]
    }

    pub(super) fn validate(&self) -> Result<(), EnvError> {
        if self.width < 1 || self.height < 1 || self.width * self.height < 2 {
            return Err(EnvError::InvalidSpec("grid needs at least two cells".into()));
        }
        let inside = |c: [usize; 2]| c[0] < self.width && c[1] < self.height;
        let goal = self.goal_cell();
        if !inside(goal) {
            return Err(EnvError::InvalidSpec(format!("goal {goal:?} outside grid")));
        }
        if !inside(self.start) || self.start == goal {
            return Err(EnvError::InvalidSpec(format!(
                "start {:?} must be inside the grid and differ from the goal",
                self.start
            )));
        }
        if !(0.0..=1.0).contains(&self.slip) {
            return Err(EnvError::InvalidSpec("slip must lie in [0, 1]".into()));
        }
        if let Some(region) = self.heuristic.trap_region() {
            let Region::Cells(cells) = region else {
                return Err(EnvError::InvalidSpec("grid traps are cell lists".into()));
            };
            if cells.iter().any(|c| !inside(*c)) {
                return Err(EnvError::InvalidSpec("trap cell outside grid".into()));
            }
            if cells.contains(&goal) {
                return Err(EnvError::InvalidSpec("trap region overlaps the goal".into()));
            }
        }
        self.heuristic.validate()
    }

    fn max_distance(&self) -> f64 {
        let goal = self.goal_cell();
        let dx = goal[0].max(self.width - 1 - goal[0]);
        let dy = goal[1].max(self.height - 1 - goal[1]);
        (dx + dy).max(1) as f64
    }

    fn distance(&self, cell: [usize; 2]) -> f64 {
        let goal = self.goal_cell();
        (cell[0].abs_diff(goal[0]) + cell[1].abs_diff(goal[1])) as f64 / self.max_distance()
    }

    fn next_cell(&self, cell: [usize; 2], a: usize) -> [usize; 2] {
        let (dx, dy) = MOVES[a];
        let x = cell[0] as i64 + dx;
        let y = cell[1] as i64 + dy;
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            cell
        } else {
            [x as usize, y as usize]
        }
    }

    fn rewards(&self, cell: [usize; 2], next: [usize; 2]) -> (f64, f64) {
        let task = if next == self.goal_cell() { 1.0 } else { 0.0 };
        let effort = if next != cell { 1.0 } else { 0.0 };
        let in_trap = self
            .heuristic
            .trap_region()
            .is_some_and(|r| r.contains_cell(next));
        let h = self
            .heuristic
            .reward(self.heuristic_scale, self.distance(next), effort, in_trap);
        (task, h)
    }

    pub(super) fn to_tabular(&self, gamma: f64) -> Result<TabularMdp, EnvError> {
        self.validate()?;
        let states = self.width * self.height;
        let goal = self.goal_cell();
        let mut mdp = TabularMdp::zeros(states, 4, gamma);
        mdp.initial[self.index(self.start)] = 1.0;
        mdp.terminal[self.index(goal)] = true;
        for s in 0..states {
            let cell = self.cell(s);
            for a in 0..4 {
                if cell == goal {
                    mdp.set_transition(s, a, s, 1.0);
                    continue;
                }
                for effective in 0..4 {
                    let p = self.slip / 4.0 + if effective == a { 1.0 - self.slip } else { 0.0 };
                    if p == 0.0 {
                        continue;
                    }
                    let next = self.next_cell(cell, effective);
                    let (r, h) = self.rewards(cell, next);
                    mdp.add_transition(s, a, self.index(next), p, r, h);
                }
            }
        }
        Ok(mdp)
    }
}

#[derive(Debug, Clone)]
pub struct GridGoal {
    spec: GridGoalSpec,
    cell: [usize; 2],
    t: usize,
}

impl GridGoal {
    pub fn new(spec: GridGoalSpec) -> Result<Self, EnvError> {
        spec.validate()?;
        let cell = spec.start;
        Ok(Self { spec, cell, t: 0 })
    }

    pub fn cell(&self) -> [usize; 2] {
        self.cell
    }

    pub fn set_cell(&mut self, cell: [usize; 2]) {
        self.cell = cell;
    }

    fn observe(&self) -> Observation {
        Observation::one_hot(self.spec.index(self.cell), self.spec.width * self.spec.height)
    }
}

impl Environment for GridGoal {
    fn observation_dim(&self) -> usize {
        self.spec.width * self.spec.height
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(4)
    }

    fn reset(&mut self, _rng: &mut RngStream) -> Observation {
        self.cell = self.spec.start;
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &ActionValue, rng: &mut RngStream) -> Result<StepOutcome, MdpError> {
        self.action_space().validate(action)?;
        let ActionValue::Discrete(mut a) = *action else {
            unreachable!("validated as discrete")
        };
        if self.spec.slip > 0.0 && rng.random::<f64>() < self.spec.slip {
            a = rng.random_range(0..4);
        }
        let next = self.spec.next_cell(self.cell, a);
        let (task_reward, heuristic_reward) = self.spec.rewards(self.cell, next);
        self.cell = next;
        self.t += 1;
        let terminated = next == self.spec.goal_cell();
        Ok(StepOutcome {
            next_observation: self.observe(),
            task_reward,
            heuristic_reward,
            terminated,
            truncated: !terminated && self.t >= self.spec.episode_cap(),
        })
    }
}
