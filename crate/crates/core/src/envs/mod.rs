//! Desk-scale dual-reward environments and their exact tabular counterparts.
//!
//! Each environment pays a binary task reward on entering the goal and a
//! heuristic reward drawn from one of several families. Some families are
//! helpful, others reproduce typical flaws of hand-written rewards: a
//! sign-flipped distance term, an action penalty weighted far too high, and a
//! bonus plateau away from the goal that invites reward hacking.

mod chain;
mod grid;
mod point_mass;
pub mod tabular;

pub use chain::{SparseChain, SparseChainSpec};
pub use grid::{GridGoal, GridGoalSpec};
pub use point_mass::{PointMass, PointMassSpec};
pub use tabular::{
    discounted_visitation, exact_advantage, policy_evaluation, policy_evaluation_direct,
    value_iteration, RewardSelect, TabularError, TabularMdp, TabularPolicy,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mdp::Environment;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    #[error("continuous environments have no tabular form")]
    NotTabular,
}

/// Region used by the trap-lure family. Discrete environments use cells
/// (`[x, y]`, with `y = 0` on the chain); the point mass uses a disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Cells(Vec<[usize; 2]>),
    Disc { center: [f64; 2], radius: f64 },
}

impl Region {
    pub fn contains_cell(&self, cell: [usize; 2]) -> bool {
        match self {
            Region::Cells(cells) => cells.contains(&cell),
            Region::Disc { .. } => false,
        }
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        match self {
            Region::Cells(_) => false,
            Region::Disc { center, radius } => {
                let dx = p[0] - center[0];
                let dy = p[1] - center[1];
                (dx * dx + dy * dy).sqrt() <= *radius
            }
        }
    }
}

/// Heuristic reward families. All are built on the normalized distance
/// `d(s') ∈ [0, 1]` from the reached state to the goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HeuristicFamily {
    /// The potential `-d(s')` paid every step; pulls toward the goal.
    PotentialShaping,
    /// `+d(s')`: the distance term with its sign flipped.
    WrongSignDistance,
    /// Correct shaping minus `weight · ‖a‖`. On grids `‖a‖` is the realized
    /// displacement, so pressing into a wall costs nothing.
    ActionPenaltyOverweight { weight: f64 },
    /// Correct shaping plus `bonus` whenever the reached state is in `region`.
    TrapLure { region: Region, bonus: f64 },
}

impl HeuristicFamily {
    fn validate(&self) -> Result<(), EnvError> {
        match self {
            HeuristicFamily::ActionPenaltyOverweight { weight } if !(*weight > 0.0) => Err(
                EnvError::InvalidSpec(format!("action penalty weight must be > 0, got {weight}")),
            ),
            HeuristicFamily::TrapLure { bonus, .. } if !bonus.is_finite() => Err(
                EnvError::InvalidSpec("trap bonus must be finite".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Heuristic reward for a transition reaching normalized distance
    /// `distance`, with action magnitude `effort` and trap membership `in_trap`.
    pub fn reward(&self, scale: f64, distance: f64, effort: f64, in_trap: bool) -> f64 {
        let shaping = -scale * distance;
        match self {
            HeuristicFamily::PotentialShaping => shaping,
            HeuristicFamily::WrongSignDistance => scale * distance,
            HeuristicFamily::ActionPenaltyOverweight { weight } => shaping - weight * effort,
            HeuristicFamily::TrapLure { bonus, .. } => {
                shaping + if in_trap { *bonus } else { 0.0 }
            }
        }
    }

    pub fn trap_region(&self) -> Option<&Region> {
        match self {
            HeuristicFamily::TrapLure { region, .. } => Some(region),
            _ => None,
        }
    }
}

/// Environment selection as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    SparseChain(SparseChainSpec),
    GridGoal(GridGoalSpec),
    PointMass(PointMassSpec),
}

impl EnvSpec {
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvSpec::SparseChain(s) => s.validate(),
            EnvSpec::GridGoal(s) => s.validate(),
            EnvSpec::PointMass(s) => s.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Environment>, EnvError> {
        self.validate()?;
        Ok(match self {
            EnvSpec::SparseChain(s) => Box::new(SparseChain::new(s.clone())?),
            EnvSpec::GridGoal(s) => Box::new(GridGoal::new(s.clone())?),
            EnvSpec::PointMass(s) => Box::new(PointMass::new(s.clone())?),
        })
    }

    /// Exact enumeration of dynamics and both reward tables.
    pub fn to_tabular(&self, gamma: f64) -> Result<TabularMdp, EnvError> {
        match self {
            EnvSpec::SparseChain(s) => s.to_tabular(gamma),
            EnvSpec::GridGoal(s) => s.to_tabular(gamma),
            EnvSpec::PointMass(_) => Err(EnvError::NotTabular),
        }
    }

    /// Number of discrete states, when the environment is tabular.
    pub fn state_count(&self) -> Option<usize> {
        match self {
            EnvSpec::SparseChain(s) => Some(s.length + 1),
            EnvSpec::GridGoal(s) => Some(s.width * s.height),
            EnvSpec::PointMass(_) => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EnvSpec::SparseChain(_) => "sparse_chain",
            EnvSpec::GridGoal(_) => "grid_goal",
            EnvSpec::PointMass(_) => "point_mass",
        }
    }
}
