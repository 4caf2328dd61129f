//! Heuristic-enhanced policy optimization: train a policy on task plus
//! heuristic rewards under the constraint that it does at least as well on the
//! task as a policy trained on the heuristic alone.

pub mod approx;
pub mod envs;
pub mod mdp;
pub mod estimate;
pub mod ppo;
pub mod composition;
pub mod dual;
pub mod trainer;
pub mod stats;
pub mod oracle;
