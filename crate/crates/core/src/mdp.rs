//! Dual-reward environment interface, rollout storage and seeded collection.
//!
//! Every environment emits two scalar signals per transition: the task reward
//! `r` (the true, usually sparse, objective) and the heuristic reward `h`
//! (a dense designer-provided signal). Rollouts record both streams so that
//! any algorithm can build its own training reward from them.
//!
//! Batches are laid out env-major: all steps of environment 0, then all steps
//! of environment 1, and so on. The last step of every environment segment
//! that did not terminate is flagged `truncated` so that advantage estimation
//! bootstraps from the value of the recorded next observation.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("invalid discrete action {action} (action count {count})")]
    InvalidAction { action: usize, count: usize },
    #[error("continuous action {value} out of bounds [{low}, {high}] in dimension {dim}")]
    ActionOutOfBounds {
        dim: usize,
        value: f64,
        low: f64,
        high: f64,
    },
    #[error("action kind does not match the action space: {0}")]
    ActionKind(String),
    #[error("policy expects observations of dimension {policy}, environment produces {env}")]
    ObservationShape { policy: usize, env: usize },
    #[error("rollout requires n_steps > 0 and a non-empty environment pool")]
    EmptyRollout,
    #[error("discount must lie in [0, 1], got {0}")]
    Discount(f64),
}

/// Environment observation. Tabular environments also expose the discrete
/// state index alongside a one-hot feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
    pub index: Option<usize>,
}

impl Observation {
    pub fn continuous(features: Vec<f64>) -> Self {
        Self {
            features,
            index: None,
        }
    }

    pub fn one_hot(index: usize, count: usize) -> Self {
        let mut features = vec![0.0; count];
        features[index] = 1.0;
        Self {
            features,
            index: Some(index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionValue {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    Box { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    /// Rejects actions outside the space.
    pub fn validate(&self, action: &ActionValue) -> Result<(), MdpError> {
        match (self, action) {
            (ActionSpace::Discrete(count), ActionValue::Discrete(a)) => {
                if a < count {
                    Ok(())
                } else {
                    Err(MdpError::InvalidAction {
                        action: *a,
                        count: *count,
                    })
                }
            }
            (ActionSpace::Box { low, high }, ActionValue::Continuous(values)) => {
                if values.len() != low.len() {
                    return Err(MdpError::ActionKind(format!(
                        "expected {} dimensions, got {}",
                        low.len(),
                        values.len()
                    )));
                }
                for (dim, ((&v, &lo), &hi)) in values.iter().zip(low).zip(high).enumerate() {
                    if !v.is_finite() || v < lo || v > hi {
                        return Err(MdpError::ActionOutOfBounds {
                            dim,
                            value: v,
                            low: lo,
                            high: hi,
                        });
                    }
                }
                Ok(())
            }
            (space, action) => Err(MdpError::ActionKind(format!(
                "{action:?} for space {space:?}"
            ))),
        }
    }

    /// Projects a raw policy sample into the space. Discrete actions pass through.
    pub fn clip(&self, action: &ActionValue) -> ActionValue {
        match (self, action) {
            (ActionSpace::Box { low, high }, ActionValue::Continuous(values)) => {
                ActionValue::Continuous(
                    values
                        .iter()
                        .zip(low.iter().zip(high))
                        .map(|(v, (lo, hi))| v.clamp(*lo, *hi))
                        .collect(),
                )
            }
            _ => action.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_observation: Observation,
    pub task_reward: f64,
    pub heuristic_reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

/// Seeded random stream. Identical `(seed, stream_id)` pairs reproduce
/// identical draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

pub trait Environment: Send {
    fn observation_dim(&self) -> usize;

    fn action_space(&self) -> ActionSpace;

    /// Starts a new episode and resets the episode step counter.
    fn reset(&mut self, rng: &mut RngStream) -> Observation;

    /// Advances one transition, emitting both rewards for the same `(s, a)`.
    fn step(&mut self, action: &ActionValue, rng: &mut RngStream)
        -> Result<StepOutcome, MdpError>;
}

/// Anything that can choose actions during collection.
pub trait BehaviorPolicy: Sync {
    fn observation_dim(&self) -> usize;

    /// Returns the raw sampled action and its log-probability under the policy.
    fn act(&self, observation: &Observation, rng: &mut RngStream) -> (ActionValue, f64);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyTag {
    Enhanced,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub task_return: f64,
    pub heuristic_return: f64,
    pub length: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub observations: Vec<Observation>,
    pub actions: Vec<ActionValue>,
    pub log_prob_behavior: Vec<f64>,
    pub task_rewards: Vec<f64>,
    pub heuristic_rewards: Vec<f64>,
    /// Heuristic reward received on entering `observations[t]`: the
    /// heuristic value of that state. 0 at the first step of an episode.
    pub state_heuristics: Vec<f64>,
    pub terminated: Vec<bool>,
    /// Time-limit truncation or the end of a rollout window. Both bootstrap.
    pub truncated: Vec<bool>,
    /// Observation reached by each transition (before any automatic reset).
    pub next_observations: Vec<Observation>,
    pub tag: PolicyTag,
    /// Episodes that finished inside this batch.
    pub episodes: Vec<EpisodeSummary>,
}

impl RolloutBatch {
    pub fn empty(tag: PolicyTag) -> Self {
        Self {
            observations: Vec::new(),
            actions: Vec::new(),
            log_prob_behavior: Vec::new(),
            task_rewards: Vec::new(),
            heuristic_rewards: Vec::new(),
            state_heuristics: Vec::new(),
            terminated: Vec::new(),
            truncated: Vec::new(),
            next_observations: Vec::new(),
            tag,
            episodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn total_env_steps(&self) -> usize {
        self.len()
    }

    /// True where an episode segment ends (terminated or truncated).
    pub fn segment_end(&self, t: usize) -> bool {
        self.terminated[t] || self.truncated[t]
    }

    fn push(&mut self, step: StoredStep) {
        self.observations.push(step.observation);
        self.actions.push(step.action);
        self.log_prob_behavior.push(step.log_prob);
        self.task_rewards.push(step.outcome.task_reward);
        self.heuristic_rewards.push(step.outcome.heuristic_reward);
        self.state_heuristics.push(step.arrival_heuristic);
        self.terminated.push(step.outcome.terminated);
        self.truncated.push(step.outcome.truncated);
        self.next_observations.push(step.outcome.next_observation);
    }

    /// Checks the structural invariants of a batch.
    pub fn check_consistent(&self) -> bool {
        let n = self.len();
        self.actions.len() == n
            && self.log_prob_behavior.len() == n
            && self.task_rewards.len() == n
            && self.heuristic_rewards.len() == n
            && self.state_heuristics.len() == n
            && self.terminated.len() == n
            && self.truncated.len() == n
            && self.next_observations.len() == n
            && self.log_prob_behavior.iter().all(|l| l.is_finite())
            && self.task_rewards.iter().all(|r| r.is_finite())
            && self.heuristic_rewards.iter().all(|h| h.is_finite())
    }
}

struct StoredStep {
    observation: Observation,
    action: ActionValue,
    log_prob: f64,
    arrival_heuristic: f64,
    outcome: StepOutcome,
}

#[derive(Debug, Clone, Copy, Default)]
struct EpisodeAccumulator {
    task: f64,
    heuristic: f64,
    length: usize,
}

struct EnvSlot {
    env: Box<dyn Environment>,
    rng: RngStream,
    current: Observation,
    episode: EpisodeAccumulator,
    /// Heuristic reward paid on entering `current`.
    arrival_heuristic: f64,
}

/// A set of environment instances owned by one collecting policy. Episodes
/// continue across successive rollouts.
pub struct EnvPool {
    slots: Vec<EnvSlot>,
}

impl EnvPool {
    /// Builds `count` instances with `make`, each with a private stream
    /// `(seed, stream_base + i)`.
    pub fn new<F>(count: usize, seed: u64, stream_base: u64, mut make: F) -> Self
    where
        F: FnMut() -> Box<dyn Environment>,
    {
        let slots = (0..count)
            .map(|i| {
                let mut env = make();
                let mut rng = RngStream::new(seed, stream_base + i as u64);
                let current = env.reset(&mut rng);
                EnvSlot {
                    env,
                    rng,
                    current,
                    episode: EpisodeAccumulator::default(),
                    arrival_heuristic: 0.0,
                }
            })
            .collect();
        Self { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn observation_dim(&self) -> usize {
        self.slots.first().map_or(0, |s| s.env.observation_dim())
    }
}

/// Collects exactly `n_steps` transitions with `policy`, split across the pool
/// in index order. Episodes auto-reset on termination or time-limit truncation.
pub fn collect_rollout<P: BehaviorPolicy + ?Sized>(
    policy: &P,
    pool: &mut EnvPool,
    n_steps: usize,
    tag: PolicyTag,
) -> Result<RolloutBatch, MdpError> {
    if n_steps == 0 || pool.is_empty() {
        return Err(MdpError::EmptyRollout);
    }
    let env_dim = pool.observation_dim();
    if policy.observation_dim() != env_dim {
        return Err(MdpError::ObservationShape {
            policy: policy.observation_dim(),
            env: env_dim,
        });
    }
    let count = pool.len();
    let mut batch = RolloutBatch::empty(tag);
    for (i, slot) in pool.slots.iter_mut().enumerate() {
        let quota = n_steps / count + usize::from(i < n_steps % count);
        let space = slot.env.action_space();
        for k in 0..quota {
            let (action, log_prob) = policy.act(&slot.current, &mut slot.rng);
            let env_action = space.clip(&action);
            let outcome = slot.env.step(&env_action, &mut slot.rng)?;
            slot.episode.task += outcome.task_reward;
            slot.episode.heuristic += outcome.heuristic_reward;
            slot.episode.length += 1;
            let episode_over = outcome.terminated || outcome.truncated;
            if episode_over {
                batch.episodes.push(EpisodeSummary {
                    task_return: slot.episode.task,
                    heuristic_return: slot.episode.heuristic,
                    length: slot.episode.length,
                    success: outcome.terminated && outcome.task_reward > 0.0,
                });
                slot.episode = EpisodeAccumulator::default();
            }
            let mut stored = StoredStep {
                observation: slot.current.clone(),
                action,
                log_prob,
                arrival_heuristic: slot.arrival_heuristic,
                outcome,
            };
            slot.current = if episode_over {
                slot.arrival_heuristic = 0.0;
                slot.env.reset(&mut slot.rng)
            } else {
                slot.arrival_heuristic = stored.outcome.heuristic_reward;
                stored.outcome.next_observation.clone()
            };
            if k + 1 == quota && !stored.outcome.terminated {
                stored.outcome.truncated = true;
            }
            batch.push(stored);
        }
    }
    Ok(batch)
}

/// Discounted sum `Σ_t γ^t rewards[t]`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64, MdpError> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(MdpError::Discount(gamma));
    }
    Ok(rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}
