//! Advantage estimation and value-function fitting.
//!
//! Value heads regress onto one-step TD targets built from a frozen snapshot
//! of the previous iteration's head: `y = r + γ · V_snapshot(s')`, with no
//! bootstrap after termination. In the dual-policy setting all four heads are
//! fitted on the union of both rollout buffers.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::approx::{AdamState, Approximator, ApproxError, InitRole, Loss};
use crate::mdp::{Observation, RngStream, RolloutBatch};

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("input arrays have different lengths")]
    Length,
    #[error("non-finite input to advantage estimation")]
    NonFinite,
    #[error("lambda must lie in [0, 1], got {0}")]
    Lambda(f64),
    #[error("value regression diverged (loss {0:e})")]
    Diverged(f64),
    #[error("value fitting needs at least one transition")]
    EmptyBuffer,
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

/// Generalized advantage estimation over contiguous episode segments.
///
/// `next_values[t]` is `V(s_{t+1})` for the recorded next observation.
/// `segment_end[t]` marks the last step of a segment (termination or
/// truncation); the recursion does not cross it. Terminated steps bootstrap
/// with 0, truncated ones with `next_values[t]`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    terminated: &[bool],
    segment_end: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, EstimateError> {
    let n = rewards.len();
    if values.len() != n || next_values.len() != n || terminated.len() != n || segment_end.len() != n
    {
        return Err(EstimateError::Length);
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(EstimateError::Lambda(lambda));
    }
    if rewards
        .iter()
        .chain(values)
        .chain(next_values)
        .any(|x| !x.is_finite())
    {
        return Err(EstimateError::NonFinite);
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let boot = if terminated[t] { 0.0 } else { next_values[t] };
        let delta = rewards[t] + gamma * boot - values[t];
        let carry = if segment_end[t] || terminated[t] { 0.0 } else { running };
        running = delta + gamma * lambda * carry;
        adv[t] = running;
    }
    Ok(adv)
}

/// Rescales to zero mean and unit standard deviation.
pub fn standardize(xs: &mut [f64]) {
    if xs.len() < 2 {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    xs.iter_mut().for_each(|x| *x = (*x - mean) / std);
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// A scalar value approximator with its frozen target snapshot.
#[derive(Debug, Clone)]
pub struct ValueHead {
    pub net: Approximator,
    pub params: Vec<f64>,
    pub snapshot: Vec<f64>,
    adam: AdamState,
}

impl ValueHead {
    pub fn new<R: Rng + ?Sized>(net: Approximator, lr: f64, rng: &mut R) -> Self {
        assert_eq!(net.output_dim(), 1, "value heads have one output");
        let params = net.init(InitRole::Value, rng);
        let adam = AdamState::new(params.len(), lr);
        Self {
            net,
            snapshot: params.clone(),
            params,
            adam,
        }
    }

    pub fn value(&self, obs: &Observation) -> f64 {
        self.net.forward(&self.params, obs)[0]
    }

    pub fn snapshot_value(&self, obs: &Observation) -> f64 {
        self.net.forward(&self.snapshot, obs)[0]
    }

    pub fn refresh_snapshot(&mut self) {
        self.snapshot.clone_from(&self.params);
    }

    /// GAE advantages of `rewards` along `batch` using this head's current values.
    pub fn advantages(
        &self,
        batch: &RolloutBatch,
        rewards: &[f64],
        gamma: f64,
        lambda: f64,
    ) -> Result<Vec<f64>, EstimateError> {
        let values: Vec<f64> = batch.observations.iter().map(|o| self.value(o)).collect();
        let next: Vec<f64> = batch.next_observations.iter().map(|o| self.value(o)).collect();
        let ends: Vec<bool> = (0..batch.len()).map(|t| batch.segment_end(t)).collect();
        gae(rewards, &values, &next, &batch.terminated, &ends, gamma, lambda)
    }

    /// Minibatch Adam regression of the current parameters onto `targets`.
    /// Returns the mean squared error of the final epoch.
    pub fn regress(
        &mut self,
        observations: &[&Observation],
        targets: &[f64],
        plan: &[Vec<Vec<usize>>],
    ) -> Result<f64, EstimateError> {
        let mut last = 0.0;
        for epoch in plan {
            let mut total = 0.0;
            for mb in epoch {
                let loss = ValueRegressionLoss {
                    net: &self.net,
                    observations: mb.iter().map(|&i| observations[i]).collect(),
                    targets: mb.iter().map(|&i| targets[i]).collect(),
                };
                let (l, g) = loss.loss_and_grad(&self.params)?;
                if !l.is_finite() || l > DIVERGENCE_LIMIT {
                    return Err(EstimateError::Diverged(l));
                }
                total += l * mb.len() as f64;
                self.adam.step(&mut self.params, &g);
            }
            last = total / targets.len() as f64;
        }
        Ok(last)
    }
}

/// Mean squared error `mean_i (V(s_i) − y_i)²`.
pub struct ValueRegressionLoss<'a> {
    pub net: &'a Approximator,
    pub observations: Vec<&'a Observation>,
    pub targets: Vec<f64>,
}

impl Loss for ValueRegressionLoss<'_> {
    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>), ApproxError> {
        let n = self.targets.len().max(1) as f64;
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (obs, y) in self.observations.iter().zip(&self.targets) {
            let (out, cache) = self.net.forward_cached(params, obs);
            let err = out[0] - y;
            loss += err * err / n;
            self.net.backward(params, &cache, &[2.0 * err / n], &mut grad);
        }
        Ok((loss, grad))
    }
}

/// Shuffled minibatch index plan: `epochs × minibatches` index lists.
pub fn minibatch_plan(n: usize, epochs: usize, minibatches: usize, rng: &mut RngStream) -> Vec<Vec<Vec<usize>>> {
    let minibatches = minibatches.clamp(1, n.max(1));
    (0..epochs)
        .map(|_| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(rng);
            split_even(&idx, minibatches)
        })
        .collect()
}

pub(crate) fn split_even(idx: &[usize], parts: usize) -> Vec<Vec<usize>> {
    let n = idx.len();
    (0..parts)
        .map(|k| idx[k * n / parts..(k + 1) * n / parts].to_vec())
        .filter(|v| !v.is_empty())
        .collect()
}

/// The four value approximators of the dual-policy method.
#[derive(Debug, Clone)]
pub struct ValueHeads {
    /// `V^π_r`
    pub enhanced_task: ValueHead,
    /// `V^π_h`
    pub enhanced_heuristic: ValueHead,
    /// `V^{π_H}_r`
    pub reference_task: ValueHead,
    /// `V^{π_H}_h`
    pub reference_heuristic: ValueHead,
}

impl ValueHeads {
    pub fn new<R: Rng + ?Sized>(net: &Approximator, lr: f64, rng: &mut R) -> Self {
        Self {
            enhanced_task: ValueHead::new(net.clone(), lr, rng),
            enhanced_heuristic: ValueHead::new(net.clone(), lr, rng),
            reference_task: ValueHead::new(net.clone(), lr, rng),
            reference_heuristic: ValueHead::new(net.clone(), lr, rng),
        }
    }

    fn all_mut(&mut self) -> [(&mut ValueHead, Stream); 4] {
        [
            (&mut self.enhanced_task, Stream::Task),
            (&mut self.enhanced_heuristic, Stream::Heuristic),
            (&mut self.reference_task, Stream::Task),
            (&mut self.reference_heuristic, Stream::Heuristic),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stream {
    Task,
    Heuristic,
}

/// GAE advantages for both buffers.
///
/// Own-policy arrays use the collecting policy's heads on its own buffer. The
/// cross arrays evaluate the other policy's task head on a buffer, which is
/// what the multiplier gradient needs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdvantageSet {
    /// `A^π_r` over the enhanced buffer.
    pub enhanced_task: Vec<f64>,
    /// `A^π_h` over the enhanced buffer.
    pub enhanced_heuristic: Vec<f64>,
    /// `A^{π_H}_r` over the reference buffer.
    pub reference_task: Vec<f64>,
    /// `A^{π_H}_h` over the reference buffer.
    pub reference_heuristic: Vec<f64>,
    /// `A^{π_H}_r` over the enhanced buffer.
    pub reference_task_on_enhanced: Vec<f64>,
    /// `A^π_r` over the reference buffer.
    pub enhanced_task_on_reference: Vec<f64>,
    pub gamma: f64,
    pub lambda: f64,
}

impl AdvantageSet {
    /// Standardizes each of the four policy-update arrays independently.
    pub fn standardized(&self) -> Self {
        let mut out = self.clone();
        for arr in [
            &mut out.enhanced_task,
            &mut out.enhanced_heuristic,
            &mut out.reference_task,
            &mut out.reference_heuristic,
        ] {
            standardize(arr);
        }
        out
    }
}

pub fn compute_advantage_set(
    enhanced: &RolloutBatch,
    reference: &RolloutBatch,
    heads: &ValueHeads,
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageSet, EstimateError> {
    let run = |head: &ValueHead, batch: &RolloutBatch, stream: Stream| {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let rewards = match stream {
            Stream::Task => &batch.task_rewards,
            Stream::Heuristic => &batch.heuristic_rewards,
        };
        head.advantages(batch, rewards, gamma, lambda)
    };
    Ok(AdvantageSet {
        enhanced_task: run(&heads.enhanced_task, enhanced, Stream::Task)?,
        enhanced_heuristic: run(&heads.enhanced_heuristic, enhanced, Stream::Heuristic)?,
        reference_task: run(&heads.reference_task, reference, Stream::Task)?,
        reference_heuristic: run(&heads.reference_heuristic, reference, Stream::Heuristic)?,
        reference_task_on_enhanced: run(&heads.reference_task, enhanced, Stream::Task)?,
        enhanced_task_on_reference: run(&heads.enhanced_task, reference, Stream::Task)?,
        gamma,
        lambda,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSchedule {
    pub epochs: usize,
    pub minibatches: usize,
}

/// Fits all four heads on the union of both buffers, then refreshes their
/// snapshots. Returns the final-epoch loss of each head.
pub fn fit_values_shared(
    heads: &mut ValueHeads,
    enhanced: &RolloutBatch,
    reference: &RolloutBatch,
    gamma: f64,
    schedule: FitSchedule,
    rng: &mut RngStream,
) -> Result<[f64; 4], EstimateError> {
    let union: Vec<&RolloutBatch> = [enhanced, reference]
        .into_iter()
        .filter(|b| !b.is_empty())
        .collect();
    let n: usize = union.iter().map(|b| b.len()).sum();
    if n == 0 {
        return Err(EstimateError::EmptyBuffer);
    }
    let observations: Vec<&Observation> = union.iter().flat_map(|b| b.observations.iter()).collect();
    let plan = minibatch_plan(n, schedule.epochs, schedule.minibatches, rng);
    let results: Vec<Result<f64, EstimateError>> = heads
        .all_mut()
        .into_par_iter()
        .map(|(head, stream)| {
            let targets = td_targets(head, &union, stream, gamma);
            let loss = head.regress(&observations, &targets, &plan);
            head.refresh_snapshot();
            loss
        })
        .collect();
    let mut out = [0.0; 4];
    for (slot, r) in out.iter_mut().zip(results) {
        *slot = r?;
    }
    Ok(out)
}

/// Fits a single head on one buffer against an explicit reward stream.
pub fn fit_value_single(
    head: &mut ValueHead,
    batch: &RolloutBatch,
    rewards: &[f64],
    gamma: f64,
    schedule: FitSchedule,
    rng: &mut RngStream,
) -> Result<f64, EstimateError> {
    if batch.is_empty() {
        return Err(EstimateError::EmptyBuffer);
    }
    let targets: Vec<f64> = (0..batch.len())
        .map(|t| one_step_target(head, rewards[t], &batch.next_observations[t], batch.terminated[t], gamma))
        .collect();
    let observations: Vec<&Observation> = batch.observations.iter().collect();
    let plan = minibatch_plan(batch.len(), schedule.epochs, schedule.minibatches, rng);
    let loss = head.regress(&observations, &targets, &plan)?;
    head.refresh_snapshot();
    Ok(loss)
}

fn td_targets(head: &ValueHead, union: &[&RolloutBatch], stream: Stream, gamma: f64) -> Vec<f64> {
    union
        .iter()
        .flat_map(|b| {
            let rewards = match stream {
                Stream::Task => &b.task_rewards,
                Stream::Heuristic => &b.heuristic_rewards,
            };
            (0..b.len()).map(move |t| {
                one_step_target(head, rewards[t], &b.next_observations[t], b.terminated[t], gamma)
            })
        })
        .collect()
}

fn one_step_target(head: &ValueHead, reward: f64, next: &Observation, terminated: bool, gamma: f64) -> f64 {
    if terminated {
        reward
    } else {
        reward + gamma * head.snapshot_value(next)
    }
}
