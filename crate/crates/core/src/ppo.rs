//! Clipped-surrogate policy updates.
//!
//! An update maximizes a sum of clipped surrogates, one per rollout buffer,
//! each a mean over that buffer's steps:
//!
//! ```text
//! L(θ) = Σ_b mean_{t∈b} min{ρ_t U_t, clip(ρ_t, 1−ε, 1+ε) U_t}
//! ρ_t  = π_θ(a_t|s_t) / μ_b(a_t|s_t)
//! ```
//!
//! where `μ_b` is whichever policy collected buffer `b`. The enhanced policy
//! uses the mixed utility `U_α = (1+α)A_r + A_h` on both buffers, the
//! heuristic policy uses `A_h`, and single-policy baselines have one buffer.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{clip_grad_norm, AdamState, ApproxError, Loss, Policy};
use crate::estimate::{split_even, AdvantageSet};
use crate::mdp::{RngStream, RolloutBatch};

const CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("advantage and utility arrays differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("multiplier must be non-negative and finite, got {0}")]
    Alpha(f64),
    #[error("probability ratio {0} is not positive")]
    Ratio(f64),
    #[error("clip threshold must lie in [0, 1], got {0}")]
    Clip(f64),
    #[error("non-finite surrogate objective")]
    NonFinite,
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MinibatchMixing {
    /// Every minibatch holds an equal share of each buffer.
    #[default]
    Stratified,
    /// Minibatches are drawn from one buffer at a time.
    PerBuffer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClipConfig {
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub minibatch_mixing: MinibatchMixing,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            epochs: 4,
            minibatches: 4,
            lr: 3e-4,
            entropy_coef: 0.0,
            max_grad_norm: Some(1.0),
            minibatch_mixing: MinibatchMixing::Stratified,
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        if !(0.0..=1.0).contains(&self.clip_eps) {
            return Err(PpoError::Clip(self.clip_eps));
        }
        Ok(())
    }
}

/// `(1+α)·A_r + A_h` elementwise.
pub fn mixed_utility(a_r: &[f64], a_h: &[f64], alpha: f64) -> Result<Vec<f64>, PpoError> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(PpoError::Alpha(alpha));
    }
    if a_r.len() != a_h.len() {
        return Err(PpoError::Length(a_r.len(), a_h.len()));
    }
    Ok(a_r.iter().zip(a_h).map(|(r, h)| (1.0 + alpha) * r + h).collect())
}

/// `min{ρU, clip(ρ, 1−ε, 1+ε)U}`.
pub fn clipped_term(ratio: f64, utility: f64, eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    (ratio * utility).min(clipped * utility)
}

/// Whether the clipped term depends on `ρ` locally. At the clip boundary
/// the term is treated as clipped, so `ε = 0` freezes the policy.
fn unclipped_active(ratio: f64, utility: f64, eps: f64) -> bool {
    let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
    ratio * utility < clipped * utility || (ratio > 1.0 - eps && ratio < 1.0 + eps)
}

pub fn clipped_surrogate(ratios: &[f64], utilities: &[f64], eps: f64) -> Result<f64, PpoError> {
    if ratios.len() != utilities.len() {
        return Err(PpoError::Length(ratios.len(), utilities.len()));
    }
    if let Some(r) = ratios.iter().find(|r| !(**r > 0.0)) {
        return Err(PpoError::Ratio(*r));
    }
    if ratios.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = ratios
        .iter()
        .zip(utilities)
        .map(|(r, u)| clipped_term(*r, *u, eps))
        .sum();
    Ok(total / ratios.len() as f64)
}

/// A buffer, its per-step utilities, and the step indices taking part.
#[derive(Clone)]
pub struct SurrogatePart<'a> {
    pub batch: &'a RolloutBatch,
    pub utilities: &'a [f64],
    pub indices: Vec<usize>,
}

impl<'a> SurrogatePart<'a> {
    pub fn full(batch: &'a RolloutBatch, utilities: &'a [f64]) -> Self {
        Self {
            batch,
            utilities,
            indices: (0..batch.len()).collect(),
        }
    }
}

/// Negated sum of per-part clipped surrogates plus an optional entropy bonus
/// averaged over all participating steps.
pub struct SurrogateLoss<'a> {
    pub policy: &'a Policy,
    pub parts: Vec<SurrogatePart<'a>>,
    pub clip_eps: f64,
    pub entropy_coef: f64,
}

impl SurrogateLoss<'_> {
    /// The objective being maximized (the negated loss).
    pub fn objective(&self, params: &[f64]) -> Result<f64, ApproxError> {
        self.loss(params).map(|l| -l)
    }

    fn chunk_grad(
        &self,
        params: &[f64],
        part: &SurrogatePart,
        idx: &[usize],
        n_part: f64,
        n_total: f64,
    ) -> Result<(f64, Vec<f64>), ApproxError> {
        let mut grad = vec![0.0; params.len()];
        let mut obj = 0.0;
        for &t in idx {
            let batch = part.batch;
            let action = &batch.actions[t];
            let eval = self.policy.evaluate_with(params, &batch.observations[t], action)?;
            let ratio = (eval.log_prob - batch.log_prob_behavior[t]).exp();
            if !(ratio > 0.0 && ratio.is_finite()) {
                return Err(ApproxError::NonFinite(format!("probability ratio {ratio}")));
            }
            let u = part.utilities[t];
            obj += clipped_term(ratio, u, self.clip_eps) / n_part;
            let c_lp = if unclipped_active(ratio, u, self.clip_eps) {
                -u * ratio / n_part
            } else {
                0.0
            };
            let c_ent = -self.entropy_coef / n_total;
            if self.entropy_coef != 0.0 {
                obj += self.entropy_coef * eval.dist.entropy() / n_total;
            }
            self.policy.backward(params, &eval, action, c_lp, c_ent, &mut grad)?;
        }
        Ok((-obj, grad))
    }
}

impl Loss for SurrogateLoss<'_> {
    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>), ApproxError> {
        let n_total = self.parts.iter().map(|p| p.indices.len()).sum::<usize>().max(1) as f64;
        let jobs: Vec<(usize, &[usize])> = self
            .parts
            .iter()
            .enumerate()
            .flat_map(|(k, p)| p.indices.chunks(CHUNK).map(move |c| (k, c)))
            .collect();
        // fixed chunking and ordered reduction keep results independent of scheduling
        let pieces: Vec<Result<(f64, Vec<f64>), ApproxError>> = jobs
            .par_iter()
            .map(|(k, idx)| {
                let part = &self.parts[*k];
                let n_part = part.indices.len() as f64;
                self.chunk_grad(params, part, idx, n_part, n_total)
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; params.len()];
        for piece in pieces {
            let (l, g) = piece?;
            loss += l;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((loss, grad))
    }
}

/// A policy together with its optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyLearner {
    pub policy: Policy,
    pub adam: AdamState,
}

impl PolicyLearner {
    pub fn new(policy: Policy, lr: f64) -> Self {
        let adam = AdamState::new(policy.params().len(), lr);
        Self { policy, adam }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub gradient_steps: usize,
    /// Objective on the last minibatch before its step.
    pub last_objective: f64,
}

/// Epochs of minibatch ascent on the summed surrogate of `parts`
/// (`(buffer, utilities)` pairs). Empty buffers are skipped.
pub fn multi_buffer_update(
    learner: &mut PolicyLearner,
    parts: &[(&RolloutBatch, &[f64])],
    cfg: &ClipConfig,
    rng: &mut RngStream,
) -> Result<UpdateReport, PpoError> {
    cfg.validate()?;
    for (b, u) in parts {
        if b.len() != u.len() {
            return Err(PpoError::Length(b.len(), u.len()));
        }
    }
    let parts: Vec<(&RolloutBatch, &[f64])> = parts.iter().copied().filter(|(b, _)| !b.is_empty()).collect();
    let mut report = UpdateReport::default();
    if parts.is_empty() {
        return Ok(report);
    }
    learner.adam.lr = cfg.lr;
    for _ in 0..cfg.epochs {
        for mb in epoch_minibatches(&parts, cfg, rng) {
            let loss = SurrogateLoss {
                policy: &learner.policy,
                parts: mb,
                clip_eps: cfg.clip_eps,
                entropy_coef: cfg.entropy_coef,
            };
            let (l, mut g) = loss.loss_and_grad(learner.policy.params().values())?;
            if !l.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(PpoError::NonFinite);
            }
            if let Some(max) = cfg.max_grad_norm {
                clip_grad_norm(&mut g, max);
            }
            learner.adam.step(learner.policy.params_mut().values_mut(), &g);
            report.gradient_steps += 1;
            report.last_objective = -l;
        }
    }
    if !learner.policy.params().is_finite() {
        return Err(PpoError::NonFinite);
    }
    Ok(report)
}

fn epoch_minibatches<'a>(
    parts: &[(&'a RolloutBatch, &'a [f64])],
    cfg: &ClipConfig,
    rng: &mut RngStream,
) -> Vec<Vec<SurrogatePart<'a>>> {
    let m = cfg.minibatches.max(1);
    let splits: Vec<Vec<Vec<usize>>> = parts
        .iter()
        .map(|(b, _)| {
            let mut idx: Vec<usize> = (0..b.len()).collect();
            idx.shuffle(rng);
            split_even(&idx, m.min(b.len()))
        })
        .collect();
    let make = |k: usize, indices: Vec<usize>| SurrogatePart {
        batch: parts[k].0,
        utilities: parts[k].1,
        indices,
    };
    match cfg.minibatch_mixing {
        MinibatchMixing::Stratified => (0..m)
            .map(|j| {
                splits
                    .iter()
                    .enumerate()
                    .filter_map(|(k, chunks)| chunks.get(j).map(|c| make(k, c.clone())))
                    .collect::<Vec<_>>()
            })
            .filter(|mb| !mb.is_empty())
            .collect(),
        MinibatchMixing::PerBuffer => splits
            .into_iter()
            .enumerate()
            .flat_map(|(k, chunks)| chunks.into_iter().map(move |c| vec![make(k, c)]))
            .collect(),
    }
}

/// Enhanced-policy step: `U_α` on both buffers with each buffer's own-policy advantages.
pub fn enhanced_policy_update(
    learner: &mut PolicyLearner,
    enhanced: &RolloutBatch,
    reference: &RolloutBatch,
    adv: &AdvantageSet,
    alpha: f64,
    cfg: &ClipConfig,
    rng: &mut RngStream,
) -> Result<UpdateReport, PpoError> {
    let u_enh = mixed_utility(&adv.enhanced_task, &adv.enhanced_heuristic, alpha)?;
    let u_ref = mixed_utility(&adv.reference_task, &adv.reference_heuristic, alpha)?;
    multi_buffer_update(learner, &[(enhanced, &u_enh), (reference, &u_ref)], cfg, rng)
}

/// Heuristic-policy step: `A_h` on both buffers.
pub fn heuristic_policy_update(
    learner: &mut PolicyLearner,
    enhanced: &RolloutBatch,
    reference: &RolloutBatch,
    adv: &AdvantageSet,
    cfg: &ClipConfig,
    rng: &mut RngStream,
) -> Result<UpdateReport, PpoError> {
    multi_buffer_update(
        learner,
        &[(enhanced, &adv.enhanced_heuristic), (reference, &adv.reference_heuristic)],
        cfg,
        rng,
    )
}

/// Task-only companion step: `A_r` on both buffers.
pub fn task_policy_update(
    learner: &mut PolicyLearner,
    enhanced: &RolloutBatch,
    reference: &RolloutBatch,
    adv: &AdvantageSet,
    cfg: &ClipConfig,
    rng: &mut RngStream,
) -> Result<UpdateReport, PpoError> {
    multi_buffer_update(
        learner,
        &[(enhanced, &adv.enhanced_task), (reference, &adv.reference_task)],
        cfg,
        rng,
    )
}

/// Standard single-buffer clipped update on a composed-reward advantage stream.
pub fn baseline_update(
    learner: &mut PolicyLearner,
    batch: &RolloutBatch,
    advantages: &[f64],
    cfg: &ClipConfig,
    rng: &mut RngStream,
) -> Result<UpdateReport, PpoError> {
    multi_buffer_update(learner, &[(batch, advantages)], cfg, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::{ActionHead, Approximator};
    use crate::mdp::{BehaviorPolicy, Observation, PolicyTag};
    use rand::Rng;

    #[test]
    fn utility_arithmetic() {
        assert_eq!(mixed_utility(&[0.5], &[-0.2], 1.0).unwrap(), vec![0.8]);
        assert_eq!(mixed_utility(&[0.5, 1.0], &[0.25, -1.0], 0.0).unwrap(), vec![0.75, 0.0]);
        assert!(mixed_utility(&[0.0], &[0.0], -0.1).is_err());
        assert!(mixed_utility(&[0.0], &[], 0.0).is_err());
    }

    #[test]
    fn utility_monotone_in_alpha() {
        let a_r = [0.3, -0.4];
        let a_h = [0.1, 0.1];
        let lo = mixed_utility(&a_r, &a_h, 0.5).unwrap();
        let hi = mixed_utility(&a_r, &a_h, 0.6).unwrap();
        assert!(hi[0] > lo[0]);
        assert!(hi[1] < lo[1]);
    }

    #[test]
    fn surrogate_values() {
        let u = [0.3, -0.7, 1.1];
        assert!((clipped_surrogate(&[1.0; 3], &u, 0.2).unwrap() - 0.7 / 3.0).abs() < 1e-15);
        assert!((clipped_term(2.0, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_term(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
        assert_eq!(clipped_surrogate(&[0.0], &[1.0], 0.2), Err(PpoError::Ratio(0.0)));
        assert!(clipped_surrogate(&[-1.0], &[1.0], 0.2).is_err());
    }

    #[test]
    fn pointwise_lower_bound_and_scale_covariance() {
        let mut rng = RngStream::new(1, 0);
        for _ in 0..1000 {
            let r = rng.random_range(0.01..3.0);
            let u = rng.random_range(-2.0..2.0);
            assert!(clipped_term(r, u, 0.2) <= r * u + 1e-15);
        }
        let ratios = [0.7, 1.3, 1.0, 2.2];
        let u = [0.4, -1.0, 2.0, 0.5];
        let c = 3.5;
        let scaled: Vec<f64> = u.iter().map(|x| x * c).collect();
        let a = clipped_surrogate(&ratios, &u, 0.2).unwrap();
        let b = clipped_surrogate(&ratios, &scaled, 0.2).unwrap();
        assert!((b - c * a).abs() < 1e-12);
    }

    fn toy_setup(seed: u64) -> (PolicyLearner, RolloutBatch, RolloutBatch) {
        let mut rng = RngStream::new(seed, 0);
        let net = Approximator::Tabular { states: 3, outputs: 2 };
        let behavior = Policy::new(net.clone(), ActionHead::Categorical { actions: 2 }, &mut rng).unwrap();
        let mut make = |tag| {
            let mut b = RolloutBatch::empty(tag);
            for t in 0..24 {
                let obs = Observation::one_hot(t % 3, 3);
                let (a, lp) = behavior.act(&obs, &mut rng);
                b.observations.push(obs.clone());
                b.next_observations.push(obs);
                b.actions.push(a);
                b.log_prob_behavior.push(lp);
                b.task_rewards.push(rng.random_range(-1.0..1.0));
                b.heuristic_rewards.push(rng.random_range(-1.0..1.0));
                b.state_heuristics.push(0.0);
                b.terminated.push(false);
                b.truncated.push(t == 23);
            }
            b
        };
        let enh = make(PolicyTag::Enhanced);
        let refb = make(PolicyTag::Heuristic);
        (PolicyLearner::new(behavior, 0.05), enh, refb)
    }

    fn advantages(enh: &RolloutBatch, refb: &RolloutBatch) -> AdvantageSet {
        AdvantageSet {
            enhanced_task: enh.task_rewards.clone(),
            enhanced_heuristic: enh.heuristic_rewards.clone(),
            reference_task: refb.task_rewards.clone(),
            reference_heuristic: refb.heuristic_rewards.clone(),
            gamma: 0.99,
            lambda: 0.95,
            ..Default::default()
        }
    }

    #[test]
    fn zero_advantages_leave_policy_unchanged() {
        let (mut learner, enh, refb) = toy_setup(3);
        let before = learner.policy.params().clone();
        let zeros = AdvantageSet {
            enhanced_task: vec![0.0; 24],
            enhanced_heuristic: vec![0.0; 24],
            reference_task: vec![0.0; 24],
            reference_heuristic: vec![0.0; 24],
            ..Default::default()
        };
        let mut rng = RngStream::new(0, 1);
        let cfg = ClipConfig::default();
        enhanced_policy_update(&mut learner, &enh, &refb, &zeros, 0.7, &cfg, &mut rng).unwrap();
        heuristic_policy_update(&mut learner, &enh, &refb, &zeros, &cfg, &mut rng).unwrap();
        assert_eq!(learner.policy.params(), &before);
    }

    #[test]
    fn zero_clip_freezes_policy() {
        let (mut learner, enh, refb) = toy_setup(4);
        let before = learner.policy.params().clone();
        let adv = advantages(&enh, &refb);
        let cfg = ClipConfig {
            clip_eps: 0.0,
            ..ClipConfig::default()
        };
        heuristic_policy_update(&mut learner, &enh, &refb, &adv, &cfg, &mut RngStream::new(0, 1)).unwrap();
        assert_eq!(learner.policy.params(), &before);
    }

    #[test]
    fn objective_at_behavior_is_mean_utility() {
        let (learner, enh, refb) = toy_setup(5);
        let adv = advantages(&enh, &refb);
        let u_e = mixed_utility(&adv.enhanced_task, &adv.enhanced_heuristic, 0.3).unwrap();
        let u_r = mixed_utility(&adv.reference_task, &adv.reference_heuristic, 0.3).unwrap();
        // both buffers were collected by the same parameters, so every ratio is 1
        let loss = SurrogateLoss {
            policy: &learner.policy,
            parts: vec![SurrogatePart::full(&enh, &u_e), SurrogatePart::full(&refb, &u_r)],
            clip_eps: 0.2,
            entropy_coef: 0.0,
        };
        let want = u_e.iter().sum::<f64>() / 24.0 + u_r.iter().sum::<f64>() / 24.0;
        let got = loss.objective(learner.policy.params().values()).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn full_batch_step_ascends() {
        let (mut learner, enh, refb) = toy_setup(6);
        let adv = advantages(&enh, &refb);
        let u_e = mixed_utility(&adv.enhanced_task, &adv.enhanced_heuristic, 0.5).unwrap();
        let u_r = mixed_utility(&adv.reference_task, &adv.reference_heuristic, 0.5).unwrap();
        let objective = |p: &Policy| {
            SurrogateLoss {
                policy: p,
                parts: vec![SurrogatePart::full(&enh, &u_e), SurrogatePart::full(&refb, &u_r)],
                clip_eps: 0.2,
                entropy_coef: 0.0,
            }
            .objective(p.params().values())
            .unwrap()
        };
        let before = objective(&learner.policy);
        let cfg = ClipConfig {
            epochs: 1,
            minibatches: 1,
            lr: 0.01,
            ..ClipConfig::default()
        };
        enhanced_policy_update(&mut learner, &enh, &refb, &adv, 0.5, &cfg, &mut RngStream::new(0, 2)).unwrap();
        assert!(objective(&learner.policy) >= before - 1e-6);
        assert!(objective(&learner.policy) > before);
    }

    #[test]
    fn stratified_minibatches_cover_both_buffers() {
        let (_, enh, refb) = toy_setup(7);
        let u = vec![0.0; 24];
        let parts = [(&enh, u.as_slice()), (&refb, u.as_slice())];
        let cfg = ClipConfig::default();
        let mbs = epoch_minibatches(&parts, &cfg, &mut RngStream::new(0, 0));
        assert_eq!(mbs.len(), 4);
        for mb in &mbs {
            assert_eq!(mb.len(), 2);
            assert!(mb.iter().all(|p| p.indices.len() == 6));
        }
        let per = ClipConfig {
            minibatch_mixing: MinibatchMixing::PerBuffer,
            ..cfg
        };
        let mbs = epoch_minibatches(&parts, &per, &mut RngStream::new(0, 0));
        assert_eq!(mbs.len(), 8);
        assert!(mbs.iter().all(|mb| mb.len() == 1));
    }
}
