//! Training loops for the dual-policy method, its ablations and the
//! single-policy baselines.
//!
//! One iteration of the dual-policy method runs these stages in order:
//!
//! 1. collect `B/2` steps with each policy (or `B` with one of them when
//!    alternating),
//! 2. compute advantages for both buffers,
//! 3. update the enhanced policy on `(1+α)A_r + A_h`,
//! 4. update the reference policy on `A_h` (or `A_r` for a task-only reference),
//! 5. fit the four value heads on the union of both buffers,
//! 6. step the multiplier,
//! 7. emit a metric record.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::approx::{
    ActionHead, Activation, ApproxError, Approximator, MlpSpec, Policy, UniformPolicy,
};
use crate::composition::{compose_batch, CompositionSpec, HurlSchedule};
use crate::dual::{estimate_gradient, AlphaConfig, AlphaState};
use crate::envs::{EnvError, EnvSpec};
use crate::estimate::{
    compute_advantage_set, fit_value_single, fit_values_shared, standardize, EstimateError,
    FitSchedule, ValueHead, ValueHeads,
};
use crate::mdp::{
    collect_rollout, ActionSpace, EnvPool, EpisodeSummary, MdpError, PolicyTag, RngStream,
    RolloutBatch,
};
use crate::ppo::{
    baseline_update, enhanced_policy_update, heuristic_policy_update, task_policy_update,
    ClipConfig, MinibatchMixing, PolicyLearner, PpoError,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hepo,
    EipoVariant,
    JOnly,
    HOnly,
    JPlusH,
    Pbrs,
    Hurl,
    /// Uniform random actions; the lower reference for normalized returns.
    Random,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Hepo,
        Algorithm::EipoVariant,
        Algorithm::JOnly,
        Algorithm::HOnly,
        Algorithm::JPlusH,
        Algorithm::Pbrs,
        Algorithm::Hurl,
        Algorithm::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Hepo => "hepo",
            Algorithm::EipoVariant => "eipo_variant",
            Algorithm::JOnly => "j_only",
            Algorithm::HOnly => "h_only",
            Algorithm::JPlusH => "j_plus_h",
            Algorithm::Pbrs => "pbrs",
            Algorithm::Hurl => "hurl",
            Algorithm::Random => "random",
        }
    }

    pub fn is_dual(&self) -> bool {
        matches!(self, Algorithm::Hepo | Algorithm::EipoVariant)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| format!("unknown algorithm `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RolloutStrategy {
    #[default]
    Joint,
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    HeuristicOnly,
    TaskOnly,
}

/// Settings of the `eipo_variant` algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EipoConfig {
    pub reference: ReferenceKind,
    pub rollout: RolloutStrategy,
}

impl Default for EipoConfig {
    fn default() -> Self {
        Self {
            reference: ReferenceKind::TaskOnly,
            rollout: RolloutStrategy::Alternating,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSettings {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub lr: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: Option<f64>,
    pub advantage_norm: bool,
    pub minibatch_mixing: MinibatchMixing,
    pub value_lr: f64,
    pub value_epochs: usize,
    pub value_minibatches: usize,
}

impl Default for PpoSettings {
    fn default() -> Self {
        let clip = ClipConfig::default();
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: clip.clip_eps,
            epochs: clip.epochs,
            minibatches: clip.minibatches,
            lr: clip.lr,
            entropy_coef: clip.entropy_coef,
            max_grad_norm: clip.max_grad_norm,
            advantage_norm: true,
            minibatch_mixing: clip.minibatch_mixing,
            value_lr: 1e-3,
            value_epochs: 4,
            value_minibatches: 4,
        }
    }
}

impl PpoSettings {
    pub fn clip(&self) -> ClipConfig {
        ClipConfig {
            clip_eps: self.clip_eps,
            epochs: self.epochs,
            minibatches: self.minibatches,
            lr: self.lr,
            entropy_coef: self.entropy_coef,
            max_grad_norm: self.max_grad_norm,
            minibatch_mixing: self.minibatch_mixing,
        }
    }

    fn fit(&self) -> FitSchedule {
        FitSchedule {
            epochs: self.value_epochs,
            minibatches: self.value_minibatches,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budget {
    /// Environment steps per iteration, summed over all collecting policies.
    pub steps_per_iteration: usize,
    pub iterations: usize,
    /// Environment instances per collecting policy.
    pub num_envs: usize,
}

impl Default for Budget {
    fn default() -> Self {
        Self {
            steps_per_iteration: 2048,
            iterations: 100,
            num_envs: 8,
        }
    }
}

/// Approximator family used for every policy and value head of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetChoice {
    /// One table entry per discrete state; needs a tabular environment.
    Tabular,
    Mlp {
        hidden: Vec<usize>,
        activation: Activation,
    },
}

impl Default for NetChoice {
    fn default() -> Self {
        NetChoice::Mlp {
            hidden: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Heuristic weight of `j_plus_h`.
    pub lambda: f64,
    pub hurl: HurlSchedule,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            hurl: HurlSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub env: EnvSpec,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub budget: Budget,
    #[serde(default)]
    pub ppo: PpoSettings,
    #[serde(default)]
    pub alpha: AlphaConfig,
    #[serde(default)]
    pub baselines: BaselineConfig,
    #[serde(default)]
    pub eipo: EipoConfig,
    #[serde(default)]
    pub network: NetChoice,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Hepo, Algorithm::HOnly, Algorithm::JOnly, Algorithm::Random]
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl TrainConfig {
    pub fn new(env: EnvSpec) -> Self {
        Self {
            name: default_name(),
            env,
            algorithms: default_algorithms(),
            seeds: default_seeds(),
            output_dir: default_output_dir(),
            budget: Budget::default(),
            ppo: PpoSettings::default(),
            alpha: AlphaConfig::default(),
            baselines: BaselineConfig::default(),
            eipo: EipoConfig::default(),
            network: NetChoice::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: String| Err(TrainError::Config(msg));
        self.env.validate()?;
        if self.budget.steps_per_iteration < 2 {
            return bad("budget.steps_per_iteration must be at least 2".into());
        }
        if self.budget.num_envs == 0 {
            return bad("budget.num_envs must be at least 1".into());
        }
        if self.budget.iterations == 0 {
            return bad("budget.iterations must be at least 1".into());
        }
        let p = &self.ppo;
        if !(0.0..=1.0).contains(&p.gamma) || p.gamma.is_nan() {
            return bad(format!("ppo.gamma must lie in [0, 1], got {}", p.gamma));
        }
        if !(0.0..=1.0).contains(&p.gae_lambda) {
            return bad(format!("ppo.gae_lambda must lie in [0, 1], got {}", p.gae_lambda));
        }
        if !(0.0..=1.0).contains(&p.clip_eps) {
            return bad(format!("ppo.clip_eps must lie in [0, 1], got {}", p.clip_eps));
        }
        if !(p.lr > 0.0 && p.value_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if p.epochs == 0 || p.minibatches == 0 || p.value_epochs == 0 || p.value_minibatches == 0 {
            return bad("epoch and minibatch counts must be at least 1".into());
        }
        if !self.alpha.is_valid() {
            return bad("alpha settings out of range".into());
        }
        if !self.baselines.lambda.is_finite() || self.baselines.lambda < 0.0 {
            return bad("baselines.lambda must be finite and non-negative".into());
        }
        if !self.baselines.hurl.is_valid() {
            return bad("baselines.hurl needs 0 <= beta0 <= beta_final <= 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.network == NetChoice::Tabular && self.env.state_count().is_none() {
            return bad(format!("network kind `tabular` needs a discrete environment, not {}", self.env.name()));
        }
        if let NetChoice::Mlp { hidden, .. } = &self.network {
            if hidden.contains(&0) {
                return bad("network.hidden sizes must be at least 1".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: StageError,
    },
    #[error(transparent)]
    Approx(#[from] ApproxError),
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("rollout failed: {0}")]
    Rollout(#[from] MdpError),
    #[error("advantage or value estimation failed: {0}")]
    Estimate(#[from] EstimateError),
    #[error("policy update failed: {0}")]
    Update(#[from] PpoError),
}

/// One row of training metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub algorithm: String,
    pub seed: u64,
    pub iteration: usize,
    pub env_steps: u64,
    #[serde(rename = "J_return")]
    pub j_return: f64,
    #[serde(rename = "H_return")]
    pub h_return: f64,
    pub alpha: f64,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rollout,
    Advantages,
    EnhancedUpdate,
    ReferenceUpdate,
    ValueFit,
    AlphaUpdate,
    Record,
}

/// What happened in one iteration, for tests and progress reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub stages: Vec<Stage>,
    pub enhanced_steps: usize,
    pub reference_steps: usize,
    pub alpha_gradient: Option<f64>,
    pub record: MetricRecord,
}

impl IterationTrace {
    pub fn total_steps(&self) -> usize {
        self.enhanced_steps + self.reference_steps
    }
}

/// Episode statistics with carry-forward when a window finishes no episode.
#[derive(Debug, Clone, Copy, Default)]
struct EpisodeTracker {
    j: f64,
    h: f64,
    success: f64,
}

impl EpisodeTracker {
    fn observe(&mut self, episodes: &[EpisodeSummary]) {
        if episodes.is_empty() {
            return;
        }
        let n = episodes.len() as f64;
        self.j = episodes.iter().map(|e| e.task_return).sum::<f64>() / n;
        self.h = episodes.iter().map(|e| e.heuristic_return).sum::<f64>() / n;
        self.success = episodes.iter().filter(|e| e.success).count() as f64 / n;
    }
}

// stream ids of the per-run generators
const STREAM_ENHANCED_INIT: u64 = 1;
const STREAM_REFERENCE_INIT: u64 = 2;
const STREAM_VALUE_INIT: u64 = 3;
const STREAM_POLICY_SHUFFLE: u64 = 4;
const STREAM_VALUE_SHUFFLE: u64 = 5;
const STREAM_ENHANCED_ENVS: u64 = 1 << 20;
const STREAM_REFERENCE_ENVS: u64 = 2 << 20;

struct Geometry {
    obs_dim: usize,
    space: ActionSpace,
}

fn geometry(env: &EnvSpec) -> Result<Geometry, TrainError> {
    let probe = env.build()?;
    Ok(Geometry {
        obs_dim: probe.observation_dim(),
        space: probe.action_space(),
    })
}

fn approximator(cfg: &TrainConfig, geo: &Geometry, outputs: usize) -> Approximator {
    match &cfg.network {
        NetChoice::Tabular => Approximator::Tabular {
            states: cfg.env.state_count().expect("validated"),
            outputs,
        },
        NetChoice::Mlp { hidden, activation } => Approximator::Mlp(MlpSpec {
            input_dim: geo.obs_dim,
            hidden: hidden.clone(),
            activation: *activation,
            output_dim: outputs,
        }),
    }
}

fn make_policy(cfg: &TrainConfig, geo: &Geometry, rng: &mut RngStream) -> Result<PolicyLearner, TrainError> {
    let head = ActionHead::for_space(&geo.space);
    let outputs = match &head {
        ActionHead::Categorical { actions } => *actions,
        ActionHead::Gaussian { dim } => *dim,
    };
    let policy = Policy::new(approximator(cfg, geo, outputs), head, rng)?;
    Ok(PolicyLearner::new(policy, cfg.ppo.lr))
}

fn make_pool(cfg: &TrainConfig, seed: u64, stream_base: u64) -> EnvPool {
    let spec = cfg.env.clone();
    EnvPool::new(cfg.budget.num_envs, seed, stream_base, move || {
        spec.build().expect("validated")
    })
}

/// Dual-policy run state: the method itself and its ablations.
pub struct DualRunner {
    algorithm: Algorithm,
    seed: u64,
    config: TrainConfig,
    reference_kind: ReferenceKind,
    rollout: RolloutStrategy,
    pub enhanced: PolicyLearner,
    pub reference: PolicyLearner,
    pub heads: ValueHeads,
    pub alpha: AlphaState,
    enhanced_pool: EnvPool,
    reference_pool: EnvPool,
    policy_rng: RngStream,
    value_rng: RngStream,
    iteration: usize,
    env_steps: u64,
    enhanced_metrics: EpisodeTracker,
    reference_metrics: EpisodeTracker,
    pub records: Vec<MetricRecord>,
    pub reference_records: Vec<MetricRecord>,
}

impl DualRunner {
    pub fn new(config: &TrainConfig, algorithm: Algorithm, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let (reference_kind, rollout) = match algorithm {
            Algorithm::Hepo => (ReferenceKind::HeuristicOnly, RolloutStrategy::Joint),
            Algorithm::EipoVariant => (config.eipo.reference, config.eipo.rollout),
            other => {
                return Err(TrainError::Config(format!("{other} is not a dual-policy algorithm")))
            }
        };
        let geo = geometry(&config.env)?;
        let enhanced = make_policy(config, &geo, &mut RngStream::new(seed, STREAM_ENHANCED_INIT))?;
        let reference = make_policy(config, &geo, &mut RngStream::new(seed, STREAM_REFERENCE_INIT))?;
        let value_net = approximator(config, &geo, 1);
        let heads = ValueHeads::new(&value_net, config.ppo.value_lr, &mut RngStream::new(seed, STREAM_VALUE_INIT));
        Ok(Self {
            algorithm,
            seed,
            reference_kind,
            rollout,
            enhanced,
            reference,
            heads,
            alpha: AlphaState::new(config.alpha),
            enhanced_pool: make_pool(config, seed, STREAM_ENHANCED_ENVS),
            reference_pool: make_pool(config, seed, STREAM_REFERENCE_ENVS),
            policy_rng: RngStream::new(seed, STREAM_POLICY_SHUFFLE),
            value_rng: RngStream::new(seed, STREAM_VALUE_SHUFFLE),
            iteration: 0,
            env_steps: 0,
            enhanced_metrics: EpisodeTracker::default(),
            reference_metrics: EpisodeTracker::default(),
            records: Vec::new(),
            reference_records: Vec::new(),
            config: config.clone(),
        })
    }

    fn split(&self) -> (usize, usize) {
        let b = self.config.budget.steps_per_iteration;
        match self.rollout {
            RolloutStrategy::Joint => (b - b / 2, b / 2),
            RolloutStrategy::Alternating if self.iteration % 2 == 0 => (b, 0),
            RolloutStrategy::Alternating => (0, b),
        }
    }

    pub fn iterate(&mut self) -> Result<IterationTrace, TrainError> {
        let iteration = self.iteration;
        self.step_stages()
            .map_err(|source| TrainError::Iteration { iteration, source })
    }

    fn step_stages(&mut self) -> Result<IterationTrace, StageError> {
        let mut stages = Vec::with_capacity(7);
        let ppo = self.config.ppo.clone();
        let clip = ppo.clip();

        let (n_enh, n_ref) = self.split();
        let enhanced_batch = if n_enh > 0 {
            collect_rollout(&self.enhanced.policy, &mut self.enhanced_pool, n_enh, PolicyTag::Enhanced)?
        } else {
            RolloutBatch::empty(PolicyTag::Enhanced)
        };
        let reference_batch = if n_ref > 0 {
            collect_rollout(&self.reference.policy, &mut self.reference_pool, n_ref, PolicyTag::Heuristic)?
        } else {
            RolloutBatch::empty(PolicyTag::Heuristic)
        };
        stages.push(Stage::Rollout);

        let raw = compute_advantage_set(&enhanced_batch, &reference_batch, &self.heads, ppo.gamma, ppo.gae_lambda)?;
        let adv = if ppo.advantage_norm { raw.standardized() } else { raw.clone() };
        stages.push(Stage::Advantages);

        enhanced_policy_update(
            &mut self.enhanced,
            &enhanced_batch,
            &reference_batch,
            &adv,
            self.alpha.alpha,
            &clip,
            &mut self.policy_rng,
        )?;
        stages.push(Stage::EnhancedUpdate);

        match self.reference_kind {
            ReferenceKind::HeuristicOnly => heuristic_policy_update(
                &mut self.reference,
                &enhanced_batch,
                &reference_batch,
                &adv,
                &clip,
                &mut self.policy_rng,
            )?,
            ReferenceKind::TaskOnly => task_policy_update(
                &mut self.reference,
                &enhanced_batch,
                &reference_batch,
                &adv,
                &clip,
                &mut self.policy_rng,
            )?,
        };
        stages.push(Stage::ReferenceUpdate);

        fit_values_shared(
            &mut self.heads,
            &enhanced_batch,
            &reference_batch,
            ppo.gamma,
            ppo.fit(),
            &mut self.value_rng,
        )?;
        stages.push(Stage::ValueFit);

        // multiplier gradient uses the unstandardized cross-policy advantages
        let g = estimate_gradient(&raw.reference_task_on_enhanced, &raw.enhanced_task_on_reference);
        self.alpha.update(g);
        stages.push(Stage::AlphaUpdate);

        self.env_steps += (enhanced_batch.len() + reference_batch.len()) as u64;
        self.enhanced_metrics.observe(&enhanced_batch.episodes);
        self.reference_metrics.observe(&reference_batch.episodes);
        let record = self.make_record(&self.enhanced_metrics);
        self.records.push(record.clone());
        self.reference_records.push(self.make_record(&self.reference_metrics));
        stages.push(Stage::Record);

        self.iteration += 1;
        Ok(IterationTrace {
            iteration: self.iteration - 1,
            stages,
            enhanced_steps: enhanced_batch.len(),
            reference_steps: reference_batch.len(),
            alpha_gradient: Some(g),
            record,
        })
    }

    fn make_record(&self, m: &EpisodeTracker) -> MetricRecord {
        MetricRecord {
            algorithm: self.algorithm.to_string(),
            seed: self.seed,
            iteration: self.iteration,
            env_steps: self.env_steps,
            j_return: m.j,
            h_return: m.h,
            alpha: self.alpha.alpha,
            success_rate: m.success,
        }
    }
}

/// Single-policy baseline run state.
pub struct SingleRunner {
    algorithm: Algorithm,
    seed: u64,
    config: TrainConfig,
    composition: CompositionSpec,
    pub learner: PolicyLearner,
    pub value: ValueHead,
    pool: EnvPool,
    policy_rng: RngStream,
    value_rng: RngStream,
    iteration: usize,
    env_steps: u64,
    metrics: EpisodeTracker,
    pub records: Vec<MetricRecord>,
}

pub fn composition_for(algorithm: Algorithm, config: &TrainConfig) -> Option<CompositionSpec> {
    Some(match algorithm {
        Algorithm::JOnly => CompositionSpec::JOnly,
        Algorithm::HOnly => CompositionSpec::HOnly,
        Algorithm::JPlusH => CompositionSpec::JPlusH {
            lambda: config.baselines.lambda,
        },
        Algorithm::Pbrs => CompositionSpec::Pbrs,
        Algorithm::Hurl => {
            CompositionSpec::Hurl(config.baselines.hurl.with_horizon(config.budget.iterations))
        }
        _ => return None,
    })
}

impl SingleRunner {
    pub fn new(config: &TrainConfig, algorithm: Algorithm, seed: u64) -> Result<Self, TrainError> {
        let composition = composition_for(algorithm, config)
            .ok_or_else(|| TrainError::Config(format!("{algorithm} is not a single-policy baseline")))?;
        Self::with_composition(config, algorithm, composition, seed)
    }

    /// A baseline run with an explicit reward composition.
    pub fn with_composition(
        config: &TrainConfig,
        algorithm: Algorithm,
        composition: CompositionSpec,
        seed: u64,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        let geo = geometry(&config.env)?;
        let learner = make_policy(config, &geo, &mut RngStream::new(seed, STREAM_ENHANCED_INIT))?;
        let value = ValueHead::new(
            approximator(config, &geo, 1),
            config.ppo.value_lr,
            &mut RngStream::new(seed, STREAM_VALUE_INIT),
        );
        Ok(Self {
            algorithm,
            seed,
            composition,
            learner,
            value,
            pool: make_pool(config, seed, STREAM_ENHANCED_ENVS),
            policy_rng: RngStream::new(seed, STREAM_POLICY_SHUFFLE),
            value_rng: RngStream::new(seed, STREAM_VALUE_SHUFFLE),
            iteration: 0,
            env_steps: 0,
            metrics: EpisodeTracker::default(),
            records: Vec::new(),
            config: config.clone(),
        })
    }

    pub fn iterate(&mut self) -> Result<IterationTrace, TrainError> {
        let iteration = self.iteration;
        self.step_stages()
            .map_err(|source| TrainError::Iteration { iteration, source })
    }

    fn step_stages(&mut self) -> Result<IterationTrace, StageError> {
        let ppo = self.config.ppo.clone();
        let mut stages = Vec::with_capacity(5);
        let b = self.config.budget.steps_per_iteration;
        let batch = collect_rollout(&self.learner.policy, &mut self.pool, b, PolicyTag::Enhanced)?;
        stages.push(Stage::Rollout);

        let rewards = compose_batch(&self.composition, &batch, ppo.gamma, self.iteration);
        let mut adv = self.value.advantages(&batch, &rewards, ppo.gamma, ppo.gae_lambda)?;
        if ppo.advantage_norm {
            standardize(&mut adv);
        }
        stages.push(Stage::Advantages);

        baseline_update(&mut self.learner, &batch, &adv, &ppo.clip(), &mut self.policy_rng)?;
        stages.push(Stage::EnhancedUpdate);

        fit_value_single(&mut self.value, &batch, &rewards, ppo.gamma, ppo.fit(), &mut self.value_rng)?;
        stages.push(Stage::ValueFit);

        self.env_steps += batch.len() as u64;
        self.metrics.observe(&batch.episodes);
        let record = MetricRecord {
            algorithm: self.algorithm.to_string(),
            seed: self.seed,
            iteration: self.iteration,
            env_steps: self.env_steps,
            j_return: self.metrics.j,
            h_return: self.metrics.h,
            alpha: 0.0,
            success_rate: self.metrics.success,
        };
        self.records.push(record.clone());
        stages.push(Stage::Record);
        self.iteration += 1;
        Ok(IterationTrace {
            iteration: self.iteration - 1,
            stages,
            enhanced_steps: batch.len(),
            reference_steps: 0,
            alpha_gradient: None,
            record,
        })
    }
}

/// Uniform random behavior; no learning.
pub struct RandomRunner {
    seed: u64,
    config: TrainConfig,
    policy: UniformPolicy,
    pool: EnvPool,
    iteration: usize,
    env_steps: u64,
    metrics: EpisodeTracker,
    pub records: Vec<MetricRecord>,
}

impl RandomRunner {
    pub fn new(config: &TrainConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let geo = geometry(&config.env)?;
        Ok(Self {
            seed,
            policy: UniformPolicy {
                space: geo.space,
                observation_dim: geo.obs_dim,
            },
            pool: make_pool(config, seed, STREAM_ENHANCED_ENVS),
            iteration: 0,
            env_steps: 0,
            metrics: EpisodeTracker::default(),
            records: Vec::new(),
            config: config.clone(),
        })
    }

    pub fn iterate(&mut self) -> Result<IterationTrace, TrainError> {
        let b = self.config.budget.steps_per_iteration;
        let batch = collect_rollout(&self.policy, &mut self.pool, b, PolicyTag::Enhanced).map_err(|e| {
            TrainError::Iteration {
                iteration: self.iteration,
                source: e.into(),
            }
        })?;
        self.env_steps += batch.len() as u64;
        self.metrics.observe(&batch.episodes);
        let record = MetricRecord {
            algorithm: Algorithm::Random.to_string(),
            seed: self.seed,
            iteration: self.iteration,
            env_steps: self.env_steps,
            j_return: self.metrics.j,
            h_return: self.metrics.h,
            alpha: 0.0,
            success_rate: self.metrics.success,
        };
        self.records.push(record.clone());
        self.iteration += 1;
        Ok(IterationTrace {
            iteration: self.iteration - 1,
            stages: vec![Stage::Rollout, Stage::Record],
            enhanced_steps: batch.len(),
            reference_steps: 0,
            alpha_gradient: None,
            record,
        })
    }
}

pub enum Runner {
    Dual(Box<DualRunner>),
    Single(Box<SingleRunner>),
    Random(Box<RandomRunner>),
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub records: Vec<MetricRecord>,
    /// Metrics of the reference policy of dual-policy runs.
    pub reference_records: Option<Vec<MetricRecord>>,
    pub policy: Option<Policy>,
    pub reference_policy: Option<Policy>,
}

impl Runner {
    pub fn new(config: &TrainConfig, algorithm: Algorithm, seed: u64) -> Result<Self, TrainError> {
        Ok(match algorithm {
            Algorithm::Hepo | Algorithm::EipoVariant => {
                Runner::Dual(Box::new(DualRunner::new(config, algorithm, seed)?))
            }
            Algorithm::Random => Runner::Random(Box::new(RandomRunner::new(config, seed)?)),
            _ => Runner::Single(Box::new(SingleRunner::new(config, algorithm, seed)?)),
        })
    }

    pub fn iterate(&mut self) -> Result<IterationTrace, TrainError> {
        match self {
            Runner::Dual(r) => r.iterate(),
            Runner::Single(r) => r.iterate(),
            Runner::Random(r) => r.iterate(),
        }
    }

    pub fn finish(self, algorithm: Algorithm, seed: u64) -> RunOutput {
        match self {
            Runner::Dual(r) => RunOutput {
                algorithm,
                seed,
                records: r.records,
                reference_records: Some(r.reference_records),
                policy: Some(r.enhanced.policy),
                reference_policy: Some(r.reference.policy),
            },
            Runner::Single(r) => RunOutput {
                algorithm,
                seed,
                records: r.records,
                reference_records: None,
                policy: Some(r.learner.policy),
                reference_policy: None,
            },
            Runner::Random(r) => RunOutput {
                algorithm,
                seed,
                records: r.records,
                reference_records: None,
                policy: None,
                reference_policy: None,
            },
        }
    }
}

/// Runs one (algorithm, seed) pair for the configured number of iterations.
/// `progress` sees every iteration trace.
pub fn run<F>(config: &TrainConfig, algorithm: Algorithm, seed: u64, mut progress: F) -> Result<RunOutput, TrainError>
where
    F: FnMut(&IterationTrace),
{
    let mut runner = Runner::new(config, algorithm, seed)?;
    for _ in 0..config.budget.iterations {
        let trace = runner.iterate()?;
        progress(&trace);
    }
    Ok(runner.finish(algorithm, seed))
}

/// Runs every configured (algorithm, seed) pair in parallel on the current
/// rayon pool. Output order follows the config, not completion order.
pub fn run_all(config: &TrainConfig) -> Vec<(Algorithm, u64, Result<RunOutput, TrainError>)> {
    let jobs: Vec<(Algorithm, u64)> = config
        .algorithms
        .iter()
        .flat_map(|a| config.seeds.iter().map(move |s| (*a, *s)))
        .collect();
    jobs.into_par_iter()
        .map(|(a, s)| (a, s, run(config, a, s, |_| {})))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{HeuristicFamily, SparseChainSpec};

    fn chain_config() -> TrainConfig {
        let mut c = TrainConfig::new(EnvSpec::SparseChain(SparseChainSpec::new(
            5,
            HeuristicFamily::PotentialShaping,
        )));
        c.network = NetChoice::Tabular;
        c.budget = Budget {
            steps_per_iteration: 64,
            iterations: 3,
            num_envs: 2,
        };
        c
    }

    #[test]
    fn joint_rollout_splits_budget() {
        let c = chain_config();
        let mut r = DualRunner::new(&c, Algorithm::Hepo, 0).unwrap();
        let t = r.iterate().unwrap();
        assert_eq!((t.enhanced_steps, t.reference_steps), (32, 32));
        assert_eq!(
            t.stages,
            vec![
                Stage::Rollout,
                Stage::Advantages,
                Stage::EnhancedUpdate,
                Stage::ReferenceUpdate,
                Stage::ValueFit,
                Stage::AlphaUpdate,
                Stage::Record
            ]
        );
        assert!(r.alpha.alpha >= 0.0);
    }

    #[test]
    fn alternating_rollout_toggles() {
        let mut c = chain_config();
        c.eipo.rollout = RolloutStrategy::Alternating;
        let mut r = DualRunner::new(&c, Algorithm::EipoVariant, 0).unwrap();
        let a = r.iterate().unwrap();
        let b = r.iterate().unwrap();
        assert_eq!((a.enhanced_steps, a.reference_steps), (64, 0));
        assert_eq!((b.enhanced_steps, b.reference_steps), (0, 64));
    }

    #[test]
    fn every_algorithm_consumes_the_budget() {
        let c = chain_config();
        for alg in Algorithm::ALL {
            let mut r = Runner::new(&c, alg, 1).unwrap();
            for i in 1..=2 {
                let t = r.iterate().unwrap();
                assert_eq!(t.total_steps(), 64, "{alg}");
                assert_eq!(t.record.env_steps, 64 * i, "{alg}");
            }
        }
    }

    #[test]
    fn j_only_matches_zero_weight_j_plus_h() {
        let mut c = chain_config();
        c.baselines.lambda = 0.0;
        let a = run(&c, Algorithm::JOnly, 4, |_| {}).unwrap();
        let b = run(&c, Algorithm::JPlusH, 4, |_| {}).unwrap();
        assert_eq!(a.policy, b.policy);
        let strip = |rs: &[MetricRecord]| rs.iter().map(|r| (r.j_return, r.success_rate)).collect::<Vec<_>>();
        assert_eq!(strip(&a.records), strip(&b.records));
    }

    #[test]
    fn runs_are_deterministic() {
        let c = chain_config();
        let a = run(&c, Algorithm::Hepo, 9, |_| {}).unwrap();
        let b = run(&c, Algorithm::Hepo, 9, |_| {}).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn tabular_network_needs_discrete_env() {
        let mut c = TrainConfig::new(EnvSpec::PointMass(Default::default()));
        c.network = NetChoice::Tabular;
        assert!(matches!(c.validate(), Err(TrainError::Config(_))));
    }
}
