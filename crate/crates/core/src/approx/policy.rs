use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    Approximator, ApproxError, DistGrad, ForwardCache, InitRole, ParamVector, PolicyDistribution,
};
use crate::envs::TabularPolicy;
use crate::mdp::{ActionSpace, ActionValue, BehaviorPolicy, Observation, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionHead {
    Categorical { actions: usize },
    /// Diagonal Gaussian; the network outputs the mean.
    Gaussian { dim: usize },
}

impl ActionHead {
    pub fn for_space(space: &ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(n) => ActionHead::Categorical { actions: *n },
            ActionSpace::Box { low, .. } => ActionHead::Gaussian { dim: low.len() },
        }
    }

    fn outputs(&self) -> usize {
        match self {
            ActionHead::Categorical { actions } => *actions,
            ActionHead::Gaussian { dim } => *dim,
        }
    }
}

/// Parametric policy: an approximator producing logits or Gaussian means,
/// plus a free log-std vector for Gaussian heads (initialized to 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    net: Approximator,
    head: ActionHead,
    params: ParamVector,
    net_len: usize,
}

/// A single forward pass kept around for the matching backward pass.
pub struct PolicyEval {
    pub dist: PolicyDistribution,
    pub log_prob: f64,
    cache: ForwardCache,
}

impl Policy {
    pub fn new<R: Rng + ?Sized>(net: Approximator, head: ActionHead, rng: &mut R) -> Result<Self, ApproxError> {
        if !net.validate() {
            return Err(ApproxError::Shape("approximator dimensions must be >= 1".into()));
        }
        if net.output_dim() != head.outputs() {
            return Err(ApproxError::Shape(format!(
                "network outputs {} values, action head needs {}",
                net.output_dim(),
                head.outputs()
            )));
        }
        let mut params = ParamVector::new();
        net.register(&mut params, "");
        let net_len = params.len();
        if let ActionHead::Gaussian { dim } = head {
            params.register("log_std", 1, dim);
        }
        let init = net.init(InitRole::Policy, rng);
        params.values_mut()[..net_len].copy_from_slice(&init);
        Ok(Self {
            net,
            head,
            params,
            net_len,
        })
    }

    pub fn net(&self) -> &Approximator {
        &self.net
    }

    pub fn head(&self) -> &ActionHead {
        &self.head
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    fn dist_from(&self, params: &[f64], output: Vec<f64>) -> PolicyDistribution {
        match self.head {
            ActionHead::Categorical { .. } => PolicyDistribution::Categorical { logits: output },
            ActionHead::Gaussian { .. } => PolicyDistribution::Gaussian {
                mean: output,
                log_std: params[self.net_len..].to_vec(),
            },
        }
    }

    pub fn distribution(&self, obs: &Observation) -> PolicyDistribution {
        self.distribution_with(self.params.values(), obs)
    }

    /// Distribution under an arbitrary parameter vector of the same layout.
    pub fn distribution_with(&self, params: &[f64], obs: &Observation) -> PolicyDistribution {
        let out = self.net.forward(&params[..self.net_len], obs);
        self.dist_from(params, out)
    }

    pub fn log_prob(&self, obs: &Observation, action: &ActionValue) -> Result<f64, ApproxError> {
        self.distribution(obs).log_prob(action)
    }

    pub fn evaluate(&self, obs: &Observation, action: &ActionValue) -> Result<PolicyEval, ApproxError> {
        self.evaluate_with(self.params.values(), obs, action)
    }

    pub fn evaluate_with(
        &self,
        params: &[f64],
        obs: &Observation,
        action: &ActionValue,
    ) -> Result<PolicyEval, ApproxError> {
        let (out, cache) = self.net.forward_cached(&params[..self.net_len], obs);
        let dist = self.dist_from(params, out);
        let log_prob = dist.log_prob(action)?;
        if !log_prob.is_finite() {
            return Err(ApproxError::NonFinite("log-probability".into()));
        }
        Ok(PolicyEval {
            dist,
            log_prob,
            cache,
        })
    }

    /// Accumulates `∂/∂θ [c_log_prob · log π(a|s) + c_entropy · H(π(·|s))]`.
    pub fn backward(
        &self,
        params: &[f64],
        eval: &PolicyEval,
        action: &ActionValue,
        c_log_prob: f64,
        c_entropy: f64,
        grad: &mut [f64],
    ) -> Result<(), ApproxError> {
        if c_log_prob == 0.0 && c_entropy == 0.0 {
            return Ok(());
        }
        let mut total = DistGrad {
            d_output: vec![0.0; self.head.outputs()],
            d_log_std: vec![0.0; self.params.len() - self.net_len],
        };
        if c_log_prob != 0.0 {
            let g = eval.dist.log_prob_grad(action)?;
            axpy(&mut total, &g, c_log_prob);
        }
        if c_entropy != 0.0 {
            axpy(&mut total, &eval.dist.entropy_grad(), c_entropy);
        }
        let (net_grad, std_grad) = grad.split_at_mut(self.net_len);
        self.net
            .backward(&params[..self.net_len], &eval.cache, &total.d_output, net_grad);
        for (g, d) in std_grad.iter_mut().zip(&total.d_log_std) {
            *g += d;
        }
        Ok(())
    }

    /// Exact action probabilities of a tabular categorical policy.
    pub fn to_tabular(&self) -> Option<TabularPolicy> {
        let (Approximator::Tabular { states, outputs }, ActionHead::Categorical { .. }) =
            (&self.net, &self.head)
        else {
            return None;
        };
        let mut probs = Vec::with_capacity(states * outputs);
        for s in 0..*states {
            let dist = self.distribution(&Observation::one_hot(s, *states));
            probs.extend(dist.probs().expect("categorical"));
        }
        Some(TabularPolicy {
            states: *states,
            actions: *outputs,
            probs,
        })
    }
}

fn axpy(acc: &mut DistGrad, g: &DistGrad, c: f64) {
    for (a, b) in acc.d_output.iter_mut().zip(&g.d_output) {
        *a += c * b;
    }
    for (a, b) in acc.d_log_std.iter_mut().zip(&g.d_log_std) {
        *a += c * b;
    }
}

impl BehaviorPolicy for Policy {
    fn observation_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn act(&self, observation: &Observation, rng: &mut RngStream) -> (ActionValue, f64) {
        let dist = self.distribution(observation);
        let action = dist.sample(rng);
        let log_prob = dist.log_prob(&action).expect("sampled action is in support");
        (action, log_prob)
    }
}

/// Uniform random behavior over an action space.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformPolicy {
    pub space: ActionSpace,
    pub observation_dim: usize,
}

impl BehaviorPolicy for UniformPolicy {
    fn observation_dim(&self) -> usize {
        self.observation_dim
    }

    fn act(&self, _observation: &Observation, rng: &mut RngStream) -> (ActionValue, f64) {
        match &self.space {
            ActionSpace::Discrete(n) => (
                ActionValue::Discrete(rng.random_range(0..*n)),
                -(*n as f64).ln(),
            ),
            ActionSpace::Box { low, high } => {
                let a = low
                    .iter()
                    .zip(high)
                    .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                    .collect();
                let log_density = -low.iter().zip(high).map(|(lo, hi)| (hi - lo).ln()).sum::<f64>();
                (ActionValue::Continuous(a), log_density)
            }
        }
    }
}
