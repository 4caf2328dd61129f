//! Exact tabular MDPs and dynamic-programming oracles.
//!
//! Terminal states are absorbing with zero reward and their value is pinned
//! to zero, which keeps every routine well defined for `γ = 1` as long as the
//! terminal set is reached with probability one.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TabularError {
    #[error("no convergence after {iterations} sweeps (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("linear system is singular")]
    Singular,
    #[error("invalid tabular MDP: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RewardSelect {
    Task,
    Heuristic,
    /// `task_weight · R + heuristic_weight · Hr`.
    Composed { task_weight: f64, heuristic_weight: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub states: usize,
    pub actions: usize,
    /// Row-major `P[s, a, s']`.
    pub transitions: Vec<f64>,
    /// Expected task reward `R[s, a]`.
    pub task_reward: Vec<f64>,
    /// Expected heuristic reward `Hr[s, a]`.
    pub heuristic_reward: Vec<f64>,
    pub gamma: f64,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn zeros(states: usize, actions: usize, gamma: f64) -> Self {
        Self {
            states,
            actions,
            transitions: vec![0.0; states * actions * states],
            task_reward: vec![0.0; states * actions],
            heuristic_reward: vec![0.0; states * actions],
            gamma,
            initial: vec![0.0; states],
            terminal: vec![false; states],
        }
    }

    /// Random MDP with dense transition rows and rewards in `[-1, 1]`,
    /// starting uniformly. No terminal states.
    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, gamma: f64, rng: &mut R) -> Self {
        let mut mdp = Self::zeros(states, actions, gamma);
        for s in 0..states {
            for a in 0..actions {
                let weights: Vec<f64> = (0..states).map(|_| rng.random::<f64>() + 1e-3).collect();
                let total: f64 = weights.iter().sum();
                for (next, w) in weights.iter().enumerate() {
                    mdp.set_transition(s, a, next, w / total);
                }
                mdp.task_reward[s * actions + a] = rng.random_range(-1.0..1.0);
                mdp.heuristic_reward[s * actions + a] = rng.random_range(-1.0..1.0);
            }
        }
        mdp.initial = vec![1.0 / states as f64; states];
        mdp
    }

    #[inline]
    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.actions + a) * self.states + next]
    }

    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.actions + a) * self.states;
        &self.transitions[start..start + self.states]
    }

    pub fn set_transition(&mut self, s: usize, a: usize, next: usize, p: f64) {
        self.transitions[(s * self.actions + a) * self.states + next] = p;
    }

    /// Accumulates an outcome of `(s, a)` with probability `p` and per-outcome
    /// rewards `r`, `h` into the transition and expected-reward tables.
    pub fn add_transition(&mut self, s: usize, a: usize, next: usize, p: f64, r: f64, h: f64) {
        self.transitions[(s * self.actions + a) * self.states + next] += p;
        self.task_reward[s * self.actions + a] += p * r;
        self.heuristic_reward[s * self.actions + a] += p * h;
    }

    pub fn validate(&self) -> Result<(), TabularError> {
        if self.transitions.len() != self.states * self.actions * self.states {
            return Err(TabularError::Invalid("transition tensor has wrong size".into()));
        }
        for s in 0..self.states {
            for a in 0..self.actions {
                let total: f64 = self.row(s, a).iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(TabularError::Invalid(format!(
                        "P[{s},{a},·] sums to {total}"
                    )));
                }
            }
        }
        if self
            .task_reward
            .iter()
            .chain(&self.heuristic_reward)
            .any(|r| !r.is_finite())
        {
            return Err(TabularError::Invalid("non-finite reward".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(TabularError::Invalid(format!("discount {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }

    pub fn reward(&self, select: RewardSelect) -> Vec<f64> {
        match select {
            RewardSelect::Task => self.task_reward.clone(),
            RewardSelect::Heuristic => self.heuristic_reward.clone(),
            RewardSelect::Composed {
                task_weight,
                heuristic_weight,
            } => self
                .task_reward
                .iter()
                .zip(&self.heuristic_reward)
                .map(|(r, h)| task_weight * r + heuristic_weight * h)
                .collect(),
        }
    }

    /// Copy whose task reward is shaped by potential `phi`:
    /// `R'[s,a] = R[s,a] + γ·E[Φ(s')] − Φ(s)`, with `Φ = 0` on terminal states.
    pub fn shaped(&self, phi: &[f64]) -> Self {
        let phi_at = |s: usize| if self.terminal[s] { 0.0 } else { phi[s] };
        let mut out = self.clone();
        for s in 0..self.states {
            if self.terminal[s] {
                continue;
            }
            for a in 0..self.actions {
                let expected: f64 = self
                    .row(s, a)
                    .iter()
                    .enumerate()
                    .map(|(n, p)| p * phi_at(n))
                    .sum();
                out.task_reward[s * self.actions + a] += self.gamma * expected - phi_at(s);
            }
        }
        out
    }

    fn q_value(&self, reward: &[f64], values: &[f64], s: usize, a: usize) -> f64 {
        let next: f64 = self
            .row(s, a)
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum();
        reward[s * self.actions + a] + self.gamma * next
    }

    /// `J = Σ_s μ0(s) V(s)`.
    pub fn objective(&self, values: &[f64]) -> f64 {
        self.initial.iter().zip(values).map(|(m, v)| m * v).sum()
    }
}

/// Stochastic tabular policy, row-major `π[s, a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub states: usize,
    pub actions: usize,
    pub probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn uniform(states: usize, actions: usize) -> Self {
        Self {
            states,
            actions,
            probs: vec![1.0 / actions as f64; states * actions],
        }
    }

    pub fn deterministic(actions: usize, choice: &[usize]) -> Self {
        let states = choice.len();
        let mut probs = vec![0.0; states * actions];
        for (s, &a) in choice.iter().enumerate() {
            probs[s * actions + a] = 1.0;
        }
        Self {
            states,
            actions,
            probs,
        }
    }

    pub fn random<R: Rng + ?Sized>(states: usize, actions: usize, rng: &mut R) -> Self {
        let mut probs = Vec::with_capacity(states * actions);
        for _ in 0..states {
            let w: Vec<f64> = (0..actions).map(|_| rng.random::<f64>() + 1e-3).collect();
            let total: f64 = w.iter().sum();
            probs.extend(w.iter().map(|x| x / total));
        }
        Self {
            states,
            actions,
            probs,
        }
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.actions + a]
    }
}

/// Optimal values and the greedy policy (lowest action index wins ties).
pub fn value_iteration(
    mdp: &TabularMdp,
    select: RewardSelect,
    tol: f64,
) -> Result<(Vec<f64>, Vec<usize>), TabularError> {
    mdp.validate()?;
    let reward = mdp.reward(select);
    let mut values = vec![0.0; mdp.states];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let mut next = vec![0.0; mdp.states];
        residual = 0.0;
        for s in 0..mdp.states {
            if mdp.terminal[s] {
                continue;
            }
            next[s] = (0..mdp.actions)
                .map(|a| mdp.q_value(&reward, &values, s, a))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = f64::max(residual, (next[s] - values[s]).abs());
        }
        values = next;
        if residual <= tol {
            let policy = greedy(mdp, &reward, &values);
            return Ok((values, policy));
        }
    }
    Err(TabularError::NonConvergence {
        iterations: MAX_SWEEPS,
        residual,
    })
}

fn greedy(mdp: &TabularMdp, reward: &[f64], values: &[f64]) -> Vec<usize> {
    (0..mdp.states)
        .map(|s| {
            let q: Vec<f64> = (0..mdp.actions)
                .map(|a| mdp.q_value(reward, values, s, a))
                .collect();
            let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let slack = 1e-9 * best.abs().max(1.0);
            q.iter().position(|v| *v >= best - slack).unwrap_or(0)
        })
        .collect()
}

/// Iterative policy evaluation `V ← R_π + γ P_π V` until the sup-norm change
/// drops to `tol`.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    select: RewardSelect,
    tol: f64,
) -> Result<Vec<f64>, TabularError> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let reward = mdp.reward(select);
    let mut values = vec![0.0; mdp.states];
    let mut residual = f64::INFINITY;
    for _ in 0..MAX_SWEEPS {
        let mut next = vec![0.0; mdp.states];
        residual = 0.0;
        for s in 0..mdp.states {
            if mdp.terminal[s] {
                continue;
            }
            next[s] = (0..mdp.actions)
                .map(|a| policy.prob(s, a) * mdp.q_value(&reward, &values, s, a))
                .sum();
            residual = f64::max(residual, (next[s] - values[s]).abs());
        }
        values = next;
        if residual <= tol {
            return Ok(values);
        }
    }
    Err(TabularError::NonConvergence {
        iterations: MAX_SWEEPS,
        residual,
    })
}

/// Policy evaluation by solving `(I − γ P_π) V = R_π` directly.
pub fn policy_evaluation_direct(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    select: RewardSelect,
) -> Result<Vec<f64>, TabularError> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let reward = mdp.reward(select);
    let n = mdp.states;
    let mut lhs = DMatrix::<f64>::identity(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for s in 0..n {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..mdp.actions {
            let pa = policy.prob(s, a);
            rhs[s] += pa * reward[s * mdp.actions + a];
            for (next, p) in mdp.row(s, a).iter().enumerate() {
                if !mdp.terminal[next] {
                    lhs[(s, next)] -= mdp.gamma * pa * p;
                }
            }
        }
    }
    let solution = lhs.lu().solve(&rhs).ok_or(TabularError::Singular)?;
    Ok(solution.iter().copied().collect())
}

/// `A^π[s, a] = R[s, a] + γ E_{s'}[V^π(s')] − V^π(s)`, zero on terminal states.
pub fn exact_advantage(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    select: RewardSelect,
) -> Result<Vec<f64>, TabularError> {
    let values = policy_evaluation_direct(mdp, policy, select)?;
    let reward = mdp.reward(select);
    let mut adv = vec![0.0; mdp.states * mdp.actions];
    for s in 0..mdp.states {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..mdp.actions {
            adv[s * mdp.actions + a] = mdp.q_value(&reward, &values, s, a) - values[s];
        }
    }
    Ok(adv)
}

/// Unnormalized discounted state visitation `d = Σ_t γ^t Pr(s_t = s)` under
/// `policy` from the initial distribution. Requires `γ < 1` or a terminal set.
pub fn discounted_visitation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
) -> Result<Vec<f64>, TabularError> {
    mdp.validate()?;
    check_policy(mdp, policy)?;
    let n = mdp.states;
    let mut lhs = DMatrix::<f64>::identity(n, n);
    for s in 0..n {
        if mdp.terminal[s] {
            continue;
        }
        for a in 0..mdp.actions {
            let pa = policy.prob(s, a);
            for (next, p) in mdp.row(s, a).iter().enumerate() {
                // d[next] receives flow from d[s]
                lhs[(next, s)] -= mdp.gamma * pa * p;
            }
        }
    }
    let rhs = DVector::from_column_slice(&mdp.initial);
    let solution = lhs.lu().solve(&rhs).ok_or(TabularError::Singular)?;
    Ok(solution.iter().copied().collect())
}

fn check_policy(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<(), TabularError> {
    if policy.states != mdp.states || policy.actions != mdp.actions {
        return Err(TabularError::Invalid(format!(
            "policy is {}x{}, MDP is {}x{}",
            policy.states, policy.actions, mdp.states, mdp.actions
        )));
    }
    Ok(())
}
