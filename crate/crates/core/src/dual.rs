//! The Lagrangian multiplier controller.
//!
//! Each iteration contributes one gradient record
//! `g = mean(A^{π_H}_r over B_HEPO) − mean(A^π_r over B_H)`, an estimate of
//! the task-return gap `J(π) − J(π_H)`. The controller takes the median of the
//! last `K` records, turns it into an Adam step, clips the step and projects
//! the multiplier onto `[0, ∞)`. A positive gap shrinks `α`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::approx::AdamState;
use crate::estimate::mean;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaConfig {
    pub init: f64,
    pub lr: f64,
    pub clip: f64,
    pub window: usize,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for AlphaConfig {
    fn default() -> Self {
        Self {
            init: 0.0,
            lr: 0.01,
            clip: 1.0,
            window: 8,
            // momentum would let a stale sign outlive the median
            beta1: 0.0,
            beta2: 0.999,
        }
    }
}

impl AlphaConfig {
    pub fn is_valid(&self) -> bool {
        self.init >= 0.0
            && self.init.is_finite()
            && self.lr > 0.0
            && self.clip > 0.0
            && self.window >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaState {
    pub alpha: f64,
    pub records: VecDeque<f64>,
    pub adam: AdamState,
    pub config: AlphaConfig,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaStep {
    pub gradient: f64,
    pub smoothed: f64,
    /// Clipped step; the multiplier moves by `−delta` before projection.
    pub delta: f64,
    pub alpha: f64,
}

/// Gap estimate from cross-policy task advantages. A missing buffer
/// contributes nothing, which gives a one-sided estimate.
pub fn estimate_gradient(reference_on_enhanced: &[f64], enhanced_on_reference: &[f64]) -> f64 {
    mean(reference_on_enhanced) - mean(enhanced_on_reference)
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => 0.0,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

impl AlphaState {
    pub fn new(config: AlphaConfig) -> Self {
        Self {
            alpha: config.init,
            records: VecDeque::with_capacity(config.window),
            adam: AdamState::new(1, config.lr).with_betas(config.beta1, config.beta2),
            config,
        }
    }

    /// Records `g` and applies one controller step. Non-finite `g` is ignored.
    pub fn update(&mut self, g: f64) -> AlphaStep {
        if !g.is_finite() {
            return AlphaStep {
                gradient: g,
                smoothed: 0.0,
                delta: 0.0,
                alpha: self.alpha,
            };
        }
        if self.records.len() == self.config.window {
            self.records.pop_front();
        }
        self.records.push_back(g);
        let smoothed = median(self.records.make_contiguous());
        let clip = self.config.clip;
        let delta = self.adam.delta(&[smoothed])[0].clamp(-clip, clip);
        self.alpha = (self.alpha - delta).max(0.0);
        AlphaStep {
            gradient: g,
            smoothed,
            delta,
            alpha: self.alpha,
        }
    }
}

impl Default for AlphaState {
    fn default() -> Self {
        Self::new(AlphaConfig::default())
    }
}
