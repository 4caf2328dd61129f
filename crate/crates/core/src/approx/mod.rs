//! Function approximators, policy distributions, reverse-mode gradients and
//! the Adam optimizer.
//!
//! Gradients are computed by hand-written backpropagation through the few
//! primitives the training losses need. Every loss implements [`Loss`], which
//! is what gradient checks and optimizers consume.

mod adam;
mod dist;
mod net;
mod params;
mod policy;

pub use adam::AdamState;
pub use dist::{log_sum_exp, softmax, DistGrad, PolicyDistribution};
pub use net::{Activation, Approximator, ForwardCache, InitRole, MlpSpec};
pub use params::{ParamSlot, ParamVector};
pub use policy::{ActionHead, Policy, PolicyEval, UniformPolicy};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("action outside distribution support: {0}")]
    Support(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

/// A scalar loss over a flat parameter vector with an exact gradient.
pub trait Loss {
    fn loss_and_grad(&self, params: &[f64]) -> Result<(f64, Vec<f64>), ApproxError>;

    fn loss(&self, params: &[f64]) -> Result<f64, ApproxError> {
        self.loss_and_grad(params).map(|(l, _)| l)
    }
}

/// Reverse-mode gradient of `loss` at `params`; non-finite results are flagged.
pub fn grad<L: Loss + ?Sized>(loss: &L, params: &[f64]) -> Result<Vec<f64>, ApproxError> {
    let (value, g) = loss.loss_and_grad(params)?;
    if !value.is_finite() {
        return Err(ApproxError::NonFinite("loss".into()));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(ApproxError::NonFinite("gradient".into()));
    }
    Ok(g)
}

/// Scales `grad` so its Euclidean norm does not exceed `max_norm`.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
}
