//! Tabular and MLP function approximators with hand-written reverse mode.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ParamVector;
use crate::mdp::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn gain(self) -> f64 {
        match self {
            Activation::Tanh => 5.0 / 3.0,
            Activation::Relu => std::f64::consts::SQRT_2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub output_dim: usize,
}

impl MlpSpec {
    /// Two hidden layers of 64 tanh units.
    pub fn standard(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![64, 64],
            activation: Activation::Tanh,
            output_dim,
        }
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims
    }
}

/// Which head an approximator serves; only affects initialization scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitRole {
    Policy,
    Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Approximator {
    /// One row of `outputs` entries per discrete state.
    Tabular { states: usize, outputs: usize },
    Mlp(MlpSpec),
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub enum ForwardCache {
    Tabular { state: usize },
    /// Layer inputs, starting with the observation and ending with the last
    /// hidden activation.
    Mlp { layer_inputs: Vec<Vec<f64>> },
}

impl Approximator {
    pub fn input_dim(&self) -> usize {
        match self {
            Approximator::Tabular { states, .. } => *states,
            Approximator::Mlp(spec) => spec.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Approximator::Tabular { outputs, .. } => *outputs,
            Approximator::Mlp(spec) => spec.output_dim,
        }
    }

    pub fn validate(&self) -> bool {
        match self {
            Approximator::Tabular { states, outputs } => *states >= 1 && *outputs >= 1,
            Approximator::Mlp(spec) => {
                spec.input_dim >= 1 && spec.output_dim >= 1 && spec.hidden.iter().all(|h| *h >= 1)
            }
        }
    }

    /// Registers this approximator's tensors in `params` under `prefix`.
    pub fn register(&self, params: &mut ParamVector, prefix: &str) {
        match self {
            Approximator::Tabular { states, outputs } => {
                params.register(format!("{prefix}table"), *states, *outputs);
            }
            Approximator::Mlp(spec) => {
                let dims = spec.dims();
                for (i, pair) in dims.windows(2).enumerate() {
                    params.register(format!("{prefix}w{i}"), pair[1], pair[0]);
                    params.register(format!("{prefix}b{i}"), pair[1], 1);
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut p = ParamVector::new();
        self.register(&mut p, "");
        p.len()
    }

    /// Orthogonal weights with activation gain on hidden layers and a small
    /// output gain for policies; zero biases. Tabular entries get tiny noise.
    pub fn init<R: Rng + ?Sized>(&self, role: InitRole, rng: &mut R) -> Vec<f64> {
        match self {
            Approximator::Tabular { states, outputs } => (0..states * outputs)
                .map(|_| match role {
                    InitRole::Policy => 0.01 * rng.sample::<f64, _>(StandardNormal),
                    InitRole::Value => 0.0,
                })
                .collect(),
            Approximator::Mlp(spec) => {
                let dims = spec.dims();
                let layers = dims.len() - 1;
                let mut out = Vec::with_capacity(self.param_count());
                for (i, pair) in dims.windows(2).enumerate() {
                    let gain = if i + 1 < layers {
                        spec.activation.gain()
                    } else {
                        match role {
                            InitRole::Policy => 0.01,
                            InitRole::Value => 1.0,
                        }
                    };
                    out.extend(orthogonal(pair[1], pair[0], gain, rng));
                    out.extend(std::iter::repeat_n(0.0, pair[1]));
                }
                out
            }
        }
    }

    pub fn forward(&self, params: &[f64], obs: &Observation) -> Vec<f64> {
        self.forward_cached(params, obs).0
    }

    pub fn forward_cached(&self, params: &[f64], obs: &Observation) -> (Vec<f64>, ForwardCache) {
        match self {
            Approximator::Tabular { outputs, .. } => {
                let state = obs.index.expect("tabular approximator needs a state index");
                let row = &params[state * outputs..(state + 1) * outputs];
                (row.to_vec(), ForwardCache::Tabular { state })
            }
            Approximator::Mlp(spec) => {
                debug_assert_eq!(obs.features.len(), spec.input_dim);
                let dims = spec.dims();
                let layers = dims.len() - 1;
                let mut layer_inputs = Vec::with_capacity(layers);
                let mut x = obs.features.clone();
                let mut offset = 0;
                for (i, pair) in dims.windows(2).enumerate() {
                    let (n_in, n_out) = (pair[0], pair[1]);
                    let w = &params[offset..offset + n_in * n_out];
                    let b = &params[offset + n_in * n_out..offset + n_in * n_out + n_out];
                    offset += n_in * n_out + n_out;
                    let mut y: Vec<f64> = b.to_vec();
                    for (o, yo) in y.iter_mut().enumerate() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        *yo += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                    }
                    if i + 1 < layers {
                        y.iter_mut().for_each(|v| *v = spec.activation.apply(*v));
                    }
                    layer_inputs.push(std::mem::replace(&mut x, y));
                }
                (x, ForwardCache::Mlp { layer_inputs })
            }
        }
    }

    /// Accumulates `∂loss/∂params` into `grad` given `∂loss/∂output`.
    pub fn backward(&self, params: &[f64], cache: &ForwardCache, d_out: &[f64], grad: &mut [f64]) {
        match (self, cache) {
            (Approximator::Tabular { outputs, .. }, ForwardCache::Tabular { state }) => {
                for (g, d) in grad[state * outputs..(state + 1) * outputs].iter_mut().zip(d_out) {
                    *g += d;
                }
            }
            (Approximator::Mlp(spec), ForwardCache::Mlp { layer_inputs }) => {
                let dims = spec.dims();
                let layers = dims.len() - 1;
                let mut offsets = Vec::with_capacity(layers);
                let mut offset = 0;
                for pair in dims.windows(2) {
                    offsets.push(offset);
                    offset += pair[0] * pair[1] + pair[1];
                }
                let mut delta = d_out.to_vec();
                for layer in (0..layers).rev() {
                    let (n_in, n_out) = (dims[layer], dims[layer + 1]);
                    let off = offsets[layer];
                    let input = &layer_inputs[layer];
                    for o in 0..n_out {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                        for (g, x) in row.iter_mut().zip(input) {
                            *g += d * x;
                        }
                        grad[off + n_in * n_out + o] += d;
                    }
                    if layer == 0 {
                        break;
                    }
                    let w = &params[off..off + n_in * n_out];
                    let mut prev = vec![0.0; n_in];
                    for o in 0..n_out {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        for (p, wv) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                            *p += d * wv;
                        }
                    }
                    // input to this layer is the previous layer's activation output
                    for (p, y) in prev.iter_mut().zip(input) {
                        *p *= spec.activation.derivative(*y);
                    }
                    delta = prev;
                }
            }
            _ => panic!("forward cache does not match approximator kind"),
        }
    }
}

/// `rows × cols` matrix with orthonormal rows or columns, scaled by `gain`.
fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    // columns of a tall × short gaussian matrix, orthonormalized
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..tall).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain
                * if rows >= cols {
                    basis[c][r]
                } else {
                    basis[r][c]
                };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RngStream;

    #[test]
    fn zero_parameters_give_zero_output() {
        let net = Approximator::Mlp(MlpSpec::standard(3, 2));
        let params = vec![0.0; net.param_count()];
        let out = net.forward(&params, &Observation::continuous(vec![0.3, -1.0, 2.0]));
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer_echoes_input() {
        let net = Approximator::Mlp(MlpSpec {
            input_dim: 3,
            hidden: vec![],
            activation: Activation::Tanh,
            output_dim: 3,
        });
        let mut params = vec![0.0; net.param_count()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        let x = vec![0.5, -2.0, 7.0];
        assert_eq!(net.forward(&params, &Observation::continuous(x.clone())), x);
    }

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = RngStream::new(0, 0);
        let m = orthogonal(4, 6, 1.0, &mut rng);
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = (0..6).map(|k| m[i * 6 + k] * m[j * 6 + k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn tabular_backward_touches_one_row() {
        let net = Approximator::Tabular {
            states: 3,
            outputs: 2,
        };
        let params = vec![0.0; 6];
        let (_, cache) = net.forward_cached(&params, &Observation::one_hot(1, 3));
        let mut grad = vec![0.0; 6];
        net.backward(&params, &cache, &[2.0, -1.0], &mut grad);
        assert_eq!(grad, vec![0.0, 0.0, 2.0, -1.0, 0.0, 0.0]);
    }
}
