use rand::Rng;
use rand_distr::StandardNormal;

use super::ApproxError;
use crate::mdp::ActionValue;

const LOG_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyDistribution {
    Categorical { logits: Vec<f64> },
    /// Diagonal Gaussian with a state-independent log standard deviation.
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

/// Derivative of a scalar function of the distribution with respect to its
/// network output (`logits` or `mean`) and to `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistGrad {
    pub d_output: Vec<f64>,
    pub d_log_std: Vec<f64>,
}

impl PolicyDistribution {
    pub fn probs(&self) -> Option<Vec<f64>> {
        match self {
            PolicyDistribution::Categorical { logits } => Some(softmax(logits)),
            PolicyDistribution::Gaussian { .. } => None,
        }
    }

    pub fn log_prob(&self, action: &ActionValue) -> Result<f64, ApproxError> {
        match (self, action) {
            (PolicyDistribution::Categorical { logits }, ActionValue::Discrete(a)) => {
                if *a >= logits.len() {
                    return Err(ApproxError::Support(format!(
                        "action {a} outside {} categories",
                        logits.len()
                    )));
                }
                Ok(logits[*a] - log_sum_exp(logits))
            }
            (PolicyDistribution::Gaussian { mean, log_std }, ActionValue::Continuous(x)) => {
                if x.len() != mean.len() {
                    return Err(ApproxError::Support("action dimension mismatch".into()));
                }
                Ok(mean
                    .iter()
                    .zip(log_std)
                    .zip(x)
                    .map(|((m, ls), xi)| {
                        let z = (xi - m) / ls.exp();
                        -0.5 * z * z - ls - 0.5 * LOG_2PI
                    })
                    .sum())
            }
            _ => Err(ApproxError::Support("action kind does not match distribution".into())),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ActionValue {
        match self {
            PolicyDistribution::Categorical { logits } => {
                let probs = softmax(logits);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return ActionValue::Discrete(i);
                    }
                }
                ActionValue::Discrete(probs.len() - 1)
            }
            PolicyDistribution::Gaussian { mean, log_std } => ActionValue::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
                    .collect(),
            ),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            PolicyDistribution::Categorical { logits } => {
                let lse = log_sum_exp(logits);
                logits
                    .iter()
                    .map(|z| {
                        let lp = z - lse;
                        -lp.exp() * lp
                    })
                    .sum()
            }
            PolicyDistribution::Gaussian { log_std, .. } => {
                log_std.iter().map(|ls| ls + 0.5 * (1.0 + LOG_2PI)).sum()
            }
        }
    }

    /// Gradient of `log π(action)`.
    pub fn log_prob_grad(&self, action: &ActionValue) -> Result<DistGrad, ApproxError> {
        match (self, action) {
            (PolicyDistribution::Categorical { logits }, ActionValue::Discrete(a)) => {
                if *a >= logits.len() {
                    return Err(ApproxError::Support(format!("action {a} outside support")));
                }
                let mut d: Vec<f64> = softmax(logits).iter().map(|p| -p).collect();
                d[*a] += 1.0;
                Ok(DistGrad {
                    d_output: d,
                    d_log_std: Vec::new(),
                })
            }
            (PolicyDistribution::Gaussian { mean, log_std }, ActionValue::Continuous(x)) => {
                let mut d_mean = Vec::with_capacity(mean.len());
                let mut d_ls = Vec::with_capacity(mean.len());
                for ((m, ls), xi) in mean.iter().zip(log_std).zip(x) {
                    let var = (2.0 * ls).exp();
                    let diff = xi - m;
                    d_mean.push(diff / var);
                    d_ls.push(diff * diff / var - 1.0);
                }
                Ok(DistGrad {
                    d_output: d_mean,
                    d_log_std: d_ls,
                })
            }
            _ => Err(ApproxError::Support("action kind does not match distribution".into())),
        }
    }

    pub fn entropy_grad(&self) -> DistGrad {
        match self {
            PolicyDistribution::Categorical { logits } => {
                let lse = log_sum_exp(logits);
                let h = self.entropy();
                DistGrad {
                    d_output: logits
                        .iter()
                        .map(|z| {
                            let lp = z - lse;
                            -lp.exp() * (lp + h)
                        })
                        .collect(),
                    d_log_std: Vec::new(),
                }
            }
            PolicyDistribution::Gaussian { mean, log_std } => DistGrad {
                d_output: vec![0.0; mean.len()],
                d_log_std: vec![1.0; log_std.len()],
            },
        }
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(x);
    x.iter().map(|v| (v - lse).exp()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::RngStream;

    #[test]
    fn uniform_categorical() {
        let d = PolicyDistribution::Categorical {
            logits: vec![0.3; 4],
        };
        for a in 0..4 {
            let lp = d.log_prob(&ActionValue::Discrete(a)).unwrap();
            assert!((lp - 0.25f64.ln()).abs() < 1e-15);
        }
        assert!((d.entropy() - 4f64.ln()).abs() < 1e-12);
        assert!(d.log_prob(&ActionValue::Discrete(4)).is_err());
    }

    #[test]
    fn categorical_probabilities_sum_to_one() {
        let d = PolicyDistribution::Categorical {
            logits: vec![3.0, -20.0, 0.1, 700.0],
        };
        let total: f64 = d.probs().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gaussian_density_at_mean() {
        let log_std = vec![0.2, -0.7, 1.1];
        let mean = vec![0.5, -1.0, 2.0];
        let d = PolicyDistribution::Gaussian {
            mean: mean.clone(),
            log_std: log_std.clone(),
        };
        let lp = d.log_prob(&ActionValue::Continuous(mean)).unwrap();
        let want = -log_std.iter().sum::<f64>() - 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lp - want).abs() < 1e-12);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        // 1-D trapezoid over ±10σ
        let d = PolicyDistribution::Gaussian {
            mean: vec![0.3],
            log_std: vec![-0.4],
        };
        let sigma = (-0.4f64).exp();
        let n = 20_000;
        let (lo, hi) = (0.3 - 10.0 * sigma, 0.3 + 10.0 * sigma);
        let h = (hi - lo) / n as f64;
        let total: f64 = (0..=n)
            .map(|i| {
                let x = lo + i as f64 * h;
                let w = if i == 0 || i == n { 0.5 } else { 1.0 };
                w * d.log_prob(&ActionValue::Continuous(vec![x])).unwrap().exp()
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn sampling_frequencies_follow_probabilities() {
        let d = PolicyDistribution::Categorical {
            logits: vec![0.0, 1.0, 2.0],
        };
        let probs = d.probs().unwrap();
        let mut rng = RngStream::new(4, 0);
        let mut counts = [0usize; 3];
        let n = 40_000;
        for _ in 0..n {
            if let ActionValue::Discrete(a) = d.sample(&mut rng) {
                counts[a] += 1;
            }
        }
        for (c, p) in counts.iter().zip(&probs) {
            let freq = *c as f64 / n as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < 4.0 * sigma);
        }
    }

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let logits = vec![0.4, -1.2, 0.9, 0.0];
        let cat = |z: &[f64]| PolicyDistribution::Categorical { logits: z.to_vec() };
        let g = cat(&logits).log_prob_grad(&ActionValue::Discrete(2)).unwrap();
        let num = fd(|z| cat(z).log_prob(&ActionValue::Discrete(2)).unwrap(), &logits);
        for (a, b) in g.d_output.iter().zip(&num) {
            assert!((a - b).abs() < 1e-7);
        }
        let g = cat(&logits).entropy_grad();
        let num = fd(|z| cat(z).entropy(), &logits);
        for (a, b) in g.d_output.iter().zip(&num) {
            assert!((a - b).abs() < 1e-7);
        }

        let mean = vec![0.2, -0.5];
        let ls = vec![-0.3, 0.4];
        let x = ActionValue::Continuous(vec![0.9, -1.4]);
        let g = PolicyDistribution::Gaussian {
            mean: mean.clone(),
            log_std: ls.clone(),
        }
        .log_prob_grad(&x)
        .unwrap();
        let num_mean = fd(
            |m| {
                PolicyDistribution::Gaussian {
                    mean: m.to_vec(),
                    log_std: ls.clone(),
                }
                .log_prob(&x)
                .unwrap()
            },
            &mean,
        );
        let num_ls = fd(
            |l| {
                PolicyDistribution::Gaussian {
                    mean: mean.clone(),
                    log_std: l.to_vec(),
                }
                .log_prob(&x)
                .unwrap()
            },
            &ls,
        );
        for (a, b) in g.d_output.iter().zip(&num_mean) {
            assert!((a - b).abs() < 1e-7);
        }
        for (a, b) in g.d_log_std.iter().zip(&num_ls) {
            assert!((a - b).abs() < 1e-7);
        }
    }
}
