use serde::{Deserialize, Serialize};

use super::dense::Dense;
use super::param::{Param, Parameterized};
use super::sigmoid;
use crate::{Error, Result};

/// Hyper-parameters of a concrete dropout layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    pub temperature: f64,
    pub init_rate: f64,
    pub length_scale: f64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            temperature: 0.1,
            init_rate: 0.1,
            length_scale: 1e-2,
        }
    }
}

impl DropoutConfig {
    /// `(weight_reg, rate_reg)` for a training set of `dataset_size` examples.
    pub fn coefficients(&self, dataset_size: usize) -> Result<(f64, f64)> {
        if dataset_size == 0 {
            return Err(Error::InvalidInput("dataset_size must be positive".into()));
        }
        let n = dataset_size as f64;
        Ok((self.length_scale * self.length_scale / n, 2.0 / n))
    }
}

/// Dropout with a relaxed (concrete) Bernoulli mask whose rate is trained.
///
/// The gate of unit `i` is `z_i = σ((logit(p) + logit(u_i)) / temperature)`
/// and the output is `x_i (1 - z_i) / (1 - p)`, so the mask keeps the
/// expectation of `x`. Since `p = σ(rate_logit)`, `logit(p)` is just the
/// trainable scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcreteDropout {
    pub rate_logit: Param,
    pub temperature: f64,
    pub weight_reg: f64,
    pub rate_reg: f64,
}

#[derive(Clone, Debug)]
pub struct DropoutCache {
    input: Vec<f64>,
    gates: Vec<f64>,
}

fn logit(x: f64) -> f64 {
    (x / (1.0 - x)).ln()
}

impl ConcreteDropout {
    pub fn new(rate: f64, temperature: f64, weight_reg: f64, rate_reg: f64) -> Result<Self> {
        if !(rate > 0.0 && rate < 1.0) {
            return Err(Error::InvalidInput(format!("dropout rate {rate} outside (0,1)")));
        }
        if temperature <= 0.0 || weight_reg < 0.0 || rate_reg < 0.0 {
            return Err(Error::InvalidInput(
                "temperature must be > 0 and regularisers >= 0".into(),
            ));
        }
        Ok(Self {
            rate_logit: Param::new(vec![logit(rate)]),
            temperature,
            weight_reg,
            rate_reg,
        })
    }

    pub fn from_config(cfg: &DropoutConfig, dataset_size: usize) -> Result<Self> {
        let (wr, rr) = cfg.coefficients(dataset_size)?;
        Self::new(cfg.init_rate, cfg.temperature, wr, rr)
    }

    /// Current dropout probability, strictly inside (0, 1) for finite logits.
    pub fn rate(&self) -> f64 {
        sigmoid(self.rate_logit.value[0]).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }

    pub fn gate(&self, u: f64) -> f64 {
        sigmoid((self.rate_logit.value[0] + logit(u)) / self.temperature)
    }

    fn check_noise(x: &[f64], noise: &[f64]) -> Result<()> {
        if noise.len() != x.len() {
            return Err(Error::dim("dropout noise", x.len(), noise.len()));
        }
        if let Some(u) = noise.iter().find(|&&u| !(u > 0.0 && u < 1.0)) {
            return Err(Error::InvalidInput(format!(
                "dropout noise {u} must lie in the open interval (0,1)"
            )));
        }
        Ok(())
    }

    /// Stochastic pass with caller-supplied uniforms.
    pub fn forward(&self, x: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x, noise)?.0)
    }

    pub fn forward_cached(&self, x: &[f64], noise: &[f64]) -> Result<(Vec<f64>, DropoutCache)> {
        Self::check_noise(x, noise)?;
        let keep_scale = 1.0 / (1.0 - self.rate());
        let gates: Vec<f64> = noise.iter().map(|&u| self.gate(u)).collect();
        let y = x
            .iter()
            .zip(&gates)
            .map(|(xi, z)| xi * (1.0 - z) * keep_scale)
            .collect();
        Ok((
            y,
            DropoutCache {
                input: x.to_vec(),
                gates,
            },
        ))
    }

    /// Gates at their expectation: the identity map.
    pub fn forward_expected(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    /// Returns `dL/dx`; accumulates `dL/d rate_logit`.
    pub fn backward(&mut self, cache: &DropoutCache, dy: &[f64]) -> Vec<f64> {
        let p = self.rate();
        let keep_scale = 1.0 / (1.0 - p);
        let t = self.temperature;
        let mut d_logit = 0.0;
        let dx = dy
            .iter()
            .zip(cache.input.iter().zip(&cache.gates))
            .map(|(g, (x, z))| {
                d_logit += g * x * (-z * (1.0 - z) / t * keep_scale + (1.0 - z) * p * keep_scale);
                g * (1.0 - z) * keep_scale
            })
            .collect();
        self.rate_logit.grad[0] += d_logit;
        dx
    }

    /// `weight_reg ‖W‖² / (1-p) + rate_reg · D · (p ln p + (1-p) ln(1-p))`
    /// where `W` belongs to the dense layer fed by this dropout layer and
    /// `D` is its input width.
    pub fn regularizer(&self, attached: &Dense) -> f64 {
        let p = self.rate();
        let d = attached.in_dim() as f64;
        self.weight_reg * attached.weight_sq_norm() / (1.0 - p)
            + self.rate_reg * d * (p * p.ln() + (1.0 - p) * (1.0 - p).ln())
    }

    /// Derivative of [`Self::regularizer`] with respect to `p`.
    pub fn regularizer_dp(&self, attached: &Dense) -> f64 {
        let p = self.rate();
        let d = attached.in_dim() as f64;
        self.weight_reg * attached.weight_sq_norm() / ((1.0 - p) * (1.0 - p))
            + self.rate_reg * d * (p.ln() - (1.0 - p).ln())
    }

    /// Accumulates `scale · ∇regularizer` into this layer and `attached`.
    pub fn regularizer_backward(&mut self, attached: &mut Dense, scale: f64) {
        let p = self.rate();
        self.rate_logit.grad[0] += scale * self.regularizer_dp(attached) * p * (1.0 - p);
        let coef = scale * 2.0 * self.weight_reg / (1.0 - p);
        for (g, w) in attached.weight.grad.iter_mut().zip(&attached.weight.value) {
            *g += coef * w;
        }
    }
}

impl Parameterized for ConcreteDropout {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("rate_logit", &self.rate_logit);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("rate_logit", &mut self.rate_logit);
    }
}
