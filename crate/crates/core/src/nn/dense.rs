use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::kernels::{axpy, dot};
use super::param::{Param, Parameterized};
use super::{sigmoid, softplus};
use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative given the pre-activation and the activation output.
    #[inline]
    pub fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - out * out,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(pre),
        }
    }
}

/// Fully connected layer `y = act(W x + b)` with `W` stored `[out x in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    in_dim: usize,
    out_dim: usize,
    activation: Activation,
}

#[derive(Clone, Debug)]
pub struct DenseCache {
    input: Vec<f64>,
    pre: Vec<f64>,
    out: Vec<f64>,
}

impl Dense {
    /// All-zero parameters.
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Param::zeros(in_dim * out_dim),
            bias: Param::zeros(out_dim),
            in_dim,
            out_dim,
            activation,
        }
    }

    /// Uniform fan-in scaled initialisation (He for ReLU, Glorot otherwise),
    /// zero bias.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut Rng) -> Self {
        let limit = match activation {
            Activation::Relu => (6.0 / in_dim as f64).sqrt(),
            _ => (6.0 / (in_dim + out_dim) as f64).sqrt(),
        };
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in layer.weight.value.iter_mut() {
            *w = rng.gen_range(-limit..limit);
        }
        layer
    }

    pub fn from_parts(
        weight: Vec<f64>,
        bias: Vec<f64>,
        in_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let out_dim = bias.len();
        if weight.len() != in_dim * out_dim {
            return Err(Error::dim("dense weight", in_dim * out_dim, weight.len()));
        }
        Ok(Self {
            weight: Param::new(weight),
            bias: Param::new(bias),
            in_dim,
            out_dim,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::dim("dense input", self.in_dim, x.len()));
        }
        let w = &self.weight.value;
        Ok((0..self.out_dim)
            .map(|o| self.bias.value[o] + dot(&w[o * self.in_dim..(o + 1) * self.in_dim], x))
            .collect())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.pre_activation(x)?;
        for v in y.iter_mut() {
            *v = self.activation.apply(*v);
        }
        Ok(y)
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<(Vec<f64>, DenseCache)> {
        let pre = self.pre_activation(x)?;
        let out: Vec<f64> = pre.iter().map(|&v| self.activation.apply(v)).collect();
        let cache = DenseCache {
            input: x.to_vec(),
            pre,
            out: out.clone(),
        };
        Ok((out, cache))
    }

    /// Accumulates parameter gradients and returns `dL/dx` (empty when
    /// `need_input_grad` is false).
    pub fn backward(&mut self, cache: &DenseCache, dy: &[f64], need_input_grad: bool) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.out_dim);
        let dpre: Vec<f64> = dy
            .iter()
            .zip(cache.pre.iter().zip(&cache.out))
            .map(|(g, (&p, &o))| g * self.activation.derivative(p, o))
            .collect();
        let n = self.in_dim;
        for (o, &d) in dpre.iter().enumerate() {
            if d != 0.0 {
                axpy(d, &cache.input, &mut self.weight.grad[o * n..(o + 1) * n]);
            }
            self.bias.grad[o] += d;
        }
        if !need_input_grad {
            return Vec::new();
        }
        let mut dx = vec![0.0; n];
        for (o, &d) in dpre.iter().enumerate() {
            if d != 0.0 {
                axpy(d, &self.weight.value[o * n..(o + 1) * n], &mut dx);
            }
        }
        dx
    }

    pub fn weight_sq_norm(&self) -> f64 {
        dot(&self.weight.value, &self.weight.value)
    }
}

impl Parameterized for Dense {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("weight", &self.weight);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::gradient_check;
    use crate::rng::rng_for;

    #[test]
    fn identity_weights_pass_input_through() {
        let layer =
            Dense::from_parts(vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0], 2, Activation::Identity)
                .unwrap();
        assert_eq!(layer.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_emit_activated_bias() {
        let layer = Dense::from_parts(vec![0.0; 4], vec![3.0], 4, Activation::Relu).unwrap();
        assert_eq!(layer.forward(&[5.0, -1.0, 2.0, 9.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let layer = Dense::zeros(3, 2, Activation::Tanh);
        assert!(matches!(
            layer.forward(&[1.0, 2.0]),
            Err(Error::Dimension { expected: 3, actual: 2, .. })
        ));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (k, act) in [Activation::Identity, Activation::Tanh, Activation::Softplus]
            .into_iter()
            .enumerate()
        {
            let mut rng = rng_for(11, &[k as u64]);
            let mut layer = Dense::init(5, 4, act, &mut rng);
            for b in layer.bias.value.iter_mut() {
                *b = rng.gen_range(-0.5..0.5);
            }
            let x: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let target: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let loss_of = |l: &Dense| -> f64 {
                let y = l.forward(&x).unwrap();
                y.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            };
            let (y, cache) = layer.forward_cached(&x).unwrap();
            let dy: Vec<f64> = y.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            layer.zero_grad();
            layer.backward(&cache, &dy, true);
            let analytic = layer.flat_grads();
            let params = layer.flat_values();
            let mut probe = layer.clone();
            let report = gradient_check(
                |p| {
                    probe.set_flat_values(p).unwrap();
                    loss_of(&probe)
                },
                &params,
                &analytic,
                1e-6,
            )
            .unwrap();
            assert!(report.max_rel_err < 1e-6, "{act:?}: {report:?}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = rng_for(12, &[]);
        let mut layer = Dense::init(3, 2, Activation::Tanh, &mut rng);
        let x = vec![0.3, -0.2, 0.7];
        let (_, cache) = layer.forward_cached(&x).unwrap();
        let dx = layer.backward(&cache, &[1.0, -2.0], true);
        let f = |x: &[f64]| {
            let y = layer.forward(x).unwrap();
            y[0] - 2.0 * y[1]
        };
        let report = gradient_check(f, &x, &dx, 1e-6).unwrap();
        assert!(report.max_rel_err < 1e-6, "{report:?}");
    }
}
