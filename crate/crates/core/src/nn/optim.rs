use serde::{Deserialize, Serialize};

use super::param::{ParamSlot, Parameterized};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adaptive-moment optimizer state over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    steps: u64,
}

impl OptimizerState {
    pub fn new(num_params: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update. Rejects non-finite gradients before touching any state,
    /// naming the offending parameter when `layout` is supplied.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], layout: Option<&[ParamSlot]>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::dim("optimizer parameters", self.m.len(), params.len()));
        }
        if grads.len() != params.len() {
            return Err(Error::dim("optimizer gradients", params.len(), grads.len()));
        }
        if let Some(idx) = grads.iter().position(|g| !g.is_finite()) {
            let path = layout
                .and_then(|slots| slots.iter().find(|s| idx >= s.offset && idx < s.offset + s.len))
                .map(|s| format!("{}[{}]", s.name, idx - s.offset))
                .unwrap_or_else(|| format!("param[{idx}]"));
            return Err(Error::NonFinite(format!("gradient of {path}")));
        }
        self.steps += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.steps as i32);
        let bc2 = 1.0 - beta2.powi(self.steps as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }

    /// Applies the module's accumulated gradients to its parameters.
    pub fn step_module<M: Parameterized + ?Sized>(&mut self, module: &mut M) -> Result<()> {
        let mut params = module.flat_values();
        let grads = module.flat_grads();
        let layout = module.param_layout();
        self.step(&mut params, &grads, Some(&layout))?;
        module.set_flat_values(&params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut opt = OptimizerState::new(3, AdamConfig::default());
        let mut p = vec![1.0, -2.0, 3.0];
        for _ in 0..10 {
            opt.step(&mut p, &[0.0; 3], None).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut opt = OptimizerState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        for _ in 0..100 {
            opt.step(&mut p, &[2.5], None).unwrap();
        }
        assert!(p[0] < -0.05);
        let mut opt = OptimizerState::new(1, AdamConfig::default());
        let mut p = vec![0.0];
        for _ in 0..100 {
            opt.step(&mut p, &[-0.1], None).unwrap();
        }
        assert!(p[0] > 0.05);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut opt = OptimizerState::new(1, cfg);
        let mut w = vec![1.0];
        let mut reached = None;
        for step in 1..=2000 {
            let g = 2.0 * w[0];
            opt.step(&mut w, &[g], None).unwrap();
            if w[0].abs() < 1e-3 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some(), "final w = {}", w[0]);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut opt = OptimizerState::new(4, AdamConfig::default());
        let layout = vec![
            ParamSlot { name: "a.weight".into(), offset: 0, len: 2 },
            ParamSlot { name: "a.bias".into(), offset: 2, len: 2 },
        ];
        let mut p = vec![0.0; 4];
        let err = opt
            .step(&mut p, &[0.0, 0.0, 0.0, f64::NAN], Some(&layout))
            .unwrap_err();
        assert!(err.to_string().contains("a.bias[1]"), "{err}");
        assert_eq!(opt.steps(), 0);
    }
}
