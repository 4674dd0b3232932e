use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::kernels::{axpy, dot};
use super::param::{Param, Parameterized};
use super::sigmoid;
use crate::rng::Rng;
use crate::{Error, Result};

/// Recurrent state carried between ticks. A plain value: cloning it and
/// stepping from the clone later reproduces the original trajectory exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmMemory {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

impl LstmMemory {
    pub fn zeros(width: usize) -> Self {
        Self {
            hidden: vec![0.0; width],
            cell: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.hidden.len()
    }

    pub fn is_zero(&self) -> bool {
        self.hidden.iter().chain(&self.cell).all(|&v| v == 0.0)
    }
}

/// Standard LSTM cell. Gate rows are stacked `[input, forget, candidate, output]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell {
    pub w_ih: Param,
    pub w_hh: Param,
    pub bias: Param,
    input_dim: usize,
    hidden_dim: usize,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Activated gates, `[i, f, g, o]` blocks.
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl LstmCell {
    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Self {
            w_ih: Param::zeros(4 * hidden_dim * input_dim),
            w_hh: Param::zeros(4 * hidden_dim * hidden_dim),
            bias: Param::zeros(4 * hidden_dim),
            input_dim,
            hidden_dim,
        }
    }

    /// Glorot-uniform weights, forget-gate bias 1.
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut Rng) -> Self {
        let mut cell = Self::zeros(input_dim, hidden_dim);
        let limit_ih = (6.0 / (input_dim + hidden_dim) as f64).sqrt();
        let limit_hh = (6.0 / (2 * hidden_dim) as f64).sqrt();
        cell.w_ih
            .value
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-limit_ih..limit_ih));
        cell.w_hh
            .value
            .iter_mut()
            .for_each(|w| *w = rng.gen_range(-limit_hh..limit_hh));
        cell.bias.value[hidden_dim..2 * hidden_dim]
            .iter_mut()
            .for_each(|b| *b = 1.0);
        cell
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    fn check(&self, x: &[f64], mem: &LstmMemory) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::dim("lstm input", self.input_dim, x.len()));
        }
        if mem.hidden.len() != self.hidden_dim || mem.cell.len() != self.hidden_dim {
            return Err(Error::dim("lstm memory", self.hidden_dim, mem.hidden.len()));
        }
        Ok(())
    }

    fn gates(&self, x: &[f64], h_prev: &[f64]) -> Vec<f64> {
        let (n, i_dim) = (self.hidden_dim, self.input_dim);
        let mut a: Vec<f64> = (0..4 * n)
            .map(|r| {
                self.bias.value[r]
                    + dot(&self.w_ih.value[r * i_dim..(r + 1) * i_dim], x)
                    + dot(&self.w_hh.value[r * n..(r + 1) * n], h_prev)
            })
            .collect();
        for (r, v) in a.iter_mut().enumerate() {
            *v = if (2 * n..3 * n).contains(&r) {
                v.tanh()
            } else {
                sigmoid(*v)
            };
        }
        a
    }

    /// One step. `mem` is left untouched; the successor memory is returned.
    pub fn step(&self, x: &[f64], mem: &LstmMemory) -> Result<(Vec<f64>, LstmMemory)> {
        let (h, next, _) = self.step_cached(x, mem)?;
        Ok((h, next))
    }

    pub fn step_cached(
        &self,
        x: &[f64],
        mem: &LstmMemory,
    ) -> Result<(Vec<f64>, LstmMemory, LstmCache)> {
        self.check(x, mem)?;
        let n = self.hidden_dim;
        let gates = self.gates(x, &mem.hidden);
        let mut cell = vec![0.0; n];
        let mut hidden = vec![0.0; n];
        let mut tanh_c = vec![0.0; n];
        for j in 0..n {
            let (i, f, g, o) = (gates[j], gates[n + j], gates[2 * n + j], gates[3 * n + j]);
            cell[j] = f * mem.cell[j] + i * g;
            tanh_c[j] = cell[j].tanh();
            hidden[j] = o * tanh_c[j];
        }
        let next = LstmMemory {
            hidden: hidden.clone(),
            cell,
        };
        let cache = LstmCache {
            x: x.to_vec(),
            h_prev: mem.hidden.clone(),
            c_prev: mem.cell.clone(),
            gates,
            tanh_c,
        };
        Ok((hidden, next, cache))
    }

    /// Backward through one step. `dh` is the total gradient reaching the
    /// hidden output, `dc` the gradient flowing into the cell from the next
    /// step. Returns `(dx, dh_prev, dc_prev)`.
    pub fn backward_step(
        &mut self,
        cache: &LstmCache,
        dh: &[f64],
        dc: &[f64],
        need_input_grad: bool,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (n, i_dim) = (self.hidden_dim, self.input_dim);
        let g = &cache.gates;
        let mut da = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for j in 0..n {
            let (i, f, gg, o) = (g[j], g[n + j], g[2 * n + j], g[3 * n + j]);
            let tc = cache.tanh_c[j];
            let d_o = dh[j] * tc;
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            let d_i = dct * gg;
            let d_g = dct * i;
            let d_f = dct * cache.c_prev[j];
            dc_prev[j] = dct * f;
            da[j] = d_i * i * (1.0 - i);
            da[n + j] = d_f * f * (1.0 - f);
            da[2 * n + j] = d_g * (1.0 - gg * gg);
            da[3 * n + j] = d_o * o * (1.0 - o);
        }
        let mut dx = if need_input_grad {
            vec![0.0; i_dim]
        } else {
            Vec::new()
        };
        let mut dh_prev = vec![0.0; n];
        for (r, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            self.bias.grad[r] += d;
            axpy(d, &cache.x, &mut self.w_ih.grad[r * i_dim..(r + 1) * i_dim]);
            axpy(d, &cache.h_prev, &mut self.w_hh.grad[r * n..(r + 1) * n]);
            if need_input_grad {
                axpy(d, &self.w_ih.value[r * i_dim..(r + 1) * i_dim], &mut dx);
            }
            axpy(d, &self.w_hh.value[r * n..(r + 1) * n], &mut dh_prev);
        }
        (dx, dh_prev, dc_prev)
    }
}

impl Parameterized for LstmCell {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        f("w_ih", &self.w_ih);
        f("w_hh", &self.w_hh);
        f("bias", &self.bias);
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param)) {
        f("w_ih", &mut self.w_ih);
        f("w_hh", &mut self.w_hh);
        f("bias", &mut self.bias);
    }
}
