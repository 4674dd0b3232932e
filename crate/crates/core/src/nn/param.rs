use crate::{Error, Result};

/// A trainable array and its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn new(value: Vec<f64>) -> Self {
        let grad = vec![0.0; value.len()];
        Self { value, grad }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }
}

/// Location of one named parameter inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

/// Anything that owns parameters. Visiting order defines the flat layout
/// used by the optimizer, gradient checks and checkpoints.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Param));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, p| n += p.len());
        n
    }

    fn param_layout(&self) -> Vec<ParamSlot> {
        let mut slots = Vec::new();
        let mut offset = 0;
        self.visit_params(&mut |name, p| {
            slots.push(ParamSlot {
                name: name.to_string(),
                offset,
                len: p.len(),
            });
            offset += p.len();
        });
        slots
    }

    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit_params(&mut |_, p| out.extend_from_slice(&p.value));
        out
    }

    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit_params(&mut |_, p| out.extend_from_slice(&p.grad));
        out
    }

    fn set_flat_values(&mut self, values: &[f64]) -> Result<()> {
        let n = self.num_params();
        if n != values.len() {
            return Err(Error::dim("flat parameter vector", n, values.len()));
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |_, p| {
            let len = p.len();
            p.value.copy_from_slice(&values[offset..offset + len]);
            offset += len;
        });
        Ok(())
    }

    fn set_flat_grads(&mut self, grads: &[f64]) -> Result<()> {
        let n = self.num_params();
        if n != grads.len() {
            return Err(Error::dim("flat gradient vector", n, grads.len()));
        }
        let mut offset = 0;
        self.visit_params_mut(&mut |_, p| {
            let len = p.len();
            p.grad.copy_from_slice(&grads[offset..offset + len]);
            offset += len;
        });
        Ok(())
    }

    fn zero_grad(&mut self) {
        self.visit_params_mut(&mut |_, p| p.zero_grad());
    }
}

/// Visits a child module's parameters under `prefix.`.
pub(crate) fn visit_child<M: Parameterized + ?Sized>(
    child: &M,
    prefix: &str,
    f: &mut dyn FnMut(&str, &Param),
) {
    child.visit_params(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}

pub(crate) fn visit_child_mut<M: Parameterized + ?Sized>(
    child: &mut M,
    prefix: &str,
    f: &mut dyn FnMut(&str, &mut Param),
) {
    child.visit_params_mut(&mut |name, p| f(&format!("{prefix}.{name}"), p));
}
