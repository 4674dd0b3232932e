//! Minimal neural-network substrate.
//!
//! Every layer owns its parameters together with gradient buffers of the
//! same shape. Forward passes used for training return an explicit cache
//! that the matching backward pass consumes; inference passes skip it.
//! All arithmetic is `f64`.

mod checkpoint;
mod conv;
mod dense;
mod dropout;
mod gradcheck;
mod kernels;
mod loss;
mod lstm;
mod optim;
mod param;
mod tensor;

pub use checkpoint::{read_checkpoint, write_checkpoint, LayerDesc, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use conv::{Conv2d, Conv2dCache};
pub use dense::{Activation, Dense, DenseCache};
pub use dropout::{ConcreteDropout, DropoutCache, DropoutConfig};
pub use gradcheck::{gradient_check, GradCheckReport, REL_ERR_FLOOR};
pub use kernels::{axpy, dot};
pub use loss::{cce, log_softmax, imitation_loss, mse, softmax, ImitationLoss, ImitationTargets, LossWeights};
pub use lstm::{LstmCache, LstmCell, LstmMemory};
pub use optim::{AdamConfig, OptimizerState};
pub use param::{Param, ParamSlot, Parameterized};
pub(crate) use param::{visit_child, visit_child_mut};
pub use tensor::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn check_finite(values: &[f64], context: &str) -> crate::Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::Error::NonFinite(context.to_string()))
    }
}
