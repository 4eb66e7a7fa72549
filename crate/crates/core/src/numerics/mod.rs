//! Minimal dense-array math with manual forward/backward passes.
//!
//! Everything is 64-bit floating point. Feature maps are stored as
//! `[W, H, C]` tensors, row-major over that dim order: the value at
//! `(x, y, c)` lives at offset `(x * H + y) * C + c`. Convolution kernels
//! are `[kh, kw, Cin, Cout]` where `kh` indexes the y offset and `kw` the
//! x offset. Padding is always zero padding.

mod checkpoint;
mod conv;
mod gradcheck;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TensorData, CHECKPOINT_VERSION};
pub use conv::{conv_backward, conv_forward, relu_backward, relu_forward, LayerGrads, LayerParams};
pub use gradcheck::{grad_check, GradientReport};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// One SGD-with-momentum step on a single tensor:
/// `v <- momentum * v + grad; p <- p - lr * v`.
///
/// Rejects non-finite gradients so a diverging run aborts instead of
/// silently poisoning the parameters.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, velocity: &mut Tensor, lr: f64, momentum: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::InvalidArg(format!("sgd lr must be > 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArg(format!("sgd momentum must be in [0, 1), got {momentum}")));
    }
    if param.dims() != grad.dims() || param.dims() != velocity.dims() {
        return Err(Error::shape(
            "sgd_step",
            format!("{:?}", param.dims()),
            format!("grad {:?}, velocity {:?}", grad.dims(), velocity.dims()),
        ));
    }
    if grad.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sgd_step gradient".into()));
    }
    let p = param.data_mut();
    let v = velocity.data_mut();
    let g = grad.data();
    for i in 0..p.len() {
        v[i] = momentum * v[i] + g[i];
        p[i] -= lr * v[i];
    }
    Ok(())
}

/// SGD step over a whole layer (kernels + biases).
pub fn sgd_step_layer(
    params: &mut LayerParams,
    grads: &LayerGrads,
    velocity: &mut LayerGrads,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    sgd_step(&mut params.kernels, &grads.kernels, &mut velocity.kernels, lr, momentum)?;
    sgd_step(&mut params.biases, &grads.biases, &mut velocity.biases, lr, momentum)
}
