//! CPU tensors, layers with reverse-mode gradients, loss, SGD and
//! checkpoints.

pub mod checkpoint;
mod layers;
mod loss;
pub mod ops;
mod params;
mod tensor;

pub use checkpoint::{
    architecture_fingerprint, load_checkpoint, restore_into, save_checkpoint, Checkpoint,
};
pub use layers::{
    backward_all, forward_all, Conv2d, Layer, LayerKind, LayerSpec, Linear, MaxPool2d, Residual,
    Tape,
};
pub use loss::{softmax_xent_logit_grad, xent_l2_loss, LossOutput, PROB_FLOOR};
pub use ops::{softmax, Padding};
pub use params::{L2Mode, Param, ParamId, ParamStore};
pub use tensor::{Scalar, Tensor};

/// In-place SGD update `α ← α − δ·∇α`.
pub fn sgd_step<T: Scalar>(params: &mut ParamStore<T>, lr: T) {
    params.sgd_step(lr);
}
