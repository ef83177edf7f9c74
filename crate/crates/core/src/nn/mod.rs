//! A small dense-network engine: layers with batch normalization, multi-hot
//! BCE and MSE losses, reverse-mode gradients, SGD/Adam and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod network;
pub mod optim;
pub mod train;

pub use init::xavier_init;
pub use loss::{bce_loss, mse_loss, LossKind, LossOutput};
pub use network::{Activation, ForwardPass, Layer, Linear, Mode, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{train, TrainConfig, TrainReport};

/// One trainable tensor as seen by an optimizer.
pub struct ParamMut<'a> {
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
    /// Whether L2 weight decay applies.
    pub decay: bool,
}

/// Anything an [`Optimizer`] can update. Tensors must be visited in the same
/// order on every call.
pub trait Parameterized {
    fn visit_params(&mut self, f: &mut dyn FnMut(ParamMut<'_>));
}
