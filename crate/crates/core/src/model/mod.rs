//! Minimal differentiable 3D convolutional models.
//!
//! A model is a flat list of layers over a small op vocabulary (3x3x3 and
//! 1x1x1 convolutions, leaky ReLU, 2x max-pool, nearest upsample, channel
//! concat, per-channel affine, instance norm, global average pool, sigmoid).
//! Forward keeps every intermediate value; backward walks the list in
//! reverse. Everything is generic over f32/f64: training runs in 32-bit,
//! gradient checks in 64-bit.

mod adam;
mod checkpoint;
mod gradcheck;
mod layers;
mod losses;
mod net;
mod spec;
mod tensor;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::grad_check;
pub use losses::{adversarial_losses, dice_loss, dice_loss_backward, AdvLosses, D_CLAMP_EPS};
pub use net::{backward, forward, init_params, ForwardCache, ModelParams, Param};
pub use spec::{discriminator_spec, unet_spec, LayerKind, LayerSpec, ModelSpec, NormKind};
pub use tensor::{Scalar, Tensor};
