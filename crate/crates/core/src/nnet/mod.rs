//! From-scratch U-Net: forward pass, exact backward pass, losses, Adam and
//! checkpoints.
//!
//! Encoder levels apply `convs_per_level` 3×3 convolutions + ReLU and a 2×2
//! max-pool; features double per level. The decoder upsamples bilinearly,
//! convolves, concatenates the matching encoder map and convolves again.
//! A 1×1 convolution produces the logits for a sigmoid (one class) or a
//! per-pixel softmax (three classes). All convolutions zero-pad to keep the
//! spatial size.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;
mod loss;
mod scalar;
mod unet;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{checksum, decode_params, encode_params, load_params, read_params, save_params};
pub use layers::Tensor;
pub use loss::{bce, bce_loss, cce_loss_siamese, siamese_cce, LossGrad, SiameseLossGrad, PROB_EPSILON};
pub use scalar::Scalar;
pub use unet::{
    backward, forward, unet_backward, unet_forward, ConvSpec, Gradients, Trace, UNetConfig,
    UNetParams, UpsampleMode,
};

/// Individual layer kernels, exposed for layer-level gradient checks.
pub mod kernels {
    pub use super::layers::{
        col2im, concat, conv_backward, conv_forward, im2col, maxpool_backward, maxpool_forward,
        relu_backward, relu_inplace, split, upsample_backward, upsample_forward,
    };
}
