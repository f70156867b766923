//! Differentiable layer primitives. Each forward function is paired with an
//! explicit backward that takes the saved context it needs.

pub mod activation;
pub mod conv;
mod matmul;
pub mod norm;
pub mod pool;
pub mod dropout;

pub use activation::{relu, relu_backward, softmax2};
pub use conv::{
    conv_backward, conv_backward_input, conv_backward_weights, conv_forward, deconv2d_backward,
    deconv2d_forward, ConvGrads, ConvSpec,
};
pub use dropout::{dropout, dropout_backward, DropoutMask};
pub use norm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormGrads, BatchNormState, Mode};
pub use pool::{maxpool_spatial_backward, maxpool_spatial_forward, PoolIndices};
