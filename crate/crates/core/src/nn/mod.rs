//! Convolutional network primitives: layer kernels, the layer-stack spec and
//! a trainable [`Network`].

mod network;
pub mod ops;
mod spec;

pub use network::{param_slots, ForwardTrace, Network, OutputGrad, Param};
pub use ops::{
    conv2d_backward, conv2d_forward, dense_forward, dropout_forward, maxpool_backward, maxpool_forward,
    predict_class, relu, softmax, ConvGrads, Mode,
};
pub use spec::{Activation, LayerSpec, NetworkSpec, ParamCounts, CONV_BLOCK_DROPOUT, DENSE_DROPOUT};
