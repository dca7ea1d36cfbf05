//! Convolutional regression surrogate `(V̂, -log2 h, theta) -> rho`.
//!
//! Conv layer `i`: one zero-padded 3x3 convolution with ReLU, `D_i - 1`
//! unpadded 3x3 convolutions with ReLU, 2x2 max pooling, then dropout at
//! train time. The flattened features go through `O` ReLU units, get the
//! two scalars appended, pass `D_3` ReLU layers of width `W_3` and end in a
//! single linear unit.
//!
//! All parameters live in one flat vector. For every convolution the kernel
//! `[out][in][3][3]` is followed by its bias `[out]`; every dense layer
//! stores its weight `[out][in]` then its bias `[out]`, in forward order.

mod io;
mod net;
mod train;

pub use io::{load_model, save_model, SurrogateModel, MODEL_MAGIC, MODEL_VERSION};
pub use net::{Cache, ConvSpec, Network, NetworkConfig};
pub use train::{
    adam_step, loss_mse, metric_mae, train, AdamState, EpochRecord, Example, TrainHistory,
    TrainOptions, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
