//! Minimal convolutional network toolkit: layers with explicit backward
//! passes, losses and optimizers, all generic over [`Scalar`](crate::Scalar).

mod loss;
mod net;
mod optim;
mod tensor;

pub use loss::{argmax_columns, softmax_cross_entropy};
pub use net::{Cache, Layer, Net, NetBuilder, Tape};
pub use optim::{Adam, AdamConfig, Sgd};
pub use tensor::Tensor;
