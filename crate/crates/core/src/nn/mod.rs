//! Differentiable network layers built on the tape.

pub mod check;
mod conv;
mod convlstm;
mod init;
mod layers;
mod pool;

pub use conv::{conv3d, Conv3dParams, Padding};
pub use convlstm::{convlstm2d, ConvLstmParams, GATES};
pub use init::glorot_uniform;
pub use layers::{bce_loss, dense, dropout, flatten, relu, sigmoid, DenseParams, BCE_EPSILON};
pub use pool::{maxpool3d, pooled_extents};

pub(crate) use crate::tensor::tape_sigmoid;
