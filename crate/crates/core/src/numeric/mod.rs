//! Dense numeric layer: matrices, the split MLP, cross-entropy and SGD.

mod loss;
mod matrix;
mod model;
mod optim;

pub use loss::cross_entropy;
pub use matrix::Matrix;
pub use model::{
    backward, init_model, Activation, Batch, Dense, ForwardPass, Gradients, LayerGrad, Model,
};
pub use optim::{sgd_step, OptimizerState};
