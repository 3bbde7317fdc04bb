//! Tensor engine: dense arrays, a reverse-mode tape, Adam, the checkpoint
//! container and a finite-difference gradient oracle.

mod adam;
mod array;
mod checkpoint;
mod gradcheck;
pub mod kernels;
mod params;
mod scalar;
mod tape;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use array::Tensor;
pub use checkpoint::{
    load_checkpoint, load_into, read_checkpoint, save_checkpoint, write_checkpoint,
    CHECKPOINT_MAGIC,
};
pub use gradcheck::{grad_check, grad_check_params, grad_check_sampled};
pub use kernels::ConvGeom;
pub use params::ParamStore;
pub use scalar::Scalar;
pub use tape::{softmax_values, Gradients, Tape, Var};

#[cfg(test)]
mod tests;
