//! Complex dense matrices, parameters, and the gradient tape.

mod checkpoint;
mod matrix;
mod param;
mod tape;

pub use checkpoint::{
    decode_params, encode_params, load_params, payload_bytes, save_params, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use matrix::{ComplexMatrix, Matrix};
pub use param::{ParamId, ParamStore, Parameter};
pub use tape::{
    capply_activation, cdropout, cmagnitude, cmatmul, cmul_elementwise, softmax_rows, Activation,
    Gradients, Tape, Var, LEAKY_SLOPE,
};

#[cfg(test)]
pub(crate) use tape::CORRUPT_MATMUL_BACKWARD;
