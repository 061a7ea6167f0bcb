//! Dense tensors and a reverse-mode tape.
//!
//! Every operation records its output on a [`Tape`]; [`Tape::backward`]
//! walks the record once in reverse, accumulating gradients in a fixed order
//! so repeated runs are bit-identical.

mod real;
mod rng;
mod tape;
mod tensor;

pub use real::Real;
pub use rng::{kaiming_uniform, Rng};
pub use tape::{Elementwise, Gradients, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;
