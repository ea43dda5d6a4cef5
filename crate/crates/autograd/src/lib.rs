//! Dense-tensor reverse-mode automatic differentiation.
//!
//! A [`Tape`] records forward operations into an arena of nodes and replays
//! them in reverse to accumulate gradients. The op set is exactly what a
//! knowledge-embedded transformer needs: matmul, row softmax, layer norm,
//! concat/slice, and a handful of elementwise ops, all in f64.
//!
//! [`gradcheck::finite_diff_check`] provides the independent central-difference
//! oracle used throughout the test suites.

pub mod error;
pub mod gradcheck;
pub mod io;
pub mod tape;
pub mod tensor;

pub use error::{Result, TensorError};
pub use tape::{Gradients, Tape, ValueId, LAYER_NORM_EPS, LOG_CLAMP};
pub use tensor::Tensor;
