//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operations needed by small convolutional and recurrent text
//! classifiers are provided: matrix products, same/valid 1-D convolution,
//! max pooling, pointwise activations, inverted dropout, embedding lookup,
//! GRU layers, reductions and binary cross-entropy. Each operation records
//! a node on a [`Tape`]; [`Tape::backward`] walks the nodes in reverse.
//!
//! ```
//! use autodiff::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let w = tape.leaf(Tensor::from_rows(&[&[0.0]]).unwrap());
//! let x = tape.leaf(Tensor::from_rows(&[&[1.0]]).unwrap());
//! let wx = tape.matmul(w, x).unwrap();
//! let p = tape.sigmoid(wx);
//! let loss = tape.sum(p);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[0.25]);
//! ```

mod adam;
mod error;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use error::{AutodiffError, Result};
pub use tape::{dropout_mask, sigmoid, Activation, GruOutput, GruParams, Mode, Tape, Var};
pub use tensor::Tensor;
