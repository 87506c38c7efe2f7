//! Dense real tensors with a define-by-run reverse-mode tape.
//!
//! ```
//! use svsr_tensor::{Tape, Tensor};
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.param(Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap());
//! let loss = x.square().sum();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

#![allow(clippy::should_implement_trait)]

mod error;
pub mod gradcheck;
mod ops;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::{correlate_planes, pad_planes, unpad_add, Padding};
pub use ops::elementwise::{sigmoid, softplus, softplus_inv};
pub use ops::fft::ComplexVar;
pub use real::{Real, View};
pub use tape::{BackwardFn, Tape, Var};
pub use tensor::Tensor;
