//! A compact reverse-mode automatic differentiation engine over dense `f64`
//! tensors: enough convolution, attention, FFT and sparse machinery to train
//! small segmentation networks on the CPU and to check their gradients by
//! finite differences.

mod error;
pub mod gradcheck;
mod ops;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::conv::{resize_bilinear, Conv2dOptions};
pub use ops::fft::fft2_raw;
pub use ops::sparse::CsrMatrix;
pub use rustfft::FftDirection;
pub use tape::{Gradients, NodeLabel, ScopeGuard, Tape, Var};
pub use tensor::{broadcast_shape, Tensor};
