//! Array primitives shared by the ST-SSM workspace: dense real/complex
//! tensors, power-of-two FFTs, circular convolution, a compact binary
//! tensor format, and a reverse-mode differentiation tape.

pub mod fft;
pub mod gradcheck;
pub mod io;
pub mod tape;
pub mod tensor;

pub use fft::{circular_convolve, circular_convolve_complex, fft_1d, fft_axis, fft_axes};
pub use tape::{CustomOp, Gradients, ParamId, ParamStore, Tape, Var};
pub use tensor::{DType, Storage, Tensor};

pub use num_complex::Complex64;

/// Errors raised by array construction, transforms, and the tape.
#[derive(Debug, thiserror::Error)]
pub enum ArrayError {
    #[error("shape {shape:?} holds {expected} elements but {found} were supplied")]
    ShapeMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("FFT length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("expected a {expected:?} tensor, found {found:?}")]
    WrongDType { expected: DType, found: DType },
    #[error("loss must be a scalar, found shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("loss is not connected to any parameter")]
    Disconnected,
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("malformed tensor file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ArrayError>;
