//! The ST-SSM neural operator: diagonal state-space kernels, spatial and
//! spectral convolution layers, the field-of-view check, the full
//! space-time model and a small training harness.
//!
//! Hidden activations are channel-last `[batch, time, x, y, channels]`
//! tensors; 1D problems carry a singleton `y` axis.

pub mod fov;
pub mod layers;
pub mod model;
pub mod params;
pub mod ssm;
pub mod train;

pub use stssm_array as array;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("step size must be positive and finite, got {0}")]
    NonPositiveStep(f64),
    #[error("unstable mode {mode} in channel {channel}: Re(lambda) = {re}")]
    Unstable { channel: usize, mode: usize, re: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("mode cutoff {modes} exceeds half the extent {extent}")]
    ModesTooLarge { modes: usize, extent: usize },
    #[error("layer list is empty")]
    EmptyLayers,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite values: {0}")]
    NonFinite(String),
    #[error("horizon must be at least one step")]
    ZeroHorizon,
    #[error("data range is degenerate (max == min)")]
    DegenerateRange,
    #[error("reference field has zero norm")]
    ZeroReference,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Array(#[from] stssm_array::ArrayError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
