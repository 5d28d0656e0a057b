//! Deterministic CPU neural-network building blocks.
//!
//! Everything here is seeded explicitly: weight init, dropout masks, and
//! data order all derive from caller-supplied RNGs, so two runs with the
//! same seed produce bit-identical parameter trajectories. Convolutions
//! go through im2col + sgemm; gradients are computed layer by layer with
//! cached forward state (no tape).

pub mod act;
pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod convt;
pub mod dense;
pub mod dropout;
pub mod init;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod se;
pub mod sequential;

use ndarray::ArrayD;
use thiserror::Error;

pub use act::{ReLU, SigmoidLayer, Swish};
pub use adam::Adam;
pub use checkpoint::Checkpoint;
pub use conv::Conv2d;
pub use convt::ConvTranspose2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use norm::{BatchNorm2d, GroupNorm, NormKind};
pub use pool::GlobalAvgPool;
pub use se::SqueezeExcite;
pub use sequential::Sequential;

pub type NnResult<T> = Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid argument: {0}")]
    InvalidArg(String),
    #[error("checkpoint io error at {path}: {source}")]
    CheckpointIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint format error at {path}: {msg}")]
    CheckpointFormat { path: String, msg: String },
    #[error("checkpoint does not fit model: {0}")]
    CheckpointMismatch(String),
}

/// A trainable tensor with its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: ArrayD<f32>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Param {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// One differentiable computation step.
///
/// `forward` caches whatever state `backward` needs; `backward` consumes
/// that state and accumulates parameter gradients into [`Param::grad`].
/// Layers operate on dynamic-rank arrays so rank-changing steps (pooling,
/// dense heads) compose in one container.
pub trait Layer {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32>;
    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32>;

    /// Trainable parameters, in a construction-stable order.
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    /// Non-trainable state (e.g. batch-norm running statistics).
    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
}

/// Anything whose parameters can be optimized and checkpointed.
pub trait Model {
    fn params_mut(&mut self) -> Vec<&mut Param>;
    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.value.len()).sum()
    }
}

impl Model for Sequential {
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Layer::params_mut(self)
    }
    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        Layer::buffers_mut(self)
    }
}

pub(crate) fn sigmoid_scalar(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable elementwise logistic function.
pub fn sigmoid(x: &ArrayD<f32>) -> ArrayD<f32> {
    x.mapv(sigmoid_scalar)
}
