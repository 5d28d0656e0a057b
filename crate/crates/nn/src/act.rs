//! Elementwise activation layers.

use ndarray::ArrayD;

use crate::{sigmoid_scalar, Layer};

/// Rectified linear unit.
#[derive(Default)]
pub struct ReLU {
    mask: Option<ArrayD<f32>>,
}

impl ReLU {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for ReLU {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let mask = self.mask.take().expect("ReLU backward without forward");
        grad * &mask
    }
}

/// Swish / SiLU: `x * sigmoid(x)`.
#[derive(Default)]
pub struct Swish {
    cache_x: Option<ArrayD<f32>>,
}

impl Swish {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for Swish {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let y = x.mapv(|v| v * sigmoid_scalar(v));
        if train {
            self.cache_x = Some(x);
        }
        y
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let x = self.cache_x.take().expect("Swish backward without forward");
        let dydx = x.mapv(|v| {
            let s = sigmoid_scalar(v);
            s * (1.0 + v * (1.0 - s))
        });
        grad * &dydx
    }
}

/// Logistic activation layer (kept separate from the loss for inference heads).
#[derive(Default)]
pub struct SigmoidLayer {
    cache_y: Option<ArrayD<f32>>,
}

impl SigmoidLayer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for SigmoidLayer {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let y = x.mapv(sigmoid_scalar);
        if train {
            self.cache_y = Some(y.clone());
        }
        y
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let y = self
            .cache_y
            .take()
            .expect("Sigmoid backward without forward");
        let dydx = y.mapv(|v| v * (1.0 - v));
        grad * &dydx
    }
}
