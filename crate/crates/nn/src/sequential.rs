//! Ordered container of layers.

use ndarray::ArrayD;

use crate::{Layer, Param};

/// Runs layers in order; backward runs them in reverse. Parameter order is
/// construction order, which keeps checkpoints stable.
#[derive(Default)]
pub struct Sequential {
    layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Layer + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn push_boxed(&mut self, layer: Box<dyn Layer>) {
        self.layers.push(layer);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Layer for Sequential {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        self.layers
            .iter_mut()
            .fold(x, |h, layer| layer.forward(h, train))
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        self.layers
            .iter_mut()
            .rev()
            .fold(grad, |g, layer| layer.backward(g))
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.buffers_mut())
            .collect()
    }
}
