//! Pooling layers.

use ndarray::{s, Array2, ArrayD, Ix4};

use crate::Layer;

/// Global average pooling: `[N, C, H, W]` -> `[N, C]`.
#[derive(Default)]
pub struct GlobalAvgPool {
    cache_hw: Option<(usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Layer for GlobalAvgPool {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x4 = x
            .into_dimensionality::<Ix4>()
            .expect("global avg pool input must be NCHW");
        let (n, c, h, w) = x4.dim();
        let m = (h * w) as f64;
        let mut y = Array2::<f32>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let plane = x4.slice(s![ni, ci, .., ..]);
                let sum: f64 = plane.as_slice().unwrap().iter().map(|&v| v as f64).sum();
                y[[ni, ci]] = (sum / m) as f32;
            }
        }
        if train {
            self.cache_hw = Some((h, w));
        }
        y.into_dyn()
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let (h, w) = self
            .cache_hw
            .take()
            .expect("global avg pool backward without forward(train)");
        let g2 = grad.into_dimensionality::<ndarray::Ix2>().unwrap();
        let (n, c) = g2.dim();
        let scale = 1.0 / (h * w) as f32;
        let mut dx = ndarray::Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = g2[[ni, ci]] * scale;
                dx.slice_mut(s![ni, ci, .., ..]).fill(g);
            }
        }
        dx.into_dyn()
    }
}
