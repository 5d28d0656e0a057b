//! Fully connected layer.

use ndarray::{Array2, ArrayD, Ix2};
use rand_chacha::ChaCha8Rng;

use crate::{init, Layer, Param};

/// Dense layer `y = x W^T + b` over `[N, in]` inputs.
pub struct Dense {
    pub weight: Param,
    pub bias: Param,
    in_dim: usize,
    cache_x: Option<Array2<f32>>,
}

impl Dense {
    /// He-normal weights (pairs with ReLU-family activations).
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            init::he_normal(&[out_dim, in_dim], in_dim, rng),
        );
        Self::with_weight(name, in_dim, out_dim, weight)
    }

    /// Xavier-uniform weights (pairs with sigmoid/softmax heads).
    pub fn new_xavier(name: &str, in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            init::xavier_uniform(&[out_dim, in_dim], in_dim, out_dim, rng),
        );
        Self::with_weight(name, in_dim, out_dim, weight)
    }

    fn with_weight(name: &str, in_dim: usize, out_dim: usize, weight: Param) -> Self {
        Dense {
            weight,
            bias: Param::new(
                format!("{name}.bias"),
                ArrayD::zeros(ndarray::IxDyn(&[out_dim])),
            ),
            in_dim,
            cache_x: None,
        }
    }
}

impl Layer for Dense {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x2 = x
            .into_dimensionality::<Ix2>()
            .expect("dense input must be [N, features]");
        assert_eq!(
            x2.ncols(),
            self.in_dim,
            "dense {}: got {} features, expected {}",
            self.weight.name,
            x2.ncols(),
            self.in_dim
        );
        let w2 = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        let mut y = x2.dot(&w2.t());
        let bv = self.bias.value.as_slice().unwrap();
        for mut row in y.rows_mut() {
            for (v, &b) in row.iter_mut().zip(bv) {
                *v += b;
            }
        }
        if train {
            self.cache_x = Some(x2);
        }
        y.into_dyn()
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let x2 = self
            .cache_x
            .take()
            .expect("dense backward without forward(train)");
        let g2 = grad.into_dimensionality::<Ix2>().unwrap();
        let dw = g2.t().dot(&x2);
        {
            let mut wg = self.weight.grad.view_mut().into_dimensionality::<Ix2>().unwrap();
            wg += &dw;
        }
        {
            let bg = self.bias.grad.as_slice_mut().unwrap();
            for row in g2.rows() {
                for (b, &g) in bg.iter_mut().zip(row) {
                    *b += g;
                }
            }
        }
        let w2 = self.weight.value.view().into_dimensionality::<Ix2>().unwrap();
        g2.dot(&w2).into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
