//! Inverted dropout with an owned, seeded RNG.

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::Layer;

/// Inverted dropout: surviving activations are scaled by `1 / (1 - p)` so
/// eval mode is the identity. The layer owns its RNG, making the mask
/// sequence a pure function of the seed it was built with.
pub struct Dropout {
    p: f32,
    rng: ChaCha8Rng,
    mask: Option<ArrayD<f32>>,
}

impl Dropout {
    pub fn new(p: f32, rng: ChaCha8Rng) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout {
            p,
            rng,
            mask: None,
        }
    }
}

impl Layer for Dropout {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        if !train || self.p == 0.0 {
            self.mask = None;
            return x;
        }
        let keep = 1.0 - self.p;
        let scale = 1.0 / keep;
        let p = self.p;
        let rng = &mut self.rng;
        let mask = ArrayD::from_shape_fn(x.raw_dim(), |_| {
            if rng.gen::<f32>() >= p {
                scale
            } else {
                0.0
            }
        });
        let y = &x * &mask;
        self.mask = Some(mask);
        y
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        match self.mask.take() {
            Some(mask) => grad * &mask,
            None => grad,
        }
    }
}
