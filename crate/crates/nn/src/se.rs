//! Squeeze-and-excitation block.

use ndarray::{s, Array2, Array4, ArrayD, Ix2, Ix4};
use rand_chacha::ChaCha8Rng;

use crate::{sigmoid_scalar, Dense, Layer, Param};

/// Channel attention: globally pool, squeeze through a bottleneck MLP
/// (swish, then sigmoid), and rescale the input per channel.
pub struct SqueezeExcite {
    reduce: Dense,
    expand: Dense,
    channels: usize,
    cache: Option<SeCache>,
}

struct SeCache {
    x: Array4<f32>,
    z1: Array2<f32>,
    gate: Array2<f32>,
}

impl SqueezeExcite {
    /// `reduced` is the bottleneck width (at least 1).
    pub fn new(name: &str, channels: usize, reduced: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(reduced >= 1, "se {name}: reduced width must be at least 1");
        SqueezeExcite {
            reduce: Dense::new(&format!("{name}.reduce"), channels, reduced, rng),
            expand: Dense::new(&format!("{name}.expand"), reduced, channels, rng),
            channels,
            cache: None,
        }
    }
}

impl Layer for SqueezeExcite {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x4 = x
            .into_dimensionality::<Ix4>()
            .expect("squeeze-excite input must be NCHW");
        let (n, c, h, w) = x4.dim();
        assert_eq!(c, self.channels, "squeeze-excite channels");
        let m = (h * w) as f64;

        let mut pooled = Array2::<f32>::zeros((n, c));
        for ni in 0..n {
            for ci in 0..c {
                let plane = x4.slice(s![ni, ci, .., ..]);
                let sum: f64 = plane.as_slice().unwrap().iter().map(|&v| v as f64).sum();
                pooled[[ni, ci]] = (sum / m) as f32;
            }
        }

        let z1 = self
            .reduce
            .forward(pooled.into_dyn(), train)
            .into_dimensionality::<Ix2>()
            .unwrap();
        let h1 = z1.mapv(|v| v * sigmoid_scalar(v));
        let z2 = self
            .expand
            .forward(h1.into_dyn(), train)
            .into_dimensionality::<Ix2>()
            .unwrap();
        let gate = z2.mapv(sigmoid_scalar);

        let mut y = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let g = gate[[ni, ci]];
                let xp = x4.slice(s![ni, ci, .., ..]);
                let mut yp = y.slice_mut(s![ni, ci, .., ..]);
                for (o, &v) in yp
                    .as_slice_mut()
                    .unwrap()
                    .iter_mut()
                    .zip(xp.as_slice().unwrap())
                {
                    *o = v * g;
                }
            }
        }
        if train {
            self.cache = Some(SeCache { x: x4, z1, gate });
        }
        y.into_dyn()
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let SeCache { x, z1, gate } = self
            .cache
            .take()
            .expect("squeeze-excite backward without forward(train)");
        let g4 = grad.into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = g4.dim();
        let hw = (h * w) as f32;

        // d(gate) and the pass-through part of dx.
        let mut dgate = Array2::<f32>::zeros((n, c));
        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let go = g4.slice(s![ni, ci, .., ..]);
                let xp = x.slice(s![ni, ci, .., ..]);
                let mut acc = 0.0f64;
                for (&gg, &xx) in go.as_slice().unwrap().iter().zip(xp.as_slice().unwrap()) {
                    acc += gg as f64 * xx as f64;
                }
                dgate[[ni, ci]] = acc as f32;
                let g = gate[[ni, ci]];
                let mut dxc = dx.slice_mut(s![ni, ci, .., ..]);
                for (o, &gg) in dxc
                    .as_slice_mut()
                    .unwrap()
                    .iter_mut()
                    .zip(go.as_slice().unwrap())
                {
                    *o = gg * g;
                }
            }
        }

        let dz2 = &dgate * &gate.mapv(|v| v * (1.0 - v));
        let dh1 = self
            .expand
            .backward(dz2.into_dyn())
            .into_dimensionality::<Ix2>()
            .unwrap();
        let dz1 = &dh1
            * &z1.mapv(|v| {
                let sv = sigmoid_scalar(v);
                sv * (1.0 + v * (1.0 - sv))
            });
        let dpooled = self
            .reduce
            .backward(dz1.into_dyn())
            .into_dimensionality::<Ix2>()
            .unwrap();

        for ni in 0..n {
            for ci in 0..c {
                let g = dpooled[[ni, ci]] / hw;
                let mut dxc = dx.slice_mut(s![ni, ci, .., ..]);
                for o in dxc.as_slice_mut().unwrap() {
                    *o += g;
                }
            }
        }
        dx.into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = self.reduce.params_mut();
        ps.extend(self.expand.params_mut());
        ps
    }
}
