//! Transposed convolution for learned upsampling.
//!
//! Restricted to `kernel == stride` (the only shape the decoders here use),
//! which makes every output pixel the target of exactly one input tap, so
//! the forward pass is a matrix product plus a disjoint scatter.

use ndarray::{s, Array2, Array4, ArrayD, Ix4};
use rand_chacha::ChaCha8Rng;

use crate::conv::{col2im_add, im2col};
use crate::{init, Layer, Param};

pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    cache_x: Option<ArrayD<f32>>,
}

impl ConvTranspose2d {
    /// Upsampling conv with `kernel == stride == k`; output is `k`x the input
    /// spatial size. Weight layout is `[in_ch, out_ch, k, k]`.
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = Param::new(
            format!("{name}.weight"),
            init::he_normal(&[in_ch, out_ch, k, k], in_ch, rng),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                ArrayD::zeros(ndarray::IxDyn(&[out_ch])),
            )
        });
        ConvTranspose2d {
            weight,
            bias,
            in_ch,
            out_ch,
            k,
            cache_x: None,
        }
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x4 = x
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv-transpose input must be NCHW");
        let (n, c, h, w) = x4.dim();
        assert_eq!(
            c, self.in_ch,
            "conv-transpose {}: got {c} input channels, expected {}",
            self.weight.name, self.in_ch
        );
        let (ho, wo) = (h * self.k, w * self.k);
        let l = h * w;
        let kk = self.out_ch * self.k * self.k;

        let mut out = Array4::<f32>::zeros((n, self.out_ch, ho, wo));
        let w_mat = self.weight.value.to_shape((self.in_ch, kk)).unwrap();
        for ni in 0..n {
            let xn = x4.slice(s![ni, .., .., ..]);
            let x_mat = xn.to_shape((self.in_ch, l)).unwrap();
            // y[(co,ki,kj), (ih,iw)] contributes to out[co, ih*k+ki, iw*k+kj]
            let y = w_mat.t().dot(&x_mat);
            let mut on = out.slice_mut(s![ni, .., .., ..]);
            col2im_add(&y, self.k, self.k, 0, h, w, &mut on);
            if let Some(b) = &self.bias {
                let bv = b.value.as_slice().unwrap();
                for (ci, mut plane) in on.outer_iter_mut().enumerate() {
                    let bc = bv[ci];
                    for v in plane.as_slice_mut().unwrap() {
                        *v += bc;
                    }
                }
            }
        }
        if train {
            self.cache_x = Some(x);
        }
        out.into_dyn()
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let x = self
            .cache_x
            .take()
            .expect("conv-transpose backward without forward(train)");
        let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
        let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
        let (n, _, h, w) = x4.dim();
        let l = h * w;
        let kk = self.out_ch * self.k * self.k;

        let mut dx = Array4::<f32>::zeros((n, self.in_ch, h, w));
        let mut dy = Array2::<f32>::zeros((kk, l));
        for ni in 0..n {
            let gn = g4.slice(s![ni, .., .., ..]);
            // Gathering the output gradient with the same taps inverts the
            // forward scatter exactly (taps are disjoint when k == stride).
            im2col(&gn, self.k, self.k, 0, h, w, &mut dy);
            let xn = x4.slice(s![ni, .., .., ..]);
            let x_mat = xn.to_shape((self.in_ch, l)).unwrap();
            let dw = x_mat.dot(&dy.t());
            for (d, sv) in self
                .weight
                .grad
                .as_slice_mut()
                .unwrap()
                .iter_mut()
                .zip(dw.as_slice().unwrap())
            {
                *d += *sv;
            }
            let w_mat = self.weight.value.to_shape((self.in_ch, kk)).unwrap();
            let dxm = w_mat.dot(&dy);
            let mut dxn = dx.slice_mut(s![ni, .., .., ..]);
            dxn.as_slice_mut()
                .unwrap()
                .copy_from_slice(dxm.as_slice().unwrap());
        }
        if let Some(b) = &mut self.bias {
            let bg = b.grad.as_slice_mut().unwrap();
            for ni in 0..n {
                for ci in 0..self.out_ch {
                    let plane = g4.slice(s![ni, ci, .., ..]);
                    bg[ci] += plane.as_slice().unwrap().iter().sum::<f32>();
                }
            }
        }
        dx.into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut ps = vec![&mut self.weight];
        if let Some(b) = &mut self.bias {
            ps.push(b);
        }
        ps
    }
}
