//! 2-D convolution via im2col + matrix multiply.
//!
//! Grouped convolution is supported (`groups == in_channels` gives a
//! depthwise conv). The im2col buffer is rebuilt in `backward` instead of
//! cached, trading FLOPs for memory so deep stacks fit on small machines.

use ndarray::{s, Array2, Array4, ArrayD, ArrayView3, ArrayViewMut3, Axis, Ix4};
use rand_chacha::ChaCha8Rng;

use crate::{init, Layer, Param};

pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_ch: usize,
    out_ch: usize,
    k: usize,
    stride: usize,
    padding: usize,
    groups: usize,
    cache_x: Option<ArrayD<f32>>,
}

impl Conv2d {
    /// Square-kernel convolution with He-normal weights and zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        padding: usize,
        groups: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(groups >= 1, "groups must be at least 1");
        assert!(
            in_ch % groups == 0 && out_ch % groups == 0,
            "conv {name}: channels ({in_ch} -> {out_ch}) must be divisible by groups ({groups})"
        );
        let c_in_g = in_ch / groups;
        let fan_in = c_in_g * k * k;
        let weight = Param::new(
            format!("{name}.weight"),
            init::he_normal(&[out_ch, c_in_g, k, k], fan_in, rng),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{name}.bias"),
                ArrayD::zeros(ndarray::IxDyn(&[out_ch])),
            )
        });
        Conv2d {
            weight,
            bias,
            in_ch,
            out_ch,
            k,
            stride,
            padding,
            groups,
            cache_x: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.k) / self.stride + 1,
            (w + 2 * self.padding - self.k) / self.stride + 1,
        )
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x4 = x
            .view()
            .into_dimensionality::<Ix4>()
            .expect("conv input must be NCHW");
        let (n, c, h, w) = x4.dim();
        assert_eq!(
            c, self.in_ch,
            "conv {}: got {c} input channels, expected {}",
            self.weight.name, self.in_ch
        );
        let (ho, wo) = self.out_hw(h, w);
        let l = ho * wo;
        let c_in_g = self.in_ch / self.groups;
        let c_out_g = self.out_ch / self.groups;
        let kk = c_in_g * self.k * self.k;

        let mut out = Array4::<f32>::zeros((n, self.out_ch, ho, wo));
        let mut cols = Array2::<f32>::zeros((kk, l));
        let w_all = self.weight.value.view().into_dimensionality::<Ix4>().unwrap();
        for ni in 0..n {
            for g in 0..self.groups {
                let xg = x4.slice(s![ni, g * c_in_g..(g + 1) * c_in_g, .., ..]);
                im2col(&xg, self.k, self.stride, self.padding, ho, wo, &mut cols);
                let wg = w_all.slice(s![g * c_out_g..(g + 1) * c_out_g, .., .., ..]);
                let wg2 = wg.to_shape((c_out_g, kk)).unwrap();
                let prod = wg2.dot(&cols);
                let mut og = out.slice_mut(s![ni, g * c_out_g..(g + 1) * c_out_g, .., ..]);
                og.as_slice_mut()
                    .unwrap()
                    .copy_from_slice(prod.as_slice().unwrap());
            }
            if let Some(b) = &self.bias {
                let bv = b.value.as_slice().unwrap();
                let mut on = out.index_axis_mut(Axis(0), ni);
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
            .expect("conv backward without forward(train)");
        let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
        let g4 = grad.view().into_dimensionality::<Ix4>().unwrap();
        let (n, _, h, w) = x4.dim();
        let (_, _, ho, wo) = g4.dim();
        let l = ho * wo;
        let c_in_g = self.in_ch / self.groups;
        let c_out_g = self.out_ch / self.groups;
        let kk = c_in_g * self.k * self.k;

        let mut dx = Array4::<f32>::zeros((n, self.in_ch, h, w));
        let mut cols = Array2::<f32>::zeros((kk, l));
        for ni in 0..n {
            for g in 0..self.groups {
                let xg = x4.slice(s![ni, g * c_in_g..(g + 1) * c_in_g, .., ..]);
                im2col(&xg, self.k, self.stride, self.padding, ho, wo, &mut cols);
                let dout_g = g4.slice(s![ni, g * c_out_g..(g + 1) * c_out_g, .., ..]);
                let dout2 = dout_g.to_shape((c_out_g, l)).unwrap();
                let dw = dout2.dot(&cols.t());
                {
                    let mut grad4 = self
                        .weight
                        .grad
                        .view_mut()
                        .into_dimensionality::<Ix4>()
                        .unwrap();
                    let mut wslice =
                        grad4.slice_mut(s![g * c_out_g..(g + 1) * c_out_g, .., .., ..]);
                    for (d, sv) in wslice
                        .as_slice_mut()
                        .unwrap()
                        .iter_mut()
                        .zip(dw.as_slice().unwrap())
                    {
                        *d += *sv;
                    }
                }
                let w_all = self.weight.value.view().into_dimensionality::<Ix4>().unwrap();
                let wg = w_all.slice(s![g * c_out_g..(g + 1) * c_out_g, .., .., ..]);
                let wg2 = wg.to_shape((c_out_g, kk)).unwrap();
                let dcols = wg2.t().dot(&dout2);
                let mut dxg = dx.slice_mut(s![ni, g * c_in_g..(g + 1) * c_in_g, .., ..]);
                col2im_add(&dcols, self.k, self.stride, self.padding, ho, wo, &mut dxg);
            }
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

/// Gather `x` ([C, H, W]) into column matrix `cols` ([C*k*k, h_out*w_out])
/// with zero padding. Out-of-range taps stay zero.
pub(crate) fn im2col(
    x: &ArrayView3<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    cols: &mut Array2<f32>,
) {
    let (c_n, h, w) = x.dim();
    debug_assert_eq!(cols.dim(), (c_n * k * k, h_out * w_out));
    cols.fill(0.0);
    for c in 0..c_n {
        let plane = x.index_axis(Axis(0), c);
        for ki in 0..k {
            for kj in 0..k {
                let mut row = cols.row_mut((c * k + ki) * k + kj);
                let rs = row.as_slice_mut().unwrap();
                for oh in 0..h_out {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let src = plane.row(ih as usize);
                    let ss = src.as_slice().unwrap();
                    let base = oh * w_out;
                    if stride == 1 {
                        let shift = kj as isize - pad as isize;
                        let ow_start = (-shift).max(0) as usize;
                        let ow_end = (w as isize - shift).clamp(0, w_out as isize) as usize;
                        if ow_start < ow_end {
                            let iw0 = (ow_start as isize + shift) as usize;
                            rs[base + ow_start..base + ow_end]
                                .copy_from_slice(&ss[iw0..iw0 + (ow_end - ow_start)]);
                        }
                    } else {
                        for ow in 0..w_out {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw >= 0 && iw < w as isize {
                                rs[base + ow] = ss[iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the transpose of [`im2col`]: accumulate column gradients
/// back onto the input-shaped view `dx` ([C, H, W]).
pub(crate) fn col2im_add(
    cols: &Array2<f32>,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    dx: &mut ArrayViewMut3<f32>,
) {
    let (c_n, h, w) = dx.dim();
    debug_assert_eq!(cols.dim(), (c_n * k * k, h_out * w_out));
    for c in 0..c_n {
        let mut plane = dx.index_axis_mut(Axis(0), c);
        for ki in 0..k {
            for kj in 0..k {
                let row = cols.row((c * k + ki) * k + kj);
                let rs = row.as_slice().unwrap();
                for oh in 0..h_out {
                    let ih = (oh * stride + ki) as isize - pad as isize;
                    if ih < 0 || ih >= h as isize {
                        continue;
                    }
                    let base = oh * w_out;
                    let mut prow = plane.row_mut(ih as usize);
                    let ps = prow.as_slice_mut().unwrap();
                    if stride == 1 {
                        let shift = kj as isize - pad as isize;
                        let ow_start = (-shift).max(0) as usize;
                        let ow_end = (w as isize - shift).clamp(0, w_out as isize) as usize;
                        if ow_start < ow_end {
                            let iw0 = (ow_start as isize + shift) as usize;
                            for (d, sv) in ps[iw0..iw0 + (ow_end - ow_start)]
                                .iter_mut()
                                .zip(&rs[base + ow_start..base + ow_end])
                            {
                                *d += *sv;
                            }
                        }
                    } else {
                        for ow in 0..w_out {
                            let iw = (ow * stride + kj) as isize - pad as isize;
                            if iw >= 0 && iw < w as isize {
                                ps[iw as usize] += rs[base + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}
