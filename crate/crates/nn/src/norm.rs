//! Group and batch normalization with f64 statistics.

use ndarray::{s, Array2, Array4, ArrayD, Ix4};

use crate::{Layer, Param};

/// Largest divisor of `channels` that does not exceed 32. This is the
/// group count used when substituting group norm into batch-norm slots,
/// so small channel widths still normalize over a valid partition.
pub fn auto_groups(channels: usize) -> usize {
    assert!(channels > 0, "channels must be positive");
    (1..=channels.min(32))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

struct GnCache {
    xhat: Array4<f32>,
    inv_std: Array2<f64>,
}

/// Group normalization over `[N, C, H, W]` inputs. Statistics are computed
/// per sample and group, so train and eval behave identically and results
/// do not depend on batch composition.
pub struct GroupNorm {
    pub gamma: Param,
    pub beta: Param,
    groups: usize,
    channels: usize,
    eps: f64,
    cache: Option<GnCache>,
}

impl GroupNorm {
    pub fn new(name: &str, channels: usize, groups: usize) -> Self {
        assert!(
            groups >= 1 && channels % groups == 0,
            "group norm {name}: {channels} channels not divisible into {groups} groups"
        );
        GroupNorm {
            gamma: Param::new(
                format!("{name}.gamma"),
                ArrayD::ones(ndarray::IxDyn(&[channels])),
            ),
            beta: Param::new(
                format!("{name}.beta"),
                ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            groups,
            channels,
            eps: 1e-5,
            cache: None,
        }
    }

    /// Group norm with the [`auto_groups`] group count.
    pub fn auto(name: &str, channels: usize) -> Self {
        Self::new(name, channels, auto_groups(channels))
    }

    pub fn groups(&self) -> usize {
        self.groups
    }
}

impl Layer for GroupNorm {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x4 = x
            .into_dimensionality::<Ix4>()
            .expect("group norm input must be NCHW");
        let (n, c, h, w) = x4.dim();
        assert_eq!(c, self.channels, "group norm {}: channels", self.gamma.name);
        let cg = c / self.groups;
        let m = (cg * h * w) as f64;

        let mut xhat = Array4::<f32>::zeros((n, c, h, w));
        let mut inv_std = Array2::<f64>::zeros((n, self.groups));
        for ni in 0..n {
            for g in 0..self.groups {
                let xg = x4.slice(s![ni, g * cg..(g + 1) * cg, .., ..]);
                let xs = xg.as_slice().unwrap();
                let mean = xs.iter().map(|&v| v as f64).sum::<f64>() / m;
                let var = xs
                    .iter()
                    .map(|&v| {
                        let d = v as f64 - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / m;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[[ni, g]] = istd;
                let mut hg = xhat.slice_mut(s![ni, g * cg..(g + 1) * cg, .., ..]);
                for (o, &v) in hg.as_slice_mut().unwrap().iter_mut().zip(xs) {
                    *o = ((v as f64 - mean) * istd) as f32;
                }
            }
        }

        let gv = self.gamma.value.as_slice().unwrap();
        let bv = self.beta.value.as_slice().unwrap();
        let mut y = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for ci in 0..c {
                let hs = xhat.slice(s![ni, ci, .., ..]);
                let mut ys = y.slice_mut(s![ni, ci, .., ..]);
                let (gc, bc) = (gv[ci], bv[ci]);
                for (o, &v) in ys
                    .as_slice_mut()
                    .unwrap()
                    .iter_mut()
                    .zip(hs.as_slice().unwrap())
                {
                    *o = gc * v + bc;
                }
            }
        }
        if train {
            self.cache = Some(GnCache { xhat, inv_std });
        }
        y.into_dyn()
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let GnCache { xhat, inv_std } = self
            .cache
            .take()
            .expect("group norm backward without forward(train)");
        let g4 = grad.into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = g4.dim();
        let cg = c / self.groups;
        let m = (cg * h * w) as f64;
        let gv = self.gamma.value.as_slice().unwrap();

        // Parameter gradients, accumulated per channel in f64.
        {
            let dgamma = self.gamma.grad.as_slice_mut().unwrap();
            let dbeta = self.beta.grad.as_slice_mut().unwrap();
            for ci in 0..c {
                let mut dg = 0.0f64;
                let mut db = 0.0f64;
                for ni in 0..n {
                    let go = g4.slice(s![ni, ci, .., ..]);
                    let xh = xhat.slice(s![ni, ci, .., ..]);
                    for (&gg, &xx) in go
                        .as_slice()
                        .unwrap()
                        .iter()
                        .zip(xh.as_slice().unwrap())
                    {
                        dg += gg as f64 * xx as f64;
                        db += gg as f64;
                    }
                }
                dgamma[ci] += dg as f32;
                dbeta[ci] += db as f32;
            }
        }

        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        for ni in 0..n {
            for g in 0..self.groups {
                // dxhat = dout * gamma (per channel); reduce within the group.
                let mut sum1 = 0.0f64;
                let mut sum2 = 0.0f64;
                for ci in g * cg..(g + 1) * cg {
                    let go = g4.slice(s![ni, ci, .., ..]);
                    let xh = xhat.slice(s![ni, ci, .., ..]);
                    let gc = gv[ci] as f64;
                    for (&gg, &xx) in go
                        .as_slice()
                        .unwrap()
                        .iter()
                        .zip(xh.as_slice().unwrap())
                    {
                        let dxh = gg as f64 * gc;
                        sum1 += dxh;
                        sum2 += dxh * xx as f64;
                    }
                }
                let istd = inv_std[[ni, g]];
                for ci in g * cg..(g + 1) * cg {
                    let go = g4.slice(s![ni, ci, .., ..]);
                    let xh = xhat.slice(s![ni, ci, .., ..]);
                    let mut dxc = dx.slice_mut(s![ni, ci, .., ..]);
                    let gc = gv[ci] as f64;
                    for ((o, &gg), &xx) in dxc
                        .as_slice_mut()
                        .unwrap()
                        .iter_mut()
                        .zip(go.as_slice().unwrap())
                        .zip(xh.as_slice().unwrap())
                    {
                        let dxh = gg as f64 * gc;
                        *o = (istd * (dxh - (sum1 + xx as f64 * sum2) / m)) as f32;
                    }
                }
            }
        }
        dx.into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

struct BnCache {
    xhat: Array4<f32>,
    inv_std: Vec<f64>,
}

/// Batch normalization over `[N, C, H, W]` with running statistics for eval.
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    momentum: f64,
    eps: f64,
    channels: usize,
    cache: Option<BnCache>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(
                format!("{name}.gamma"),
                ArrayD::ones(ndarray::IxDyn(&[channels])),
            ),
            beta: Param::new(
                format!("{name}.beta"),
                ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            running_mean: Param::new(
                format!("{name}.running_mean"),
                ArrayD::zeros(ndarray::IxDyn(&[channels])),
            ),
            running_var: Param::new(
                format!("{name}.running_var"),
                ArrayD::ones(ndarray::IxDyn(&[channels])),
            ),
            momentum: 0.1,
            eps: 1e-5,
            channels,
            cache: None,
        }
    }
}

impl Layer for BatchNorm2d {
    fn forward(&mut self, x: ArrayD<f32>, train: bool) -> ArrayD<f32> {
        let x4 = x
            .into_dimensionality::<Ix4>()
            .expect("batch norm input must be NCHW");
        let (n, c, h, w) = x4.dim();
        assert_eq!(c, self.channels, "batch norm {}: channels", self.gamma.name);
        let m = (n * h * w) as f64;
        let gv = self.gamma.value.as_slice().unwrap();
        let bv = self.beta.value.as_slice().unwrap();

        let mut y = Array4::<f32>::zeros((n, c, h, w));
        if train {
            let mut xhat = Array4::<f32>::zeros((n, c, h, w));
            let mut inv_std = vec![0.0f64; c];
            for ci in 0..c {
                let mut sum = 0.0f64;
                for ni in 0..n {
                    let plane = x4.slice(s![ni, ci, .., ..]);
                    sum += plane.as_slice().unwrap().iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / m;
                let mut sq = 0.0f64;
                for ni in 0..n {
                    let plane = x4.slice(s![ni, ci, .., ..]);
                    for &v in plane.as_slice().unwrap() {
                        let d = v as f64 - mean;
                        sq += d * d;
                    }
                }
                let var = sq / m;
                let istd = 1.0 / (var + self.eps).sqrt();
                inv_std[ci] = istd;
                for ni in 0..n {
                    let plane = x4.slice(s![ni, ci, .., ..]);
                    let mut hp = xhat.slice_mut(s![ni, ci, .., ..]);
                    let mut yp = y.slice_mut(s![ni, ci, .., ..]);
                    let (gc, bc) = (gv[ci], bv[ci]);
                    for ((o, yo), &v) in hp
                        .as_slice_mut()
                        .unwrap()
                        .iter_mut()
                        .zip(yp.as_slice_mut().unwrap())
                        .zip(plane.as_slice().unwrap())
                    {
                        let xh = ((v as f64 - mean) * istd) as f32;
                        *o = xh;
                        *yo = gc * xh + bc;
                    }
                }
                // Running stats use the unbiased variance, as is conventional.
                let unbiased = if m > 1.0 { var * m / (m - 1.0) } else { var };
                let rm = &mut self.running_mean.value.as_slice_mut().unwrap()[ci];
                *rm = ((1.0 - self.momentum) * *rm as f64 + self.momentum * mean) as f32;
                let rv = &mut self.running_var.value.as_slice_mut().unwrap()[ci];
                *rv = ((1.0 - self.momentum) * *rv as f64 + self.momentum * unbiased) as f32;
            }
            self.cache = Some(BnCache { xhat, inv_std });
        } else {
            let rm = self.running_mean.value.as_slice().unwrap();
            let rv = self.running_var.value.as_slice().unwrap();
            for ci in 0..c {
                let istd = 1.0 / (rv[ci] as f64 + self.eps).sqrt();
                let mean = rm[ci] as f64;
                let (gc, bc) = (gv[ci] as f64, bv[ci] as f64);
                for ni in 0..n {
                    let plane = x4.slice(s![ni, ci, .., ..]);
                    let mut yp = y.slice_mut(s![ni, ci, .., ..]);
                    for (yo, &v) in yp
                        .as_slice_mut()
                        .unwrap()
                        .iter_mut()
                        .zip(plane.as_slice().unwrap())
                    {
                        *yo = (gc * (v as f64 - mean) * istd + bc) as f32;
                    }
                }
            }
        }
        y.into_dyn()
    }

    fn backward(&mut self, grad: ArrayD<f32>) -> ArrayD<f32> {
        let BnCache { xhat, inv_std } = self
            .cache
            .take()
            .expect("batch norm backward without forward(train)");
        let g4 = grad.into_dimensionality::<Ix4>().unwrap();
        let (n, c, h, w) = g4.dim();
        let m = (n * h * w) as f64;
        let gv = self.gamma.value.as_slice().unwrap();

        let mut dx = Array4::<f32>::zeros((n, c, h, w));
        let dgamma = self.gamma.grad.as_slice_mut().unwrap();
        let dbeta = self.beta.grad.as_slice_mut().unwrap();
        for ci in 0..c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for ni in 0..n {
                let go = g4.slice(s![ni, ci, .., ..]);
                let xh = xhat.slice(s![ni, ci, .., ..]);
                for (&gg, &xx) in go.as_slice().unwrap().iter().zip(xh.as_slice().unwrap()) {
                    sum_g += gg as f64;
                    sum_gx += gg as f64 * xx as f64;
                }
            }
            dgamma[ci] += sum_gx as f32;
            dbeta[ci] += sum_g as f32;
            let scale = gv[ci] as f64 * inv_std[ci] / m;
            for ni in 0..n {
                let go = g4.slice(s![ni, ci, .., ..]);
                let xh = xhat.slice(s![ni, ci, .., ..]);
                let mut dxc = dx.slice_mut(s![ni, ci, .., ..]);
                for ((o, &gg), &xx) in dxc
                    .as_slice_mut()
                    .unwrap()
                    .iter_mut()
                    .zip(go.as_slice().unwrap())
                    .zip(xh.as_slice().unwrap())
                {
                    *o = (scale * (m * gg as f64 - sum_g - xx as f64 * sum_gx)) as f32;
                }
            }
        }
        dx.into_dyn()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

/// Which normalization to drop into a conv block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// Group norm with the [`auto_groups`] group count.
    Group,
    /// Classic batch norm with running statistics.
    Batch,
}

impl NormKind {
    pub fn build(self, name: &str, channels: usize) -> Box<dyn Layer> {
        match self {
            NormKind::Group => Box::new(GroupNorm::auto(name, channels)),
            NormKind::Batch => Box::new(BatchNorm2d::new(name, channels)),
        }
    }
}
