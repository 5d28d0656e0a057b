//! Adam optimizer with optional decoupled-as-L2 weight decay.

use ndarray::ArrayD;

use crate::Param;

/// Standard Adam (Kingma & Ba) with bias correction. Weight decay is added
/// to the gradient (classic L2 regularization, not AdamW).
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    t: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Apply one update from the accumulated gradients. Does not clear them.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
            self.v = params
                .iter()
                .map(|p| ArrayD::zeros(p.value.raw_dim()))
                .collect();
        }
        assert_eq!(
            self.m.len(),
            params.len(),
            "optimizer was initialized for a different parameter set"
        );
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            assert_eq!(
                self.m[i].shape(),
                p.value.shape(),
                "optimizer state shape mismatch for {}",
                p.name
            );
            let wd = self.weight_decay;
            let (b1, b2) = (self.beta1, self.beta2);
            let m = self.m[i].as_slice_mut().unwrap();
            let v = self.v[i].as_slice_mut().unwrap();
            let val = p.value.as_slice_mut().unwrap();
            let grad = p.grad.as_slice().unwrap();
            for j in 0..val.len() {
                let g = grad[j] as f64 + wd * val[j] as f64;
                let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
                let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
                m[j] = mj as f32;
                v[j] = vj as f32;
                let mhat = mj / bc1;
                let vhat = vj / bc2;
                val[j] = (val[j] as f64 - self.lr * mhat / (vhat.sqrt() + self.eps)) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn first_step_moves_by_lr() {
        // With constant gradient, mhat/sqrt(vhat) == sign(g) on step one.
        let mut p = Param::new("w", ArrayD::from_elem(IxDyn(&[3]), 1.0f32));
        p.grad = ArrayD::from_elem(IxDyn(&[3]), 0.5f32);
        let mut opt = Adam::new(0.1, 0.0);
        opt.step(&mut [&mut p]);
        for &v in p.value.iter() {
            assert!((v - 0.9).abs() < 1e-5, "got {v}");
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let target = [0.3f32, -1.2, 2.5];
        let mut p = Param::new("w", ArrayD::zeros(IxDyn(&[3])));
        let mut opt = Adam::new(0.05, 0.0);
        for _ in 0..2000 {
            p.zero_grad();
            for j in 0..3 {
                p.grad[[j]] = 2.0 * (p.value[[j]] - target[j]);
            }
            opt.step(&mut [&mut p]);
        }
        for j in 0..3 {
            assert!((p.value[[j]] - target[j]).abs() < 1e-3);
        }
    }

    #[test]
    fn weight_decay_shrinks_weights() {
        let mut p = Param::new("w", ArrayD::from_elem(IxDyn(&[1]), 4.0f32));
        let mut opt = Adam::new(0.01, 0.1);
        for _ in 0..3000 {
            p.zero_grad();
            opt.step(&mut [&mut p]);
        }
        assert!(p.value[[0]].abs() < 0.05, "got {}", p.value[[0]]);
    }
}
