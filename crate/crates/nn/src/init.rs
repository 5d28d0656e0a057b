//! Seeded weight initializers.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// He-normal initialization: N(0, sqrt(2 / fan_in)).
pub fn he_normal(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    let std = (2.0 / fan_in.max(1) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(rng) as f32)
}

/// Xavier-uniform initialization: U(-a, a), a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut ChaCha8Rng,
) -> ArrayD<f32> {
    let a = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    ArrayD::from_shape_fn(IxDyn(shape), |_| dist.sample(rng) as f32)
}

/// Uniform init in `[-bound, bound]`, the classic dense-layer fallback.
pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> ArrayD<f32> {
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..=bound) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn he_normal_is_seed_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(7);
        let mut b = ChaCha8Rng::seed_from_u64(7);
        let wa = he_normal(&[8, 4, 3, 3], 36, &mut a);
        let wb = he_normal(&[8, 4, 3, 3], 36, &mut b);
        assert_eq!(wa, wb);
    }

    #[test]
    fn he_normal_scale_tracks_fan_in() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let w = he_normal(&[256, 64, 3, 3], 64 * 9, &mut rng);
        let n = w.len() as f64;
        let var = w.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / n;
        let expect = 2.0 / (64.0 * 9.0);
        assert!((var - expect).abs() < expect * 0.1, "var {var} vs {expect}");
    }

    #[test]
    fn xavier_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = xavier_uniform(&[32, 32], 32, 32, &mut rng);
        let a = (6.0f64 / 64.0).sqrt() as f32;
        assert!(w.iter().all(|&v| v.abs() <= a));
    }
}
