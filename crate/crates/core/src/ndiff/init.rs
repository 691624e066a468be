use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::tensor::Tensor;

/// Default standard deviation for parameter initialization.
pub const INIT_STD: f64 = 0.01;

/// Seeded source of i.i.d. Gaussian parameter values.
#[derive(Debug, Clone)]
pub struct GaussianInit {
    rng: ChaCha8Rng,
    normal: Normal<f64>,
}

impl GaussianInit {
    pub fn new(seed: u64, std: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            normal: Normal::new(0.0, std).expect("std must be finite and non-negative"),
        }
    }

    pub fn tensor(&mut self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.normal.sample(&mut self.rng)).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }
}

/// `N(0, 0.01²)` draws for `shape`, bit-identical for a given seed.
pub fn gaussian_init(shape: &[usize], seed: u64) -> Tensor {
    GaussianInit::new(seed, INIT_STD).tensor(shape)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(gaussian_init(&[3, 4], 9), gaussian_init(&[3, 4], 9));
        assert_ne!(gaussian_init(&[3, 4], 9), gaussian_init(&[3, 4], 10));
        assert_eq!(gaussian_init(&[2, 3], 1).len(), 6);
    }

    #[test]
    fn moments_of_a_million_draws() {
        let t = gaussian_init(&[1_000_000], 2024);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t.data().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * INIT_STD / 1000.0, "mean {mean}");
        assert!((var.sqrt() / INIT_STD - 1.0).abs() < 0.01, "std {}", var.sqrt());
    }
}
