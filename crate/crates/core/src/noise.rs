//! Additive white Gaussian noise, the synthetic corruption model used for
//! both training pairs and the benchmark protocol.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::ImageGray8;

pub const DEFAULT_SIGMA: f64 = 25.0;

/// Noise description: zero-mean Gaussian with standard deviation `sigma`
/// in 8-bit units, drawn from a generator seeded with `seed`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    sigma: f64,
    seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(NoiseSpec { sigma, seed })
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// Adds per-pixel N(0, sigma^2) in row-major order, clamps to [0, 255] and
/// rounds half up. Deterministic in (image, seed); sigma 0 is the identity.
pub fn add_noise(img: &ImageGray8, spec: &NoiseSpec) -> ImageGray8 {
    if spec.sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.sigma).expect("validated sigma");
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            let v = p as f64 + normal.sample(&mut rng);
            (v + 0.5).floor().clamp(0.0, 255.0) as u8
        })
        .collect();
    ImageGray8::from_pixels(img.width(), img.height(), pixels).expect("dimensions preserved")
}

/// Samples a noise field of `len` values with standard deviation `sigma`
/// (in the [0,1] float domain) for on-the-fly training pairs; no clamping
/// or quantization so the residual equals the noise exactly.
pub fn noise_field_f32(len: usize, sigma: f64, seed: u64) -> Vec<f32> {
    if sigma == 0.0 {
        return vec![0.0; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma >= 0");
    (0..len).map(|_| normal.sample(&mut rng) as f32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_zero_is_identity() {
        let img = ImageGray8::from_pixels(4, 3, (0..12).map(|v| v as u8 * 20).collect()).unwrap();
        let out = add_noise(&img, &NoiseSpec::new(0.0, 9).unwrap());
        assert_eq!(out, img);
    }

    #[test]
    fn same_seed_reproduces_bytes() {
        let img = ImageGray8::constant(32, 32, 128).unwrap();
        let spec = NoiseSpec::new(25.0, 1234).unwrap();
        assert_eq!(add_noise(&img, &spec), add_noise(&img, &spec));
    }

    #[test]
    fn different_seeds_differ() {
        let img = ImageGray8::constant(32, 32, 128).unwrap();
        let a = add_noise(&img, &NoiseSpec::new(25.0, 1).unwrap());
        let b = add_noise(&img, &NoiseSpec::new(25.0, 2).unwrap());
        assert_ne!(a, b);
    }

    #[test]
    fn sample_std_matches_sigma_at_mid_gray() {
        let img = ImageGray8::constant(256, 256, 128).unwrap();
        let sigma = 25.0;
        let noisy = add_noise(&img, &NoiseSpec::new(sigma, 77).unwrap());
        let n = noisy.pixels().len() as f64;
        let mean: f64 = noisy.pixels().iter().map(|&p| p as f64).sum::<f64>() / n;
        let var: f64 = noisy
            .pixels()
            .iter()
            .map(|&p| (p as f64 - mean).powi(2))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        assert!(
            (sd - sigma).abs() < 0.05 * sigma,
            "sample sd {sd} vs sigma {sigma}"
        );
    }

    #[test]
    fn negative_sigma_rejected() {
        assert!(NoiseSpec::new(-1.0, 0).is_err());
    }
}
