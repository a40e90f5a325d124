//! Weak and strong augmentation for feature vectors.
//!
//! Weak augmentation adds isotropic Gaussian noise; strong augmentation adds
//! larger noise and then zeroes each coordinate independently. The image
//! policies the algorithms were designed around do not transfer to plain
//! vectors; what the training losses need is a weak/strong asymmetry, which
//! this pair provides.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::diffcore::Tensor2;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AugmentConfig {
    pub weak_noise_sigma: f64,
    pub strong_noise_sigma: f64,
    pub strong_dropout_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            weak_noise_sigma: 0.1,
            strong_noise_sigma: 0.5,
            strong_dropout_prob: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.weak_noise_sigma < 0.0 || self.strong_noise_sigma < 0.0 {
            return Err(Error::Config("noise sigmas must be >= 0".into()));
        }
        if self.strong_noise_sigma < self.weak_noise_sigma {
            return Err(Error::Config(
                "strong_noise_sigma must be >= weak_noise_sigma".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.strong_dropout_prob) {
            return Err(Error::Config("strong_dropout_prob must be in [0, 1)".into()));
        }
        Ok(())
    }
}

fn add_noise<R: Rng>(batch: &mut Tensor2, sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let noise = Normal::new(0.0, sigma).unwrap();
    for v in batch.data_mut() {
        *v += noise.sample(rng);
    }
}

/// Weak view: `x + N(0, weak_sigma^2)` per coordinate. All draws come from
/// `rng` in row-major order.
pub fn augment_weak<R: Rng>(batch: &Tensor2, cfg: &AugmentConfig, rng: &mut R) -> Tensor2 {
    let mut out = batch.clone();
    add_noise(&mut out, cfg.weak_noise_sigma, rng);
    out
}

/// Strong view: `x + N(0, strong_sigma^2)`, then each coordinate zeroed with
/// probability `strong_dropout_prob`. The noise pass consumes the stream
/// first (row-major), then the dropout pass.
pub fn augment_strong<R: Rng>(batch: &Tensor2, cfg: &AugmentConfig, rng: &mut R) -> Tensor2 {
    let mut out = batch.clone();
    add_noise(&mut out, cfg.strong_noise_sigma, rng);
    if cfg.strong_dropout_prob > 0.0 {
        for v in out.data_mut() {
            if rng.gen::<f64>() < cfg.strong_dropout_prob {
                *v = 0.0;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn zero_config_is_identity() {
        let cfg = AugmentConfig {
            weak_noise_sigma: 0.0,
            strong_noise_sigma: 0.0,
            strong_dropout_prob: 0.0,
        };
        let x = Tensor2::from_vec(2, 3, vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let mut rng = substream(0, "augment");
        assert_eq!(augment_weak(&x, &cfg, &mut rng), x);
        assert_eq!(augment_strong(&x, &cfg, &mut rng), x);
    }

    #[test]
    fn fixed_seed_reproduces_output() {
        let cfg = AugmentConfig::default();
        let x = Tensor2::zeros(3, 4);
        let a = augment_strong(&x, &cfg, &mut substream(9, "augment"));
        let b = augment_strong(&x, &cfg, &mut substream(9, "augment"));
        assert_eq!(a, b);
    }

    #[test]
    fn sigma_validation() {
        let cfg = AugmentConfig {
            weak_noise_sigma: 0.5,
            strong_noise_sigma: 0.1,
            strong_dropout_prob: 0.0,
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empirical_noise_std_matches_sigma() {
        // 1e5 draws; sample std within 2% of sigma.
        let cfg = AugmentConfig {
            weak_noise_sigma: 0.7,
            strong_noise_sigma: 0.7,
            strong_dropout_prob: 0.0,
        };
        let x = Tensor2::zeros(1000, 100);
        let out = augment_weak(&x, &cfg, &mut substream(4, "augment"));
        let n = out.data().len() as f64;
        let mean: f64 = out.data().iter().sum::<f64>() / n;
        let var: f64 = out.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!(
            (std - 0.7).abs() / 0.7 < 0.02,
            "empirical std {std} vs sigma 0.7"
        );
    }

    #[test]
    fn dropout_rate_is_close_to_p() {
        let cfg = AugmentConfig {
            weak_noise_sigma: 0.0,
            strong_noise_sigma: 0.0,
            strong_dropout_prob: 0.3,
        };
        let x = Tensor2::from_vec(1000, 50, vec![1.0; 50_000]).unwrap();
        let out = augment_strong(&x, &cfg, &mut substream(5, "augment"));
        let zeros = out.data().iter().filter(|&&v| v == 0.0).count() as f64;
        let rate = zeros / 50_000.0;
        assert!((rate - 0.3).abs() < 0.02, "dropout rate {rate}");
    }
}
