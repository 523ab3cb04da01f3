use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Zero-mean Gaussian exploration with a multiplicative per-iteration decay
/// and a floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianNoise {
    pub sigma: f64,
    pub decay: f64,
    pub floor: f64,
}

impl GaussianNoise {
    /// Standard deviation at 0-based iteration `t`.
    pub fn sigma_at(&self, t: usize) -> f64 {
        let exp = i32::try_from(t).unwrap_or(i32::MAX);
        (self.sigma * self.decay.powi(exp)).max(self.floor)
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: usize, dim: usize, rng: &mut R) -> Vec<f64> {
        let sd = self.sigma_at(t);
        if sd == 0.0 {
            return vec![0.0; dim];
        }
        let normal = Normal::new(0.0, sd).expect("finite sigma");
        (0..dim).map(|_| normal.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn floor_reached() {
        let n = GaussianNoise { sigma: 0.05, decay: 0.995, floor: 0.005 };
        assert_eq!(n.sigma_at(0), 0.05);
        assert_eq!(n.sigma_at(10_000), 0.005);
    }

    proptest! {
        #[test]
        fn sigma_non_increasing(sigma in 0.0f64..1.0, decay in 0.5f64..=1.0, floor in 0.0f64..0.1, t in 0usize..5000) {
            let n = GaussianNoise { sigma, decay, floor };
            prop_assert!(n.sigma_at(t + 1) <= n.sigma_at(t));
        }
    }
}
