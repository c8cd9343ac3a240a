//! Ground-truth mode in which the linear response function holds exactly.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::TreatmentCondition;
use crate::rng::rng_from_seed;

/// County coefficients `(mu_0, mu_n, mu_b[, mu_nb])` plus replicate noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearCoefficients {
    pub mu_0: f64,
    pub mu_n: f64,
    pub mu_b: f64,
    #[serde(default)]
    pub mu_nb: f64,
    /// Standard deviation of the Gaussian replicate noise.
    #[serde(default)]
    pub noise_sd: f64,
}

impl LinearCoefficients {
    pub fn new(mu_0: f64, mu_n: f64, mu_b: f64) -> Self {
        LinearCoefficients { mu_0, mu_n, mu_b, mu_nb: 0.0, noise_sd: 0.0 }
    }

    pub fn mean(&self, c: TreatmentCondition) -> f64 {
        let (n, b) = (c.n as f64, c.b as f64);
        self.mu_0 + self.mu_n * n + self.mu_b * b + self.mu_nb * n * b
    }
}

/// One noisy replicate of the linear truth, clipped at zero.
pub fn linear_truth_outcome(coeffs: &LinearCoefficients, condition: TreatmentCondition, noise_sd: f64, seed: u64) -> f64 {
    let mean = coeffs.mean(condition);
    let z = if noise_sd > 0.0 {
        let mut rng = rng_from_seed(seed);
        Normal::new(0.0, noise_sd).expect("positive sd").sample(&mut rng)
    } else {
        0.0
    };
    (mean + z).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noise_free_evaluations() {
        let c = LinearCoefficients::new(100.0, -5.0, -3.0);
        assert_eq!(linear_truth_outcome(&c, TreatmentCondition::new(0, 0), 0.0, 1), 100.0);
        assert_eq!(linear_truth_outcome(&c, TreatmentCondition::new(4, 4), 0.0, 1), 68.0);
        let allegheny = LinearCoefficients::new(88.96, -4.26, -5.65);
        let z = linear_truth_outcome(&allegheny, TreatmentCondition::new(1, 1), 0.0, 1);
        assert!((z - 79.05).abs() < 1e-10);
    }

    #[test]
    fn clipped_at_zero() {
        let c = LinearCoefficients::new(1.0, -5.0, 0.0);
        assert_eq!(linear_truth_outcome(&c, TreatmentCondition::new(3, 0), 0.0, 1), 0.0);
    }

    #[test]
    fn interaction_term() {
        let c = LinearCoefficients { mu_nb: 1.0, ..LinearCoefficients::new(10.0, 1.0, 1.0) };
        assert_eq!(c.mean(TreatmentCondition::new(2, 3)), 10.0 + 2.0 + 3.0 + 6.0);
    }
}
