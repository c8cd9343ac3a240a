use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One squared-exponential term acting on a subset of input columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelComponent {
    /// Input columns this term measures distance over.
    pub features: Vec<usize>,
    pub lengthscale: f64,
    /// Signal variance `s^2`.
    pub output_scale: f64,
}

impl KernelComponent {
    pub fn new(features: Vec<usize>, lengthscale: f64, output_scale: f64) -> Self {
        KernelComponent { features, lengthscale, output_scale }
    }

    pub fn sq_dist(&self, x: &[f64], y: &[f64]) -> f64 {
        self.features.iter().map(|&i| (x[i] - y[i]).powi(2)).sum()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.output_scale * (-self.sq_dist(x, y) / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }
}

/// Additive sum of RBF terms, `k(x, y) = sum_j s_j^2 exp(-|x_Gj - y_Gj|^2 / (2 l_j^2))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub components: Vec<KernelComponent>,
}

impl KernelSpec {
    pub fn new(components: Vec<KernelComponent>) -> Result<Self> {
        let spec = KernelSpec { components };
        spec.validate()?;
        Ok(spec)
    }

    /// Location pair, income, density and percent-Black, each with its own
    /// lengthscale; column indices follow [`crate::domain::FEATURE_NAMES`].
    pub fn county_default() -> Self {
        KernelSpec {
            components: vec![
                KernelComponent::new(vec![0, 1], 1.0, 1.0),
                KernelComponent::new(vec![2], 1.0, 1.0),
                KernelComponent::new(vec![3], 1.0, 1.0),
                KernelComponent::new(vec![4], 1.0, 1.0),
            ],
        }
    }

    /// Location and density only.
    pub fn location_density() -> Self {
        KernelSpec {
            components: vec![KernelComponent::new(vec![0, 1], 1.0, 1.0), KernelComponent::new(vec![3], 1.0, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::invalid("kernel needs at least one component"));
        }
        for c in &self.components {
            if c.features.is_empty() {
                return Err(Error::invalid("kernel component with no features"));
            }
            if !(c.lengthscale > 0.0) || !c.lengthscale.is_finite() {
                return Err(Error::invalid(format!("lengthscale must be positive, got {}", c.lengthscale)));
            }
            if !(c.output_scale >= 0.0) || !c.output_scale.is_finite() {
                return Err(Error::invalid(format!("output scale must be >= 0, got {}", c.output_scale)));
            }
        }
        Ok(())
    }

    /// Smallest input length the components can index.
    pub fn input_dim(&self) -> usize {
        self.components.iter().flat_map(|c| c.features.iter()).map(|i| i + 1).max().unwrap_or(0)
    }

    /// `k(x, x)`.
    pub fn prior_variance(&self) -> f64 {
        self.components.iter().map(|c| c.output_scale).sum()
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() < self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.len() });
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: y.len() });
        }
        self.check_dim(x)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        self.components.iter().map(|c| c.eval(x, y)).sum()
    }

    pub fn gram(&self, xs: &[Vec<f64>]) -> DMatrix<f64> {
        let n = xs.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = self.eval_unchecked(&xs[i], &xs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        k
    }
}
