use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use crate::error::{Error, Result};

/// Jitter ladder tried after a plain factorization fails.
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Zero-mean GP regression with per-row observation noise, on targets
/// shifted by a constant center.
#[derive(Debug, Clone)]
pub struct GpModel {
    kernel: KernelSpec,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    noise: Vec<f64>,
    center: f64,
    jitter: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// Serializable form of a [`GpModel`]; the factorization is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSnapshot {
    pub kernel: KernelSpec,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub noise: Vec<f64>,
    pub center: f64,
}

/// Cholesky of `K + diag(noise) + jitter I`, escalating jitter on failure.
pub(crate) fn factorize(k: &DMatrix<f64>, noise: &[f64]) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let mut base = k.clone();
    for (i, s) in noise.iter().enumerate() {
        base[(i, i)] += s;
    }
    if let Some(c) = base.clone().cholesky() {
        return Ok((c, 0.0));
    }
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX * (1.0 + 1e-9) {
        let mut m = base.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: JITTER_MAX })
}

impl GpModel {
    /// Builds and factorizes. With `centered`, the target mean is removed
    /// before conditioning and restored on prediction; otherwise the prior
    /// mean is zero.
    pub fn new(kernel: KernelSpec, inputs: Vec<Vec<f64>>, targets: Vec<f64>, noise: Vec<f64>, centered: bool) -> Result<Self> {
        let center = if centered && !targets.is_empty() {
            targets.iter().sum::<f64>() / targets.len() as f64
        } else {
            0.0
        };
        Self::with_center(kernel, inputs, targets, noise, center)
    }

    pub fn with_center(kernel: KernelSpec, inputs: Vec<Vec<f64>>, targets: Vec<f64>, noise: Vec<f64>, center: f64) -> Result<Self> {
        kernel.validate()?;
        let n = inputs.len();
        if n == 0 {
            return Err(Error::invalid("GP needs at least one training row"));
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: targets.len() });
        }
        if noise.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: noise.len() });
        }
        let dim = inputs[0].len();
        for x in &inputs {
            if x.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
            }
        }
        kernel.check_dim(&inputs[0])?;
        if noise.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::invalid("noise variances must be finite and >= 0"));
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::invalid("non-finite GP target"));
        }
        let k = kernel.gram(&inputs);
        let (chol, jitter) = factorize(&k, &noise)?;
        let resid = DVector::from_iterator(n, targets.iter().map(|y| y - center));
        let alpha = chol.solve(&resid);
        Ok(GpModel { kernel, inputs, targets, noise, center, jitter, chol, alpha })
    }

    pub fn from_snapshot(s: GpSnapshot) -> Result<Self> {
        Self::with_center(s.kernel, s.inputs, s.targets, s.noise, s.center)
    }

    pub fn snapshot(&self) -> GpSnapshot {
        GpSnapshot {
            kernel: self.kernel.clone(),
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            noise: self.noise.clone(),
            center: self.center,
        }
    }

    /// Same data and center, different kernel.
    pub fn with_kernel(&self, kernel: KernelSpec) -> Result<Self> {
        Self::with_center(kernel, self.inputs.clone(), self.targets.clone(), self.noise.clone(), self.center)
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    /// Diagonal jitter that was needed to factorize (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `-1/2 r' (K + S)^-1 r - 1/2 log|K + S| - N/2 log 2 pi`, with `r` the centered targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.len() as f64;
        let r = DVector::from_iterator(self.len(), self.targets.iter().map(|y| y - self.center));
        let half_logdet: f64 = self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        -0.5 * r.dot(&self.alpha) - half_logdet - 0.5 * n * LN_2PI
    }

    /// Posterior mean and latent-function variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.inputs[0].len() {
            return Err(Error::DimensionMismatch { expected: self.inputs[0].len(), got: x.len() });
        }
        let kstar = DVector::from_iterator(self.len(), self.inputs.iter().map(|xi| self.kernel.eval_unchecked(xi, x)));
        let mean = self.center + kstar.dot(&self.alpha);
        let v = self.chol.l().solve_lower_triangular(&kstar).expect("cholesky factor is non-singular");
        let var = (self.kernel.eval_unchecked(x, x) - v.norm_squared()).max(0.0);
        Ok((mean, var))
    }

    pub(crate) fn chol(&self) -> &Cholesky<f64, Dyn> {
        &self.chol
    }

    pub(crate) fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }
}
