//! Type-II maximum likelihood for the additive RBF kernel.
//!
//! Parameters are optimized in log space by projected gradient ascent with
//! Armijo backtracking, using the analytic gradient
//! `dL/dtheta = 1/2 tr((a a' - K^-1) dK/dtheta)`. Several starts are tried and
//! the best objective is kept, so the result never falls below the starting
//! kernel.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::kernel::KernelSpec;
use super::model::GpModel;
use crate::error::Result;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    /// Total number of starts, the first being the current kernel.
    pub restarts: usize,
    pub max_iters: usize,
    pub lengthscale_bounds: (f64, f64),
    pub output_scale_bounds: (f64, f64),
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 3,
            max_iters: 150,
            lengthscale_bounds: (0.05, 20.0),
            output_scale_bounds: (1e-4, 1e6),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub kernel: KernelSpec,
    pub objective_before: f64,
    pub objective_after: f64,
    /// False when no start improved on the initial kernel; the initial
    /// kernel is then returned unchanged.
    pub improved: bool,
}

/// Log-space parameter vector `[log l_1, log s_1^2, log l_2, ...]`.
fn pack(k: &KernelSpec) -> Vec<f64> {
    k.components.iter().flat_map(|c| [c.lengthscale.ln(), c.output_scale.max(1e-300).ln()]).collect()
}

fn unpack(template: &KernelSpec, theta: &[f64]) -> KernelSpec {
    let mut k = template.clone();
    for (j, c) in k.components.iter_mut().enumerate() {
        c.lengthscale = theta[2 * j].exp();
        c.output_scale = theta[2 * j + 1].exp();
    }
    k
}

struct Bounds {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Bounds {
    fn new(ncomp: usize, opts: &FitOptions) -> Self {
        let (l0, l1) = opts.lengthscale_bounds;
        let (s0, s1) = opts.output_scale_bounds;
        Bounds {
            lo: (0..ncomp).flat_map(|_| [l0.ln(), s0.ln()]).collect(),
            hi: (0..ncomp).flat_map(|_| [l1.ln(), s1.ln()]).collect(),
        }
    }

    fn project(&self, theta: &mut [f64]) {
        for (t, (lo, hi)) in theta.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *t = t.clamp(*lo, *hi);
        }
    }
}

/// Objective and log-space gradient at `kernel` for the model's data.
pub fn objective_and_gradient(model: &GpModel, kernel: &KernelSpec) -> Option<(f64, Vec<f64>)> {
    let m = model.with_kernel(kernel.clone()).ok()?;
    let lml = m.log_marginal_likelihood();
    if !lml.is_finite() {
        return None;
    }
    let n = m.len();
    let kinv = m.chol().inverse();
    let a = m.alpha();
    let w = a * a.transpose() - kinv;
    let xs = m.inputs();
    let mut grad = Vec::with_capacity(2 * kernel.components.len());
    for c in &kernel.components {
        let l2 = c.lengthscale * c.lengthscale;
        let mut g_l = 0.0;
        let mut g_s = 0.0;
        for i in 0..n {
            for j in 0..n {
                let d2 = c.sq_dist(&xs[i], &xs[j]);
                let kij = c.output_scale * (-d2 / (2.0 * l2)).exp();
                g_s += w[(i, j)] * kij;
                g_l += w[(i, j)] * kij * d2 / l2;
            }
        }
        grad.push(0.5 * g_l);
        grad.push(0.5 * g_s);
    }
    Some((lml, grad))
}

fn objective(model: &GpModel, kernel: &KernelSpec) -> Option<f64> {
    model.with_kernel(kernel.clone()).ok().map(|m| m.log_marginal_likelihood()).filter(|v| v.is_finite())
}

fn ascend(model: &GpModel, template: &KernelSpec, mut theta: Vec<f64>, bounds: &Bounds, max_iters: usize) -> Option<(f64, Vec<f64>)> {
    bounds.project(&mut theta);
    let (mut f, mut g) = objective_and_gradient(model, &unpack(template, &theta))?;
    let mut step = 1.0 / g.iter().fold(1e-12f64, |m, v| m.max(v.abs()));
    for _ in 0..max_iters {
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand: Vec<f64> = theta.iter().zip(&g).map(|(t, gi)| t + step * gi).collect();
            bounds.project(&mut cand);
            let moved: f64 = cand.iter().zip(&theta).zip(&g).map(|((c, t), gi)| (c - t) * gi).sum();
            if moved <= 0.0 {
                // Projected step is stationary: every active gradient points out of the box.
                return Some((f, theta));
            }
            match objective(model, &unpack(template, &cand)) {
                Some(fc) if fc >= f + 1e-4 * moved => {
                    let gain = fc - f;
                    let (fc, gc) = objective_and_gradient(model, &unpack(template, &cand))?;
                    theta = cand;
                    f = fc;
                    g = gc;
                    accepted = true;
                    step *= 2.0;
                    if gain < 1e-10 * f.abs().max(1.0) {
                        return Some((f, theta));
                    }
                    break;
                }
                _ => step *= 0.5,
            }
        }
        if !accepted {
            break;
        }
    }
    Some((f, theta))
}

/// Maximizes the log marginal likelihood over lengthscales and output scales.
pub fn fit_hyperparameters(model: &GpModel, opts: &FitOptions) -> Result<FitReport> {
    let init = model.kernel().clone();
    let before = model.log_marginal_likelihood();
    let bounds = Bounds::new(init.components.len(), opts);
    let mut rng = rng_from_seed(opts.seed);

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in 0..opts.restarts.max(1) {
        let theta0 = if start == 0 {
            pack(&init)
        } else {
            bounds.lo.iter().zip(&bounds.hi).map(|(lo, hi)| rng.random_range(*lo..=*hi)).collect()
        };
        if let Some((f, theta)) = ascend(model, &init, theta0, &bounds, opts.max_iters) {
            if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
                best = Some((f, theta));
            }
        }
    }
    match best {
        Some((f, theta)) if f > before => Ok(FitReport {
            kernel: unpack(&init, &theta),
            objective_before: before,
            objective_after: f,
            improved: true,
        }),
        _ => {
            log::warn!("hyperparameter fit did not improve on the initial kernel");
            Ok(FitReport { kernel: init, objective_before: before, objective_after: before, improved: false })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gpr::kernel::KernelComponent;
    use rand_distr::{Distribution, StandardNormal};

    fn one_d_kernel(l: f64, s: f64) -> KernelSpec {
        KernelSpec::new(vec![KernelComponent::new(vec![0], l, s)]).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let xs: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.4, (i as f64).sin()]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x[0].cos() + 0.3 * x[1]).collect();
        let k = KernelSpec::new(vec![
            KernelComponent::new(vec![0], 0.8, 1.3),
            KernelComponent::new(vec![1], 1.7, 0.4),
        ])
        .unwrap();
        let m = GpModel::new(k.clone(), xs, ys, vec![0.01; 8], true).unwrap();
        let (_, g) = objective_and_gradient(&m, &k).unwrap();
        let theta = pack(&k);
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut up = theta.clone();
            up[i] += h;
            let mut dn = theta.clone();
            dn[i] -= h;
            let fd = (objective(&m, &unpack(&k, &up)).unwrap() - objective(&m, &unpack(&k, &dn)).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0), "param {i}: fd {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn zero_targets_drive_scale_to_lower_bound() {
        let xs: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 * 0.3]).collect();
        let m = GpModel::new(one_d_kernel(1.0, 1.0), xs, vec![0.0; 10], vec![0.01; 10], false).unwrap();
        let opts = FitOptions::default();
        let r = fit_hyperparameters(&m, &opts).unwrap();
        assert!(r.improved);
        let s = r.kernel.components[0].output_scale;
        assert!((s / opts.output_scale_bounds.0 - 1.0).abs() < 1e-6, "{s}");
    }

    #[test]
    fn fit_never_lowers_objective() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.25]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * x[0]).sin()).collect();
        let m = GpModel::new(one_d_kernel(3.0, 0.2), xs, ys, vec![1e-3; 12], true).unwrap();
        let r = fit_hyperparameters(&m, &FitOptions::default()).unwrap();
        assert!(r.objective_after >= r.objective_before);
        let refit = m.with_kernel(r.kernel.clone()).unwrap();
        assert!((refit.log_marginal_likelihood() - r.objective_after).abs() < 1e-9);
    }

    #[test]
    fn recovers_lengthscale_of_generating_process() {
        let n = 60;
        let mut rng = rng_from_seed(2024);
        let xs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-5.0..5.0)]).collect();
        let truth = one_d_kernel(1.0, 1.0);
        let mut k = truth.gram(&xs);
        for i in 0..n {
            k[(i, i)] += 0.01 + 1e-9;
        }
        let l = k.cholesky().unwrap().l();
        let z = nalgebra::DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let y = l * z;
        let m = GpModel::new(one_d_kernel(3.0, 0.5), xs, y.iter().copied().collect(), vec![0.01; n], false).unwrap();
        let r = fit_hyperparameters(&m, &FitOptions { restarts: 4, ..Default::default() }).unwrap();
        let got = r.kernel.components[0].lengthscale;
        assert!((0.5..=2.0).contains(&got), "recovered lengthscale {got}");
    }
}
