//! Independent dense-matrix references. Nothing here calls into the crate's
//! numerics; kernels and regressions are recomputed from their formulas.
#![allow(dead_code)]

use policy_surrogate::domain::{Observation, TreatmentCondition};
use policy_surrogate::gpr::{KernelComponent, KernelSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

/// Gauss-Jordan inverse with partial pivoting.
pub fn inverse(a: &Mat) -> Mat {
    let n = a.len();
    let mut m: Mat = a.iter().cloned().collect();
    let mut inv: Mat = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        inv.swap(col, piv);
        let d = m[col][col];
        assert!(d != 0.0, "singular matrix");
        for j in 0..n {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[i][j] -= f * m[col][j];
                        inv[i][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

/// `log |det a|` by LU elimination with partial pivoting.
pub fn log_abs_det(a: &Mat) -> f64 {
    let n = a.len();
    let mut m = a.clone();
    let mut acc = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        acc += d.abs().ln();
        for i in col + 1..n {
            let f = m[i][col] / d;
            for j in col..n {
                m[i][j] -= f * m[col][j];
            }
        }
    }
    acc
}

pub fn matvec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| dot(r, x)).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

/// `sum_j s_j exp(-|x_G - y_G|^2 / (2 l_j^2))`, written out longhand.
pub fn kernel(parts: &[(Vec<usize>, f64, f64)], x: &[f64], y: &[f64]) -> f64 {
    let mut k = 0.0;
    for (features, l, s) in parts {
        let mut d2 = 0.0;
        for &i in features {
            d2 += (x[i] - y[i]) * (x[i] - y[i]);
        }
        k += s * (-0.5 * d2 / (l * l)).exp();
    }
    k
}

#[derive(Debug, Clone)]
pub struct GpProblem {
    pub parts: Vec<(Vec<usize>, f64, f64)>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub noise: Vec<f64>,
    pub centered: bool,
    pub tests: Vec<Vec<f64>>,
}

impl GpProblem {
    pub fn spec(&self) -> KernelSpec {
        KernelSpec::new(self.parts.iter().map(|(f, l, s)| KernelComponent::new(f.clone(), *l, *s)).collect()).unwrap()
    }

    pub fn center(&self) -> f64 {
        if self.centered {
            self.targets.iter().sum::<f64>() / self.targets.len() as f64
        } else {
            0.0
        }
    }
}

/// `N <= 20`, `d <= 5`, features split into random disjoint groups.
pub fn random_gp_problem(rng: &mut ChaCha8Rng) -> GpProblem {
    let n = rng.random_range(1..=20);
    let d = rng.random_range(1..=5);
    let mut order: Vec<usize> = (0..d).collect();
    for i in (1..d).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut parts = Vec::new();
    let mut rest = &order[..];
    while !rest.is_empty() {
        let take = rng.random_range(1..=rest.len());
        let mut f = rest[..take].to_vec();
        f.sort_unstable();
        parts.push((f, rng.random_range(0.3..3.0), rng.random_range(0.2..5.0)));
        rest = &rest[take..];
    }
    let scale: f64 = parts.iter().map(|p| p.2).sum();
    let point = |rng: &mut ChaCha8Rng| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| point(rng)).collect();
    GpProblem {
        targets: (0..n).map(|_| rng.random_range(-10.0..10.0)).collect(),
        noise: (0..n).map(|_| scale * rng.random_range(0.01..0.5)).collect(),
        centered: rng.random_bool(0.5),
        tests: (0..5).map(|_| point(rng)).collect(),
        parts,
        inputs,
    }
}

/// Posterior means, variances at the test points, and the log marginal
/// likelihood, from an explicit inverse.
pub fn gp_oracle(p: &GpProblem) -> (Vec<f64>, Vec<f64>, f64) {
    let n = p.inputs.len();
    let a: Mat = (0..n)
        .map(|i| (0..n).map(|j| kernel(&p.parts, &p.inputs[i], &p.inputs[j]) + if i == j { p.noise[i] } else { 0.0 }).collect())
        .collect();
    let ainv = inverse(&a);
    let c = p.center();
    let r: Vec<f64> = p.targets.iter().map(|y| y - c).collect();
    let alpha = matvec(&ainv, &r);
    let mut means = Vec::new();
    let mut vars = Vec::new();
    for t in &p.tests {
        let ks: Vec<f64> = p.inputs.iter().map(|x| kernel(&p.parts, x, t)).collect();
        means.push(c + dot(&ks, &alpha));
        vars.push(kernel(&p.parts, t, t) - dot(&ks, &matvec(&ainv, &ks)));
    }
    let lml = -0.5 * dot(&r, &alpha) - 0.5 * log_abs_det(&a) - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    (means, vars, lml)
}

/// Replicated observations at 4 to 12 random distinct conditions of a 6x6 grid.
pub fn random_observations(rng: &mut ChaCha8Rng, county: &str) -> Vec<Observation> {
    let k = rng.random_range(4..=12);
    let mut conds: Vec<TreatmentCondition> = Vec::new();
    while conds.len() < k {
        let c = TreatmentCondition::new(rng.random_range(0..6), rng.random_range(0..6));
        if !conds.contains(&c) {
            conds.push(c);
        }
    }
    let (m0, mn, mb, mnb) = (rng.random_range(50.0..120.0), rng.random_range(-6.0..0.0), rng.random_range(-6.0..0.0), rng.random_range(-0.5..0.5));
    let mut out = Vec::new();
    for c in conds {
        for r in 0..rng.random_range(1..=5) {
            let (n, b) = (c.n as f64, c.b as f64);
            let z = m0 + mn * n + mb * b + mnb * n * b + rng.random_range(-8.0..8.0);
            out.push(Observation { county_id: county.into(), condition: c, outcome: z, replicate_seed: r });
        }
    }
    out
}

/// Normal-equation OLS: `beta = (X'X)^-1 X'y`, `cov = s^2 (X'X)^-1`.
pub fn ols_oracle(obs: &[Observation], interaction: bool) -> (Vec<f64>, Mat) {
    let row = |c: TreatmentCondition| {
        let (n, b) = (c.n as f64, c.b as f64);
        if interaction { vec![1.0, n, b, n * b] } else { vec![1.0, n, b] }
    };
    let x: Mat = obs.iter().map(|o| row(o.condition)).collect();
    let y: Vec<f64> = obs.iter().map(|o| o.outcome).collect();
    let p = x[0].len();
    let xtx: Mat = (0..p).map(|i| (0..p).map(|j| x.iter().map(|r| r[i] * r[j]).sum()).collect()).collect();
    let xty: Vec<f64> = (0..p).map(|i| x.iter().zip(&y).map(|(r, y)| r[i] * y).sum()).collect();
    let inv = inverse(&xtx);
    let beta = matvec(&inv, &xty);
    let rss: f64 = x.iter().zip(&y).map(|(r, y)| (y - dot(r, &beta)).powi(2)).sum();
    let s2 = rss / (obs.len() - p) as f64;
    (beta, inv.iter().map(|r| r.iter().map(|v| v * s2).collect()).collect())
}
