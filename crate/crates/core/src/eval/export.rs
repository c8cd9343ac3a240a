//! Plot-ready CSV tables.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::curves::LearningCurvePoint;
use super::factorial::FactorialSlices;
use super::prototype::Assignment;
use super::specification::DeltaMu;
use crate::error::Result;
use crate::gpr::{sample_independent, GpModelSet, PosteriorSummary};
use crate::rng::derive_seed;
use crate::stats::central_interval;

/// Posterior mean and empirical 95% interval of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInterval {
    pub name: String,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Intervals from `samples` independent posterior draws.
pub fn coefficient_intervals(post: &PosteriorSummary, names: &[&str], samples: usize, seed: u64) -> Vec<CoefficientInterval> {
    let draws = sample_independent(post, samples, seed);
    names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let mut col: Vec<f64> = draws.iter().map(|d| d[m]).collect();
            let (lo, hi) = central_interval(&mut col, 0.95);
            CoefficientInterval { name: (*name).to_string(), mean: post.mean[m], lo, hi }
        })
        .collect()
}

/// Coefficient table rows for every county, in the given order.
pub fn coefficient_table(
    models: &GpModelSet,
    counties: &[(String, Vec<f64>)],
    samples: usize,
    seed: u64,
) -> Result<Vec<(String, Vec<CoefficientInterval>)>> {
    let names = models.kind().coefficient_names();
    counties
        .iter()
        .enumerate()
        .map(|(i, (id, x))| {
            let post = models.posterior(x)?;
            Ok((id.clone(), coefficient_intervals(&post, names, samples, derive_seed(seed, "coefficients", i as u64))))
        })
        .collect()
}

/// `county_id, mu_0, mu_0_lo, mu_0_hi, mu_n, ...`.
pub fn write_coefficients_csv<W: Write>(w: W, table: &[(String, Vec<CoefficientInterval>)]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["county_id".to_string()];
    if let Some((_, first)) = table.first() {
        for c in first {
            header.extend([c.name.clone(), format!("{}_lo", c.name), format!("{}_hi", c.name)]);
        }
    }
    wtr.write_record(&header)?;
    for (id, cs) in table {
        let mut rec = vec![id.clone()];
        for c in cs {
            rec.extend([c.mean.to_string(), c.lo.to_string(), c.hi.to_string()]);
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_learning_curve_csv<W: Write>(w: W, curve: &[LearningCurvePoint]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["iter", "budget_used", "rel_error", "mse"])?;
    for p in curve {
        wtr.write_record([p.iter.to_string(), p.budget_used.to_string(), p.rel_error.to_string(), p.mse.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_assignment_csv<'a, W: Write>(w: W, rows: impl IntoIterator<Item = (&'a String, &'a Assignment)>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["county_id", "prototype", "distance"])?;
    for (id, a) in rows {
        wtr.write_record([id.clone(), a.prototype.clone(), a.distance.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Long format, one row per county and condition.
pub fn write_factorial_csv<W: Write>(w: W, slices: &[FactorialSlices]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["county_id", "n", "b", "outcome", "max_defect"])?;
    for s in slices {
        for (n, row) in s.outcome.iter().enumerate() {
            for (b, z) in row.iter().enumerate() {
                wtr.write_record([s.county_id.clone(), n.to_string(), b.to_string(), z.to_string(), s.max_defect.to_string()])?;
            }
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_delta_mu_csv<W: Write>(w: W, rows: &[DeltaMu]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["county_id", "coefficient", "main_mean", "interaction_mean", "delta", "lo", "hi", "spans_zero"])?;
    for r in rows {
        wtr.write_record([
            r.county_id.clone(),
            r.coefficient.clone(),
            r.main_mean.to_string(),
            r.interaction_mean.to_string(),
            r.delta.to_string(),
            r.lo.to_string(),
            r.hi.to_string(),
            r.spans_zero().to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coefficient_header_follows_names() {
        let post = PosteriorSummary { mean: vec![88.96, -4.26, -5.65], var: vec![0.0; 3] };
        let rows = vec![("allegheny".to_string(), coefficient_intervals(&post, &["mu_0", "mu_n", "mu_b"], 64, 1))];
        let mut buf = Vec::new();
        write_coefficients_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "county_id,mu_0,mu_0_lo,mu_0_hi,mu_n,mu_n_lo,mu_n_hi,mu_b,mu_b_lo,mu_b_hi");
        assert_eq!(lines.next().unwrap(), "allegheny,88.96,88.96,88.96,-4.26,-4.26,-4.26,-5.65,-5.65,-5.65");
    }
}
