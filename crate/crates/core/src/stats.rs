//! Small descriptive-statistics helpers.

/// Empirical quantile by linear interpolation between order statistics
/// (position `p * (len - 1)` in the sorted sample). `sorted` must be sorted
/// ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let p = p.clamp(0.0, 1.0);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Sorts in place and returns the central `level` interval.
pub fn central_interval(samples: &mut [f64], level: f64) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(samples, tail), quantile_sorted(samples, 1.0 - tail))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with the n - 1 divisor; 0 for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard normal 97.5% quantile; `2 * Z975` is the 95% interval width in sd units.
pub const Z975: f64 = 1.959_963_984_540_054;
