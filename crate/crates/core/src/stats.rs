//! Small statistics helpers shared by the experiment runner and tests.

/// Two-sided 99% normal quantile.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

/// Wilson score interval for `successes` out of `trials`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Full width `hi - lo` of the 99% Wilson interval.
pub fn wilson_width_99(successes: u64, trials: u64) -> f64 {
    let (lo, hi) = wilson_interval(successes, trials, Z_99);
    hi - lo
}

/// Mean of the `k = max(1, floor(len / 100))` smallest values.
pub fn worst_one_percent(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let k = (values.len() / 100).max(1);
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted[..k].iter().sum::<f64>() / k as f64
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
