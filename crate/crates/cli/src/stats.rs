/// Median, minimum and maximum; the median of an even count is the mean of
/// the two middle values. `None` for an empty or NaN-containing input.
pub fn median_min_max(values: &[f64]) -> Option<(f64, f64, f64)> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let median = if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    };
    Some((median, v[0], v[n - 1]))
}

pub fn median(values: &[f64]) -> Option<f64> {
    median_min_max(values).map(|(m, _, _)| m)
}
