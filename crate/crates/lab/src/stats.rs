//! Small estimators shared by the experiments.

/// 97.5% quantile of Student's t with 19 degrees of freedom (20 batches).
pub const T_975_19: f64 = 2.093;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)).sqrt()
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Means of `batches` contiguous, nearly equal blocks.
pub fn batch_means(xs: &[f64], batches: usize) -> Vec<f64> {
    let n = xs.len();
    (0..batches).map(|b| mean(&xs[b * n / batches..(b + 1) * n / batches])).collect()
}

/// Standard error of the mean from batch means.
pub fn batch_se(xs: &[f64], batches: usize) -> f64 {
    sample_sd(&batch_means(xs, batches)) / (batches as f64).sqrt()
}

/// Least-squares slope and intercept.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64) {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(batch_means(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 3.5]);
        let (s, c) = ols(&[0.0, 1.0, 2.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-15 && (c - 1.0).abs() < 1e-15);
        assert!((sample_sd(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
