//! Small statistical helpers shared across estimators and reports.

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard normal CDF, Abramowitz & Stegun 26.2.17 polynomial.
/// Absolute error below 7.5e-8, ample for window-mass and bandwidth work.
pub fn norm_cdf(x: f64) -> f64 {
    if x < 0.0 {
        return 1.0 - norm_cdf(-x);
    }
    let k = 1.0 / (1.0 + 0.231_641_9 * x);
    let poly = k
        * (0.319_381_530
            + k * (-0.356_563_782
                + k * (1.781_477_937 + k * (-1.821_255_978 + k * 1.330_274_429))));
    1.0 - norm_pdf(x) * poly
}

/// Sample mean; zero for an empty slice.
pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero below two observations.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_dev(xs: &[f64]) -> f64 {
    variance(xs).sqrt()
}

/// Standard error of the sample mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    std_dev(xs) / (xs.len() as f64).sqrt()
}

/// Pearson correlation; zero when either marginal is degenerate.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "correlation needs paired samples");
    if xs.len() < 2 {
        return 0.0;
    }
    let (mx, my) = (mean(xs), mean(ys));
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 1e-300 || syy <= 1e-300 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Median by sorting a copy; NaNs are rejected by the caller's data contract.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("median input must be NaN-free"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Linear-interpolated quantile of sorted data, `q` in [0, 1].
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return 0.0;
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Silverman's rule-of-thumb Gaussian KDE bandwidth:
/// `0.9 * min(sd, iqr / 1.34) * n^(-1/5)`, with a floor when the sample is
/// nearly degenerate.
pub fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 1e-6;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("bandwidth input must be NaN-free"));
    let sd = std_dev(xs);
    let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let b = 0.9 * spread * (n as f64).powf(-0.2);
    b.max(1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn norm_cdf_matches_reference_values() {
        // Reference values to 10 digits (standard normal table).
        let cases = [
            (0.0, 0.5),
            (1.0, 0.841_344_746_1),
            (-1.0, 0.158_655_253_9),
            (1.959_963_985, 0.975),
            (3.0, 0.998_650_101_97),
        ];
        for (x, p) in cases {
            assert!((norm_cdf(x) - p).abs() < 1e-7, "cdf({x}) = {}", norm_cdf(x));
        }
    }

    #[test]
    fn moments_match_hand_computation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert!((variance(&xs) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(median(&xs), 2.5);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn correlation_detects_sign_and_degeneracy() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.0, 4.0, 6.0, 8.0];
        assert!((correlation(&xs, &ys) - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = ys.iter().map(|y| -y).collect();
        assert!((correlation(&xs, &neg) + 1.0).abs() < 1e-12);
        assert_eq!(correlation(&xs, &[5.0; 4]), 0.0);
    }

    #[test]
    fn bandwidth_is_positive_and_scale_covariant() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64) / 10.0).collect();
        let b = silverman_bandwidth(&xs);
        assert!(b > 0.0);
        let scaled: Vec<f64> = xs.iter().map(|x| 10.0 * x).collect();
        assert!((silverman_bandwidth(&scaled) / b - 10.0).abs() < 1e-9);
    }
}
