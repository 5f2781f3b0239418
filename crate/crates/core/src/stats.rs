//! Small numeric helpers shared by the estimators.

use statrs::distribution::{ContinuousCDF, Normal};

fn std_normal() -> Normal {
    Normal::standard()
}

/// Upper quantile `z` with `P(Z > z) = tail` for a standard normal.
pub fn z_upper(tail: f64) -> f64 {
    std_normal().inverse_cdf(1.0 - tail)
}

/// Two-sided critical value `z_{1-alpha/2}`.
pub fn z_two_sided(alpha: f64) -> f64 {
    z_upper(alpha / 2.0)
}

/// `1 - Φ(z)`, computed through the survival function so that large `z`
/// does not lose precision.
pub fn normal_sf(z: f64) -> f64 {
    std_normal().sf(z)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with denominator `n - 1`. Returns `NaN` for fewer than
/// two values.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Mean and standard error of the mean (`sd / sqrt(n)`).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    let se = (sample_variance(xs) / xs.len() as f64).sqrt();
    (m, se)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sided_95() {
        assert!((z_two_sided(0.05) - 1.959_963_984_540_054).abs() < 1e-9);
    }

    #[test]
    fn survival_tail() {
        assert!((normal_sf(0.0) - 0.5).abs() < 1e-15);
        assert!(normal_sf(10.0) > 0.0);
        assert!((normal_sf(-10.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn variance_of_pair() {
        assert_eq!(sample_variance(&[1.0, 3.0]), 2.0);
        assert!(sample_variance(&[1.0]).is_nan());
    }
}
