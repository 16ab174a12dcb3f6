//! Small numeric helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};

/// Upper tail of the chi-square distribution with `df` degrees of freedom,
/// evaluated through the regularized upper incomplete gamma function so that
/// small tail probabilities keep relative precision.
pub(crate) fn chi_square_sf(x: f64, df: f64) -> f64 {
    debug_assert!(x >= 0.0 && df > 0.0);
    if x == 0.0 {
        return 1.0;
    }
    statrs::function::gamma::gamma_ur(df / 2.0, x / 2.0)
}

/// Standard normal quantile, `Phi^-1(p)` for `p` in (0, 1).
pub(crate) fn normal_quantile(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

/// Two-sided normal tail probability for a z statistic. Accurate to about
/// 1e-10 in relative terms (the library's erf implementation bounds this).
pub(crate) fn two_sided_p(z: f64) -> f64 {
    let n = Normal::new(0.0, 1.0).unwrap();
    2.0 * n.sf(z.abs())
}

/// Indices 0..n sorted ascending by the given key slice.
/// Keys must be free of NaN; ties keep index order (stable).
pub(crate) fn argsort_by_f64(keys: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].partial_cmp(&keys[b]).expect("NaN key"));
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Reference values computed with an independent implementation (scipy).
    #[test]
    fn chi_square_sf_reference_values() {
        assert_relative_eq!(
            chi_square_sf(0.486486486486486, 1.0),
            4.854988026442825e-01,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            chi_square_sf(3.841458820694124, 1.0),
            5.0e-02,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            chi_square_sf(10.0, 4.0),
            4.042768199451279e-02,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            chi_square_sf(25.0, 9.0),
            2.971180485917624e-03,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            chi_square_sf(80.0, 3.0),
            3.069277486172416e-17,
            max_relative = 1e-10
        );
        assert_eq!(chi_square_sf(0.0, 4.0), 1.0);
    }

    #[test]
    fn normal_quantile_reference_values() {
        assert_relative_eq!(normal_quantile(0.975), 1.959963984540054, max_relative = 1e-12);
        assert_relative_eq!(normal_quantile(0.995), 2.575829303548900, max_relative = 1e-12);
        assert_relative_eq!(normal_quantile(0.9), 1.281551565544600, max_relative = 1e-12);
    }

    #[test]
    fn two_sided_p_matches_reference() {
        // z = 0.0392/0.04; tolerance reflects the erf precision noted above
        assert_relative_eq!(two_sided_p(0.98), 0.327086118655385, max_relative = 1e-9);
        assert_eq!(two_sided_p(0.0), 1.0);
    }
}
