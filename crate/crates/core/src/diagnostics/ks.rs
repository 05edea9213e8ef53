use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

pub const MIN_KS_N: usize = 5;
const SERIES_EPS: f64 = 1e-10;

/// Survival function of the Kolmogorov distribution, `P(K > x)`.
///
/// For `x ≥ 1` the alternating series `2 Σ (−1)^(k−1) exp(−2k²x²)` converges
/// in a few terms; below that the equivalent theta-function form
/// `√(2π)/x Σ exp(−(2k−1)²π²/(8x²))` for the CDF is used instead. Both stop
/// once a term drops below 1e-10.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.0 {
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let mut cdf = 0.0;
        for k in 1.. {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * pi2 / (8.0 * x * x)).exp();
            cdf += term;
            if term < SERIES_EPS {
                break;
            }
        }
        let cdf = cdf * (2.0 * std::f64::consts::PI).sqrt() / x;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    for k in 1.. {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < SERIES_EPS {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov-Smirnov test against U(0, 1) with the asymptotic
/// p-value `P(K > √n D)`.
pub fn ks_uniformity(values: &[f64]) -> Result<KsResult> {
    if values.len() < MIN_KS_N {
        return Err(Error::invalid(format!("KS test needs at least {MIN_KS_N} values, got {}", values.len())));
    }
    if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("value {v} outside [0, 1]")));
    }
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n - x).max(x - i as f64 / n))
        .fold(0.0, f64::max);
    Ok(KsResult { statistic: d, p_value: kolmogorov_sf(n.sqrt() * d), n: xs.len() })
}

/// `(i / (n + 1), x_(i))` pairs for a uniform quantile plot.
pub fn quantile_pairs(values: &[f64]) -> Vec<(f64, f64)> {
    let mut xs = values.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.into_iter().enumerate().map(|(i, x)| ((i + 1) as f64 / (n + 1.0), x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_half_gives_half() {
        let r = ks_uniformity(&[0.5; 10]).unwrap();
        assert!((r.statistic - 0.5).abs() < 1e-15);
    }

    #[test]
    fn series_forms_agree_at_switch() {
        // both branches evaluated near x = 1
        let below = kolmogorov_sf(1.0 - 1e-9);
        let above = kolmogorov_sf(1.0);
        assert!((below - above).abs() < 1e-8, "{below} vs {above}");
    }

    #[test]
    fn known_critical_value() {
        // 5% critical value of the Kolmogorov distribution
        assert!((kolmogorov_sf(1.3580986393225505) - 0.05).abs() < 1e-9);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ks_uniformity(&[0.1, 0.2]).is_err());
        assert!(ks_uniformity(&[0.1, 0.2, 0.3, 0.4, 1.2]).is_err());
    }

    #[test]
    fn order_invariant() {
        let a = [0.9, 0.1, 0.35, 0.6, 0.42, 0.77];
        let mut b = a;
        b.reverse();
        assert_eq!(ks_uniformity(&a).unwrap(), ks_uniformity(&b).unwrap());
    }
}
