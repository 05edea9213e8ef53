use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::linalg::Square;
use crate::scalar::Scalar;

/// Fit of `y = α + β1 D_j + β2 D_k + β3 D_j D_k + ε` with HC0 errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionFit<T> {
    /// `[α, β1, β2, β3]`.
    pub coef: [T; 4],
    pub se: [T; 4],
    /// Two-sided normal p-values for each coefficient being zero.
    pub p_value: [f64; 4],
    /// Users per `(D_j, D_k)` cell in order `00, 01, 10, 11`.
    pub counts: [usize; 4],
}

/// Two-sided p-value of a standard normal statistic.
pub(crate) fn normal_two_sided(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

/// `rows` holds `(D_j, D_k, y)` per user.
pub fn interaction_ols<T: Scalar>(rows: &[(bool, bool, T)]) -> Result<InteractionFit<T>> {
    let mut counts = [0usize; 4];
    for &(dj, dk, _) in rows {
        counts[(dj as usize) * 2 + dk as usize] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::NotIdentified(format!(
            "interaction regression needs all four (D_j, D_k) cells; counts 00/01/10/11 = {counts:?}"
        )));
    }
    let x = |dj: bool, dk: bool| {
        let (a, b) = (if dj { T::one() } else { T::zero() }, if dk { T::one() } else { T::zero() });
        [T::one(), a, b, a * b]
    };
    let mut xtx = Square::zeros(4);
    let mut xty = [T::zero(); 4];
    for &(dj, dk, y) in rows {
        let xi = x(dj, dk);
        xtx.add_outer(&xi, T::one());
        for (acc, v) in xty.iter_mut().zip(xi) {
            *acc = *acc + v * y;
        }
    }
    let inv = xtx.inverse().ok_or_else(|| Error::NotIdentified("singular design".into()))?;
    let b = inv.mul_vec(&xty);
    let coef = [b[0], b[1], b[2], b[3]];
    let mut meat = Square::zeros(4);
    for &(dj, dk, y) in rows {
        let xi = x(dj, dk);
        let e = y - xi.iter().zip(&coef).map(|(&a, &c)| a * c).sum::<T>();
        meat.add_outer(&xi, e * e);
    }
    let cov = inv.mul(&meat).mul(&inv);
    let mut se = [T::zero(); 4];
    let mut p_value = [1.0; 4];
    for i in 0..4 {
        se[i] = cov.get(i, i).max(T::zero()).sqrt();
        let s = se[i].as_f64();
        p_value[i] = if s > 0.0 {
            normal_two_sided(coef[i].as_f64() / s)
        } else if coef[i] == T::zero() {
            1.0
        } else {
            0.0
        };
    }
    Ok(InteractionFit { coef, se, p_value, counts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<(bool, bool, f64)> {
        let mut r = Vec::new();
        for (dj, dk, ys) in [
            (false, false, [1.0, 2.0, 3.0]),
            (false, true, [2.0, 2.5, 4.0]),
            (true, false, [5.0, 6.0, 4.0]),
            (true, true, [1.0, 0.0, 3.5]),
        ] {
            r.extend(ys.iter().map(|&y| (dj, dk, y)));
        }
        r
    }

    #[test]
    fn saturated_identity() {
        let fit = interaction_ols(&rows()).unwrap();
        let (m00, m01, m10, m11) = (2.0, 8.5 / 3.0, 5.0, 1.5);
        assert!((fit.coef[0] - m00).abs() < 1e-12);
        assert!((fit.coef[1] - (m10 - m00)).abs() < 1e-12);
        assert!((fit.coef[2] - (m01 - m00)).abs() < 1e-12);
        assert!((fit.coef[3] - (m11 - m10 - m01 + m00)).abs() < 1e-12);
    }

    #[test]
    fn empty_cell_not_identified() {
        let r: Vec<_> = rows().into_iter().filter(|r| !(r.0 && r.1)).collect();
        assert!(matches!(interaction_ols(&r), Err(Error::NotIdentified(_))));
    }

    #[test]
    fn p_value_of_zero_statistic_is_one() {
        assert_eq!(normal_two_sided(0.0), 1.0);
        let p = normal_two_sided(1.959963984540054);
        assert!((p - 0.05).abs() < 1e-10, "{p}");
    }
}
