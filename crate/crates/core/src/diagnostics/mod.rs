//! Randomization checks, p-value uniformity tests and summaries of effect
//! heterogeneity across states of the world.

mod heterogeneity;
mod ks;

pub use heterogeneity::{box_stats, heterogeneity_summary, BoxStats, HeterogeneitySummary, SplitCdf};
pub use ks::{kolmogorov_sf, ks_uniformity, quantile_pairs, KsResult};

use rand_distr::{Distribution, Gamma, Poisson};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimators::interaction::normal_two_sided;
use crate::linalg::Square;
use crate::randomize::{substream, Arm, Stream};

pub const MIN_PROPORTION_N: usize = 30;

/// Two-sided normal test of `H0: share of test = target`.
pub fn proportion_test<I>(arms: I, target: f64) -> Result<f64>
where
    I: IntoIterator<Item = Arm>,
{
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::invalid(format!("target share {target} outside [0, 1]")));
    }
    let (mut n, mut t) = (0usize, 0usize);
    for a in arms {
        n += 1;
        t += a.is_test() as usize;
    }
    if n == 0 {
        return Err(Error::invalid("proportion test on an empty assignment list"));
    }
    if n < MIN_PROPORTION_N {
        return Err(Error::invalid(format!("proportion test needs at least {MIN_PROPORTION_N} users, got {n}")));
    }
    let share = t as f64 / n as f64;
    if target == 0.0 || target == 1.0 {
        return Ok(if share == target { 1.0 } else { 0.0 });
    }
    let z = (share - target) / (target * (1.0 - target) / n as f64).sqrt();
    Ok(normal_two_sided(z))
}

/// Wald test that covariate means are equal across arms, using the
/// heteroskedasticity-robust covariance `S_test / n_test + S_control / n_control`
/// (sample covariances divided by `n`). `rows[i]` are user `i`'s covariates.
pub fn balance_test(rows: &[Vec<f64>], treated: &[bool]) -> Result<f64> {
    if rows.len() != treated.len() {
        return Err(Error::invalid("covariate rows and arms differ in length"));
    }
    let p = rows.first().map(Vec::len).unwrap_or(0);
    if p == 0 {
        return Err(Error::invalid("balance test needs at least one covariate"));
    }
    if rows.iter().any(|r| r.len() != p) {
        return Err(Error::invalid("ragged covariate matrix"));
    }
    let mut stats = [(0usize, vec![0.0; p]), (0usize, vec![0.0; p])];
    for (r, &t) in rows.iter().zip(treated) {
        let s = &mut stats[t as usize];
        s.0 += 1;
        for (acc, v) in s.1.iter_mut().zip(r) {
            *acc += v;
        }
    }
    if stats[0].0 == 0 || stats[1].0 == 0 {
        return Err(Error::invalid("balance test needs both arms nonempty"));
    }
    let means: Vec<Vec<f64>> = stats.iter().map(|(n, s)| s.iter().map(|v| v / *n as f64).collect()).collect();
    let mut cov = [Square::zeros(p), Square::zeros(p)];
    for (r, &t) in rows.iter().zip(treated) {
        let a = t as usize;
        let dev: Vec<f64> = r.iter().zip(&means[a]).map(|(x, m)| x - m).collect();
        cov[a].add_outer(&dev, 1.0);
    }
    let mut v = Square::zeros(p);
    for a in 0..2 {
        let n = stats[a].0 as f64;
        for i in 0..p {
            for j in 0..p {
                v.set(i, j, v.get(i, j) + cov[a].get(i, j) / (n * n));
            }
        }
    }
    let inv = v.inverse().ok_or_else(|| {
        Error::invalid(format!(
            "singular covariance of covariate mean differences (covariates 0..{p}; check for constant or collinear columns)"
        ))
    })?;
    let delta: Vec<f64> = means[1].iter().zip(&means[0]).map(|(a, b)| a - b).collect();
    let w: f64 = inv.mul_vec(&delta).iter().zip(&delta).map(|(a, b)| a * b).sum();
    let chi = ChiSquared::new(p as f64).expect("positive degrees of freedom");
    Ok(chi.sf(w.max(0.0)))
}

/// Pre-period behaviour of a user (page visits, carts, orders, sales), drawn
/// from its own substream and so independent of every assignment.
pub fn simulate_covariates(user_id: u64, seed: u64) -> [f64; 4] {
    let mut rng = substream(seed, Stream::Covariates, user_id, 0);
    let visits: f64 = Poisson::new(6.0).expect("rate").sample(&mut rng);
    let carts: f64 = Poisson::new(1.0 + 0.2 * visits).expect("rate").sample(&mut rng);
    let orders: f64 = Poisson::new(0.3 + 0.3 * carts).expect("rate").sample(&mut rng);
    let basket = Gamma::new(4.0, 8.0).expect("params");
    let sales = (0..orders as u64).map(|_| basket.sample(&mut rng)).sum();
    [visits, carts, orders, sales]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_share_gives_p_one() {
        let arms: Vec<Arm> = (0..100).map(|i| if i < 70 { Arm::Test } else { Arm::Control }).collect();
        assert_eq!(proportion_test(arms, 0.7).unwrap(), 1.0);
    }

    #[test]
    fn huge_deviation() {
        let arms = (0..1_000_000).map(|i| if i % 2 == 0 { Arm::Test } else { Arm::Control });
        assert!(proportion_test(arms, 0.7).unwrap() < 1e-10);
    }

    #[test]
    fn proportion_needs_data() {
        assert!(proportion_test(Vec::new(), 0.5).is_err());
        assert!(proportion_test(vec![Arm::Test; 10], 0.5).is_err());
    }

    #[test]
    fn single_covariate_matches_z_test() {
        let rows: Vec<Vec<f64>> = (0..200).map(|i| vec![((i * 37) % 23) as f64 + if i % 3 == 0 { 0.8 } else { 0.0 }]).collect();
        let treated: Vec<bool> = (0..200).map(|i| i % 3 == 0).collect();
        let p = balance_test(&rows, &treated).unwrap();
        let (t, c): (Vec<f64>, Vec<f64>) = {
            let t = rows.iter().zip(&treated).filter(|(_, &d)| d).map(|(r, _)| r[0]).collect();
            let c = rows.iter().zip(&treated).filter(|(_, &d)| !d).map(|(r, _)| r[0]).collect();
            (t, c)
        };
        let mv = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
        };
        let ((mt, vt), (mc, vc)) = (mv(&t), mv(&c));
        let z = (mt - mc) / (vt / t.len() as f64 + vc / c.len() as f64).sqrt();
        assert!((p - normal_two_sided(z)).abs() < 1e-8);
    }

    #[test]
    fn shifted_covariate_rejects() {
        let rows: Vec<Vec<f64>> = (0..1000)
            .map(|i| {
                let base = simulate_covariates(i, 3);
                vec![base[0] + if i % 2 == 0 { 25.0 } else { 0.0 }, base[1], base[2]]
            })
            .collect();
        let treated: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        assert!(balance_test(&rows, &treated).unwrap() < 1e-10);
    }

    #[test]
    fn constant_covariate_is_singular() {
        let rows = vec![vec![1.0, 2.0]; 50];
        let treated: Vec<bool> = (0..50).map(|i| i % 2 == 0).collect();
        assert!(balance_test(&rows, &treated).is_err());
    }
}
