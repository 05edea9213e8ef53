use super::{support_flag, AteRow, AteTable, CellFlag, CellKey, CellTable};
use crate::error::{Error, Result};
use crate::linalg::Square;
use crate::scalar::Scalar;

/// Kernel bandwidths, one per coordinate of `Z = [d, one-hot(s)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidths<T> {
    pub lambda: Vec<T>,
    /// Leave-one-out loss at `lambda`, when it came from cross-validation.
    pub cv_loss: Option<T>,
}

impl<T: Scalar> Bandwidths<T> {
    pub fn new(lambda: Vec<T>) -> Result<Self> {
        check_lambda(&lambda)?;
        Ok(Bandwidths { lambda, cv_loss: None })
    }

    pub fn constant(n: usize, value: T) -> Result<Self> {
        Bandwidths::new(vec![value; n])
    }
}

fn check_lambda<T: Scalar>(lambda: &[T]) -> Result<()> {
    for (v, &l) in lambda.iter().enumerate() {
        if !(l >= T::zero() && l <= T::one()) {
            return Err(Error::invalid(format!("bandwidth {v} = {l} outside [0, 1]")));
        }
    }
    Ok(())
}

/// Product kernel: factor 1 where `zi` and `z` agree, `λ_v` where they differ.
pub fn kernel_weight<T: Scalar>(zi: &[bool], z: &[bool], lambda: &[T]) -> Result<T> {
    if zi.len() != z.len() || z.len() != lambda.len() {
        return Err(Error::invalid(format!(
            "kernel dimensions differ: {} / {} / {}",
            zi.len(),
            z.len(),
            lambda.len()
        )));
    }
    check_lambda(lambda)?;
    Ok(zi
        .iter()
        .zip(z)
        .zip(lambda)
        .filter(|((a, b), _)| a != b)
        .fold(T::one(), |w, (_, &l)| w * l))
}

/// Kernel weight between two cells. Different partitions mismatch on exactly
/// two one-hot coordinates.
pub(crate) fn cell_weight<T: Scalar>(a: &CellKey, b: &CellKey, n_comp: usize, lambda: &[T]) -> T {
    let mut w = T::one();
    let diff = a.d.rank() ^ b.d.rank();
    if diff != 0 {
        for k in 0..n_comp {
            if diff >> (n_comp - 1 - k) & 1 == 1 {
                w = w * lambda[k];
            }
        }
    }
    if a.partition != b.partition {
        w = w * lambda[n_comp + a.partition - 1] * lambda[n_comp + b.partition - 1];
    }
    w
}

/// Weighted arm totals at one target cell.
#[derive(Debug, Clone, Copy)]
struct Moments<T> {
    /// Total kernel weight per arm (control, test).
    w: [T; 2],
    /// Weighted outcome sums per arm.
    s: [T; 2],
}

fn moments<T: Scalar>(z: &CellKey, lambda: &[T], table: &CellTable<T>) -> Moments<T> {
    let mut m = Moments { w: [T::zero(); 2], s: [T::zero(); 2] };
    for c in &table.cells {
        let l = cell_weight(z, &c.key, table.n_competitors, lambda);
        if l == T::zero() {
            continue;
        }
        for a in 0..2 {
            let arm = &c.arms[a];
            if arm.n > 0 {
                m.w[a] = m.w[a] + l * arm.nf();
                m.s[a] = m.s[a] + l * arm.nf() * arm.mean;
            }
        }
    }
    m
}

fn check_dims<T: Scalar>(lambda: &[T], table: &CellTable<T>) -> Result<()> {
    if lambda.len() != table.n_coords() {
        return Err(Error::invalid(format!(
            "{} bandwidths for {} kernel coordinates",
            lambda.len(),
            table.n_coords()
        )));
    }
    check_lambda(lambda)
}

/// Kernel-weighted OLS of `y` on `[1, D]` at `z`. The weighted normal
/// equations give `α` = weighted control mean and `τ` = weighted test mean
/// minus `α`.
pub fn kernel_theta<T: Scalar>(z: &CellKey, bw: &Bandwidths<T>, table: &CellTable<T>) -> Result<(T, T)> {
    check_dims(&bw.lambda, table)?;
    let m = moments(z, &bw.lambda, table);
    if m.w[0] == T::zero() || m.w[1] == T::zero() {
        return Err(Error::NotIdentified(format!("no kernel weight on one arm at {z}")));
    }
    let alpha = m.s[0] / m.w[0];
    Ok((alpha, m.s[1] / m.w[1] - alpha))
}

/// `(α, τ, se_α, se_τ)` at `z` with the sandwich `A⁻¹ Ω A⁻¹`, where
/// `A = Σ L X Xᵀ` and `Ω = Σ L ε̂² X Xᵀ` over all observations.
pub fn kernel_variance<T: Scalar>(z: &CellKey, bw: &Bandwidths<T>, table: &CellTable<T>) -> Result<[T; 4]> {
    let (alpha, tau) = kernel_theta(z, bw, table)?;
    let fitted = [alpha, alpha + tau];
    let mut w = [T::zero(); 2];
    let mut r = [T::zero(); 2];
    for c in &table.cells {
        let l = cell_weight(z, &c.key, table.n_competitors, &bw.lambda);
        if l == T::zero() {
            continue;
        }
        for a in 0..2 {
            let arm = &c.arms[a];
            if arm.n > 0 {
                let dev = arm.mean - fitted[a];
                w[a] = w[a] + l * arm.nf();
                r[a] = r[a] + l * (arm.m2 + arm.nf() * dev * dev);
            }
        }
    }
    // A = [[w0 + w1, w1], [w1, w1]] has determinant w0·w1 > 0 here; it is
    // inverted in closed form so tiny positive weights are not mistaken for
    // singularity.
    let omega = Square::from_rows(&[&[r[0] + r[1], r[1]], &[r[1], r[1]]]);
    let det = w[0] * w[1];
    let inv = Square::from_rows(&[&[w[1] / det, -w[1] / det], &[-w[1] / det, (w[0] + w[1]) / det]]);
    let cov = inv.mul(&omega).mul(&inv);
    Ok([alpha, tau, cov.get(0, 0).max(T::zero()).sqrt(), cov.get(1, 1).max(T::zero()).sqrt()])
}

/// Kernel estimates at every observed cell.
pub fn kernel_table<T: Scalar>(
    table: &CellTable<T>,
    bw: &Bandwidths<T>,
    focal: crate::design::CampaignId,
    min_arm: usize,
) -> Result<AteTable<T>> {
    check_dims(&bw.lambda, table)?;
    let mut rows = Vec::new();
    let mut ni = Vec::new();
    for c in &table.cells {
        let (nc, nt) = (c.arms[0].n, c.arms[1].n);
        match kernel_variance(&c.key, bw, table) {
            Ok([alpha, tau, se_alpha, se_tau]) => {
                let flag = match support_flag(nt, nc, min_arm) {
                    CellFlag::NotIdentified => CellFlag::LowSupport,
                    f => f,
                };
                rows.push(AteRow { key: c.key, alpha, tau, se_alpha, se_tau, n_test: nt, n_control: nc, flag });
            }
            Err(Error::NotIdentified(_)) => ni.push((c.key, nt, nc)),
            Err(e) => return Err(e),
        }
    }
    Ok(AteTable::finish(focal, table.n_competitors, rows, ni))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;

    #[test]
    fn weight_basics() {
        let z = [true, false, true];
        assert_eq!(kernel_weight(&z, &z, &[0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert!((kernel_weight(&[false, true, false], &z, &[0.5; 3]).unwrap() - 0.125f64).abs() < 1e-15);
        assert!(kernel_weight(&z, &z, &[1.5, 0.0, 0.0]).is_err());
        assert!(kernel_weight(&z, &z[..2], &[0.5; 3]).is_err());
    }

    #[test]
    fn cell_weight_matches_vector_form() {
        let lambda = [0.1f64, 0.2, 0.3, 0.4, 0.5, 0.6];
        let encode = |k: &CellKey| {
            let mut v: Vec<bool> = k.d.iter().collect();
            v.extend((1..=3).map(|q| q == k.partition));
            v
        };
        for a in 0..8u64 {
            for b in 0..8u64 {
                for (pa, pb) in [(1, 1), (1, 2), (3, 2)] {
                    let ka = CellKey { partition: pa, d: Bits::from_rank(3, a) };
                    let kb = CellKey { partition: pb, d: Bits::from_rank(3, b) };
                    let naive = kernel_weight(&encode(&ka), &encode(&kb), &lambda).unwrap();
                    let fast = cell_weight(&ka, &kb, 3, &lambda);
                    assert!((naive - fast).abs() < 1e-15);
                }
            }
        }
    }
}
