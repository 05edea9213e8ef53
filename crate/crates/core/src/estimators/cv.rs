//! Leave-one-out cross-validation of kernel bandwidths.
//!
//! Removing observation `i` from its own cell changes only that cell's
//! statistics, and the held-out prediction is the kernel-weighted mean of
//! `i`'s own arm at `Z_i`. With `W`, `S` the arm's total weight and weighted
//! sum at `Z_i` and `W' = W − 1`, the squared LOO error is
//! `(W / W')² (y_i − S / W)²`, so a whole cell-arm contributes
//! `(W / W')² [m2 + n (mean − S / W)²]`.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::kernel::{cell_weight, Bandwidths};
use super::CellTable;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    /// Relative loss improvement below which coordinate descent stops.
    pub tol: f64,
    /// Width of the final golden-section bracket.
    pub x_tol: f64,
    pub max_sweeps: usize,
    /// Random `{0, 0.5, 1}` corners tried besides the all-0, all-1 and
    /// all-0.5 starts.
    pub sampled_starts: usize,
    pub seed: u64,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { tol: 1e-4, x_tol: 1e-3, max_sweeps: 20, sampled_starts: 4, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvReport<T> {
    pub bandwidths: Bandwidths<T>,
    pub loss: T,
    /// Observations whose LOO fit was not identified at the optimum.
    pub skipped: usize,
    /// Coordinates that never differ between observed cells; their bandwidth
    /// does not affect any fit and is reported as 1.
    pub inert: Vec<usize>,
    pub evaluations: usize,
}

/// Sum of squared leave-one-out errors at `lambda`, and the number of
/// observations skipped because their fit was not identified without them.
pub fn cv_loss<T: Scalar>(table: &CellTable<T>, lambda: &[T]) -> Result<(T, usize)> {
    if lambda.len() != table.n_coords() {
        return Err(Error::invalid(format!("{} bandwidths for {} coordinates", lambda.len(), table.n_coords())));
    }
    Bandwidths::new(lambda.to_vec())?;
    let others = if dense_is_cheaper(table) { others_dense(table, lambda) } else { others_pairwise(table, lambda) };
    let mut loss = T::zero();
    let mut skipped = 0;
    for (c, o) in table.cells.iter().zip(&others) {
        for a in 0..2 {
            let arm = &c.arms[a];
            if arm.n == 0 {
                continue;
            }
            let b = 1 - a;
            let w_other_arm = o.w[b] + c.arms[b].nf();
            let w_loo = o.w[a] + T::of_usize(arm.n - 1);
            if w_loo == T::zero() || w_other_arm == T::zero() {
                skipped += arm.n;
                continue;
            }
            let w = o.w[a] + arm.nf();
            let m = (o.s[a] + arm.nf() * arm.mean) / w;
            let r = w / w_loo;
            let dev = arm.mean - m;
            loss = loss + r * r * (arm.m2 + arm.nf() * dev * dev);
        }
    }
    let total: usize = table.cells.iter().map(|c| c.arms[0].n + c.arms[1].n).sum();
    if skipped == total {
        return Err(Error::NotIdentified("every leave-one-out fit is unidentified".into()));
    }
    Ok((loss, skipped))
}

/// Weight and weighted sum per arm from cells other than the target.
#[derive(Debug, Clone, Copy)]
struct Others<T> {
    w: [T; 2],
    s: [T; 2],
}

fn others_pairwise<T: Scalar>(table: &CellTable<T>, lambda: &[T]) -> Vec<Others<T>> {
    table
        .cells
        .iter()
        .enumerate()
        .map(|(i, z)| {
            let mut o = Others { w: [T::zero(); 2], s: [T::zero(); 2] };
            for (j, c) in table.cells.iter().enumerate() {
                if i == j {
                    continue;
                }
                let l = cell_weight(&z.key, &c.key, table.n_competitors, lambda);
                if l == T::zero() {
                    continue;
                }
                for a in 0..2 {
                    let n = c.arms[a].nf();
                    o.w[a] = o.w[a] + l * n;
                    o.s[a] = o.s[a] + l * n * c.arms[a].mean;
                }
            }
            o
        })
        .collect()
}

const DENSE_LIMIT: usize = 1 << 22;

fn dense_is_cheaper<T>(table: &CellTable<T>) -> bool {
    let nc = table.n_competitors;
    if nc >= 40 {
        return false;
    }
    let size = table.n_partitions << nc;
    let c = table.cells.len();
    size <= DENSE_LIMIT && size.saturating_mul(nc + table.n_partitions + 1) < c.saturating_mul(c)
}

/// Same result as `others_pairwise`, via a per-coordinate transform over the
/// full `partition × d` grid. `own` holds each grid point's own statistics and
/// `far` everything reached by flipping at least one coordinate.
fn others_dense<T: Scalar>(table: &CellTable<T>, lambda: &[T]) -> Vec<Others<T>> {
    let nc = table.n_competitors;
    let q = table.n_partitions;
    let cube = 1usize << nc;
    // four values per grid point: w0, s0, w1, s1
    let mut own = vec![T::zero(); q * cube * 4];
    for c in &table.cells {
        let base = ((c.key.partition - 1) * cube + c.key.d.rank() as usize) * 4;
        for a in 0..2 {
            let n = c.arms[a].nf();
            own[base + 2 * a] = n;
            own[base + 2 * a + 1] = n * c.arms[a].mean;
        }
    }
    let mut far = vec![T::zero(); q * cube * 4];
    for k in 0..nc {
        let l = lambda[k];
        let bit = 1usize << (nc - 1 - k);
        if l == T::zero() {
            continue;
        }
        for p in 0..q {
            for d in 0..cube {
                if d & bit != 0 {
                    continue;
                }
                let (x, y) = ((p * cube + d) * 4, (p * cube + (d | bit)) * 4);
                for v in 0..4 {
                    let (ox, oy, fx, fy) = (own[x + v], own[y + v], far[x + v], far[y + v]);
                    far[x + v] = fx + l * (oy + fy);
                    far[y + v] = fy + l * (ox + fx);
                }
            }
        }
    }
    table
        .cells
        .iter()
        .map(|c| {
            let p = c.key.partition - 1;
            let i = c.key.d.rank() as usize * 4;
            let mut v = [T::zero(); 4];
            for (t, slot) in v.iter_mut().enumerate() {
                // other partitions at the same or flipped d
                let mut from_other = T::zero();
                for p2 in (0..q).filter(|&p2| p2 != p) {
                    let g = p2 * cube * 4 + i + t;
                    from_other = from_other + lambda[nc + p2] * (own[g] + far[g]);
                }
                *slot = far[p * cube * 4 + i + t] + lambda[nc + p] * from_other;
            }
            Others { w: [v[0], v[2]], s: [v[1], v[3]] }
        })
        .collect()
}

/// Coordinates that differ between at least two observed cells.
fn active_coords<T>(table: &CellTable<T>) -> Vec<bool> {
    let nc = table.n_competitors;
    let mut active = vec![false; table.n_coords()];
    if let Some(first) = table.cells.first() {
        for c in &table.cells[1..] {
            let diff = c.key.d.rank() ^ first.key.d.rank();
            for (k, a) in active.iter_mut().enumerate().take(nc) {
                if diff >> (nc - 1 - k) & 1 == 1 {
                    *a = true;
                }
            }
        }
        let parts: std::collections::BTreeSet<usize> = table.cells.iter().map(|c| c.key.partition).collect();
        if parts.len() > 1 {
            for p in parts {
                active[nc + p - 1] = true;
            }
        }
    }
    active
}

/// Bandwidths minimizing the LOO criterion by multi-start coordinate descent
/// with golden-section line searches.
pub fn cv_bandwidths<T: Scalar>(table: &CellTable<T>, options: &CvOptions) -> Result<CvReport<T>> {
    let n: usize = table.cells.iter().map(|c| c.arms[0].n + c.arms[1].n).sum();
    if n < 2 {
        return Err(Error::invalid("cross-validation needs at least two observations"));
    }
    let v = table.n_coords();
    let active = active_coords(table);
    let inert: Vec<usize> = (0..v).filter(|&k| !active[k]).collect();
    let free: Vec<usize> = (0..v).filter(|&k| active[k]).collect();

    let mut starts: Vec<Vec<f64>> = vec![vec![0.0; v], vec![1.0; v], vec![0.5; v]];
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    for _ in 0..options.sampled_starts {
        starts.push((0..v).map(|_| *[0.0, 0.5, 1.0].choose(&mut rng).expect("nonempty")).collect());
    }
    for s in &mut starts {
        for &k in &inert {
            s[k] = 1.0;
        }
    }
    starts.dedup();

    let results: Vec<Result<(Vec<T>, T, usize)>> = starts
        .par_iter()
        .map(|s| descend(table, s.iter().map(|&x| T::of(x)).collect(), &free, options))
        .collect();
    let mut best: Option<(Vec<T>, T)> = None;
    let mut evaluations = 0;
    let mut last_err = None;
    for r in results {
        match r {
            Ok((lambda, loss, evals)) => {
                evaluations += evals;
                if best.as_ref().is_none_or(|(_, b)| loss < *b) {
                    best = Some((lambda, loss));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let (lambda, loss) = match best {
        Some(b) => b,
        None => return Err(last_err.unwrap_or_else(|| Error::NotIdentified("no cross-validation start succeeded".into()))),
    };
    let (_, skipped) = cv_loss(table, &lambda)?;
    Ok(CvReport {
        bandwidths: Bandwidths { lambda, cv_loss: Some(loss) },
        loss,
        skipped,
        inert,
        evaluations,
    })
}

/// Loss that treats unidentified LOO configurations as +∞, so the search
/// never prefers a bandwidth at which every point is skipped.
fn objective<T: Scalar>(table: &CellTable<T>, lambda: &[T]) -> T {
    cv_loss(table, lambda).map(|(l, _)| l).unwrap_or(T::infinity())
}

fn descend<T: Scalar>(
    table: &CellTable<T>,
    mut lambda: Vec<T>,
    free: &[usize],
    options: &CvOptions,
) -> Result<(Vec<T>, T, usize)> {
    let mut evals = 1;
    let mut loss = objective(table, &lambda);
    for _ in 0..options.max_sweeps {
        let before = loss;
        for &k in free {
            let (x, f, e) = line_search(table, &mut lambda, k, loss, options.x_tol);
            evals += e;
            if f < loss {
                lambda[k] = x;
                loss = f;
            }
        }
        if !loss.is_finite() {
            break;
        }
        let gain = (before - loss).as_f64();
        if gain <= options.tol * loss.as_f64().abs().max(f64::MIN_POSITIVE) {
            break;
        }
    }
    if !loss.is_finite() {
        return Err(Error::NotIdentified("leave-one-out criterion is undefined from this start".into()));
    }
    Ok((lambda, loss, evals))
}

/// Golden-section search of coordinate `k` on `[0, 1]`, also checking both
/// endpoints. Leaves `lambda[k]` unchanged; returns the best point found.
fn line_search<T: Scalar>(table: &CellTable<T>, lambda: &mut [T], k: usize, current: T, x_tol: f64) -> (T, T, usize) {
    let orig = lambda[k];
    let mut evals = 0;
    let mut eval = |x: f64, lambda: &mut [T]| {
        lambda[k] = T::of(x);
        evals += 1;
        objective(table, lambda)
    };
    let mut best = (orig, current);
    let consider = |x: f64, f: T, best: &mut (T, T)| {
        if f < best.1 {
            *best = (T::of(x), f);
        }
    };
    for x in [0.0, 1.0] {
        let f = eval(x, lambda);
        consider(x, f, &mut best);
    }
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0f64, 1.0f64);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = eval(c, lambda);
    let mut fd = eval(d, lambda);
    while b - a > x_tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = eval(c, lambda);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = eval(d, lambda);
        }
    }
    consider(c, fc, &mut best);
    consider(d, fd, &mut best);
    lambda[k] = orig;
    (best.0, best.1, evals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;
    use crate::design::CampaignId;
    use crate::estimators::{EstimationData, Observation};
    use rand::Rng;

    fn random_data(seed: u64, nc: usize, q: usize, n: usize) -> EstimationData<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = (0..n as u64)
            .map(|u| Observation {
                user_id: u,
                d: Bits::from_rank(nc, rng.random_range(0..1u64 << nc)),
                partition: rng.random_range(1..=q),
                treated: rng.random_bool(0.6),
                y: rng.random::<f64>() * 3.0,
            })
            .collect();
        EstimationData::new(CampaignId(1), nc, q, obs).unwrap()
    }

    fn naive_loss(data: &EstimationData<f64>, lambda: &[f64]) -> (f64, usize) {
        let zs: Vec<Vec<bool>> = data.obs.iter().map(|o| data.z_vector(o)).collect();
        let mut loss = 0.0;
        let mut skipped = 0;
        for (i, oi) in data.obs.iter().enumerate() {
            let mut w = [0.0; 2];
            let mut s = [0.0; 2];
            for (j, oj) in data.obs.iter().enumerate() {
                if i == j {
                    continue;
                }
                let l = crate::estimators::kernel_weight(&zs[j], &zs[i], lambda).unwrap();
                w[oj.treated as usize] += l;
                s[oj.treated as usize] += l * oj.y;
            }
            if w[0] == 0.0 || w[1] == 0.0 {
                skipped += 1;
                continue;
            }
            let a = oi.treated as usize;
            loss += (oi.y - s[a] / w[a]).powi(2);
        }
        (loss, skipped)
    }

    #[test]
    fn sufficient_statistics_match_naive_loop() {
        for (seed, nc, q) in [(1, 2, 1), (2, 3, 2), (3, 1, 3)] {
            let data = random_data(seed, nc, q, 120);
            let table = data.cells();
            for lambda in [vec![0.0; nc + q], vec![1.0; nc + q], (0..nc + q).map(|k| 0.1 + 0.2 * k as f64).collect()] {
                let (fast, fs) = cv_loss(&table, &lambda).unwrap();
                let (slow, ss) = naive_loss(&data, &lambda);
                assert_eq!(fs, ss);
                assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0), "{fast} vs {slow}");
            }
        }
    }

    #[test]
    fn dense_and_pairwise_agree() {
        let data = random_data(7, 4, 3, 400);
        let table = data.cells();
        let lambda = [0.3, 0.0, 0.9, 0.5, 0.2, 0.7, 1.0];
        let a = others_dense(&table, &lambda);
        let b = others_pairwise(&table, &lambda);
        for (x, y) in a.iter().zip(&b) {
            for t in 0..2 {
                assert!((x.w[t] - y.w[t]).abs() < 1e-10 * y.w[t].max(1.0));
                assert!((x.s[t] - y.s[t]).abs() < 1e-10 * y.s[t].abs().max(1.0));
            }
        }
    }

    #[test]
    fn optimum_dominates_anchors() {
        let data = random_data(11, 3, 2, 300);
        let table = data.cells();
        let rep = cv_bandwidths(&table, &CvOptions::default()).unwrap();
        let v = table.n_coords();
        for anchor in [0.0, 1.0] {
            if let Ok((l, _)) = cv_loss(&table, &vec![anchor; v]) {
                assert!(rep.loss <= l);
            }
        }
    }
}
