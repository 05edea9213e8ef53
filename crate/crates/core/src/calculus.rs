//! Combining degenerate ATEs into experimentation-aware and prospective ATEs.
//!
//! A degenerate table holds `τ_j(ω)` for every state `ω` of the competitors
//! targeting one partition. Competitors outside the partition never reach its
//! users, so any state is looked up with their coordinates set to 0.

use std::collections::BTreeMap;

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::estimators::AteTable;
use crate::scalar::Scalar;

/// `(1 − σ) τ0 + σ τ1`: the focal ATE when a competitor experiments with
/// test share `σ`.
pub fn mix_sigma<T: Scalar>(tau0: T, tau1: T, sigma: T) -> Result<T> {
    if !(sigma >= T::zero() && sigma <= T::one()) {
        return Err(Error::invalid(format!("share {sigma} outside [0, 1]")));
    }
    Ok((T::one() - sigma) * tau0 + sigma * tau1)
}

/// Belief about one competitor's next-period behaviour.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompetitorBelief<T> {
    /// `p_j(0)`: not advertising.
    pub p_not_adv: T,
    /// `p_j(1)`: advertising without experimenting.
    pub p_adv_not_exp: T,
    /// `p*_j(1)`: advertising and experimenting.
    pub p_adv_exp: T,
    /// Test share used when experimenting.
    pub sigma: T,
}

impl<T: Scalar> CompetitorBelief<T> {
    pub fn new(p_not_adv: T, p_adv_not_exp: T, p_adv_exp: T, sigma: T) -> Result<Self> {
        let b = CompetitorBelief { p_not_adv, p_adv_not_exp, p_adv_exp, sigma };
        b.validate()?;
        Ok(b)
    }

    /// Advertises with probability `p` and never experiments.
    pub fn advertising(p: T) -> Result<Self> {
        CompetitorBelief::new(T::one() - p, p, T::zero(), T::zero())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("p_not_adv", self.p_not_adv),
            ("p_adv_not_exp", self.p_adv_not_exp),
            ("p_adv_exp", self.p_adv_exp),
            ("sigma", self.sigma),
        ] {
            if !(v >= T::zero() && v <= T::one()) {
                return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
            }
        }
        let sum = self.p_not_adv + self.p_adv_not_exp + self.p_adv_exp;
        if (sum - T::one()).abs().as_f64() > 1e-12 {
            return Err(Error::invalid(format!("belief probabilities sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// `p_{ω}(σ)`: probability that a user faces the competitor in state `ω`.
    pub fn weight(&self, omega: bool) -> T {
        if omega {
            self.p_adv_not_exp + self.p_adv_exp * self.sigma
        } else {
            self.p_not_adv + self.p_adv_exp * (T::one() - self.sigma)
        }
    }
}

/// Beliefs over all competitor coordinates: independent per competitor, or a
/// joint table of state probabilities.
#[derive(Debug, Clone, PartialEq)]
pub enum BeliefProfile<T> {
    Independent(Vec<CompetitorBelief<T>>),
    Joint(Vec<(Bits, T)>),
}

impl<T: Scalar> BeliefProfile<T> {
    pub fn len(&self) -> Option<usize> {
        match self {
            BeliefProfile::Independent(v) => Some(v.len()),
            BeliefProfile::Joint(rows) => rows.first().map(|(b, _)| b.len()),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len().is_none_or(|n| n == 0)
    }
}

/// `τ_j(ω | P_j(q))` over the states of one partition's competitor set.
#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateTable<T> {
    /// Competitors targeting the partition, over all competitor coordinates.
    pub present: Bits,
    taus: BTreeMap<Bits, T>,
}

impl<T: Scalar> DegenerateTable<T> {
    /// `taus` are keyed by full-length states whose absent coordinates are 0.
    pub fn new(present: Bits, taus: BTreeMap<Bits, T>) -> Result<Self> {
        for s in taus.keys() {
            if s.len() != present.len() {
                return Err(Error::invalid(format!("state {s} has the wrong length")));
            }
            if s.mask(&present) != *s {
                return Err(Error::invalid(format!("state {s} activates a competitor outside the partition")));
            }
        }
        Ok(DegenerateTable { present, taus })
    }

    pub fn from_ate_table(table: &AteTable<T>, partition: usize, present: Bits) -> Result<Self> {
        DegenerateTable::new(present, table.taus(partition))
    }

    pub fn n_competitors(&self) -> usize {
        self.present.len()
    }

    pub fn present_coords(&self) -> Vec<usize> {
        self.present.ones_positions().collect()
    }

    pub fn states(&self) -> impl Iterator<Item = (&Bits, &T)> {
        self.taus.iter()
    }

    /// `τ(ω)` with absent competitors projected to 0.
    pub fn tau(&self, omega: &Bits) -> Result<T> {
        let key = omega.mask(&self.present);
        self.taus
            .get(&key)
            .copied()
            .ok_or_else(|| Error::NotIdentified(format!("no degenerate ATE for state {key}")))
    }

    /// All `2^m` states of the present competitors, as full-length vectors.
    fn relevant_states(&self) -> Vec<Bits> {
        let coords = self.present_coords();
        Bits::all(coords.len())
            .map(|sub| {
                let mut s = Bits::zeros(self.present.len());
                for (i, &k) in coords.iter().enumerate() {
                    s.set(k, sub.get(i));
                }
                s
            })
            .collect()
    }

    fn check_complete(&self) -> Result<()> {
        let missing: Vec<String> =
            self.relevant_states().into_iter().filter(|s| !self.taus.contains_key(s)).map(|s| s.to_string()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::NotIdentified(format!("missing degenerate ATEs for states {}", missing.join(", "))))
        }
    }

    /// Unweighted mean of `τ` over states with `ω_k = value`, averaging over
    /// the remaining present competitors.
    pub fn averaged(&self, k: usize, value: bool) -> Result<T> {
        self.check_complete()?;
        let mut sum = T::zero();
        let mut n = 0usize;
        for s in self.relevant_states() {
            let s = if self.present.get(k) { s.with(k, value) } else { s };
            sum = sum + self.tau(&s)?;
            n += 1;
        }
        Ok(sum / T::of_usize(n))
    }
}

/// Belief-weighted average of degenerate ATEs.
pub fn prospective_ate<T: Scalar>(table: &DegenerateTable<T>, beliefs: &BeliefProfile<T>) -> Result<T> {
    let n = table.n_competitors();
    if beliefs.len().is_some_and(|l| l != n) {
        return Err(Error::invalid(format!("beliefs cover {:?} competitors, table has {n}", beliefs.len())));
    }
    match beliefs {
        BeliefProfile::Independent(bs) => {
            for b in bs {
                b.validate()?;
            }
            table.check_complete()?;
            // absent competitors' weights sum to 1 on their own, so only the
            // present coordinates need enumerating
            let mut total = T::zero();
            let mut wsum = T::zero();
            for s in table.relevant_states() {
                let w = table.present.ones_positions().fold(T::one(), |w, k| w * bs[k].weight(s.get(k)));
                total = total + w * table.tau(&s)?;
                wsum = wsum + w;
            }
            if (wsum - T::one()).abs().as_f64() > 1e-9 {
                return Err(Error::invalid(format!("state weights sum to {wsum}, not 1")));
            }
            Ok(total)
        }
        BeliefProfile::Joint(rows) => {
            let mut total = T::zero();
            let mut wsum = T::zero();
            for (s, w) in rows {
                if !(*w >= T::zero()) {
                    return Err(Error::invalid(format!("negative weight for state {s}")));
                }
                wsum = wsum + *w;
                if *w > T::zero() {
                    total = total + *w * table.tau(s)?;
                }
            }
            if (wsum - T::one()).abs().as_f64() > 1e-9 {
                return Err(Error::invalid(format!("state weights sum to {wsum}, not 1")));
            }
            Ok(total)
        }
    }
}

/// How competitors other than the one on the curve's axis are averaged out.
#[derive(Debug, Clone, PartialEq)]
pub enum Averaging<T> {
    /// Every state of the remaining competitors counts equally.
    Unweighted,
    /// Remaining competitors follow these beliefs (the entry for the axis
    /// competitor is ignored).
    Beliefs(Vec<CompetitorBelief<T>>),
}

fn others_beliefs<T: Scalar>(n: usize, k: usize, averaging: &Averaging<T>, axis: CompetitorBelief<T>) -> Result<Vec<CompetitorBelief<T>>> {
    let half = T::of(0.5);
    let mut bs = match averaging {
        Averaging::Unweighted => vec![CompetitorBelief::new(half, half, T::zero(), T::zero())?; n],
        Averaging::Beliefs(b) if b.len() == n => b.clone(),
        Averaging::Beliefs(b) => {
            return Err(Error::invalid(format!("{} beliefs for {n} competitors", b.len())));
        }
    };
    bs[k] = axis;
    Ok(bs)
}

fn check_grid<T: Scalar>(grid: &[T], what: &str) -> Result<()> {
    for &p in grid {
        if !(p >= T::zero() && p <= T::one()) {
            return Err(Error::invalid(format!("{what} grid value {p} outside [0, 1]")));
        }
    }
    Ok(())
}

/// `p τ̄(ω_k = 1) + (1 − p) τ̄(ω_k = 0)` over a grid of `p`, optionally divided
/// by the curve's largest absolute value.
pub fn competitor_curve<T: Scalar>(
    table: &DegenerateTable<T>,
    k: usize,
    grid: &[T],
    averaging: &Averaging<T>,
    normalize: bool,
) -> Result<Vec<(T, T)>> {
    check_grid(grid, "probability")?;
    if k >= table.n_competitors() {
        return Err(Error::invalid(format!("competitor coordinate {k} out of range")));
    }
    let mut curve = Vec::with_capacity(grid.len());
    for &p in grid {
        let bs = others_beliefs(table.n_competitors(), k, averaging, CompetitorBelief::advertising(p)?)?;
        curve.push((p, prospective_ate(table, &BeliefProfile::Independent(bs))?));
    }
    if normalize {
        normalize_values(&mut curve);
    }
    Ok(curve)
}

fn normalize_values<T: Scalar, X>(curve: &mut [(X, T)]) {
    let m = curve.iter().fold(T::zero(), |m, (_, v)| m.max(v.abs()));
    if m > T::zero() {
        for (_, v) in curve.iter_mut() {
            *v = *v / m;
        }
    }
}

pub const DEFAULT_SIGMA: f64 = 0.7;

/// Prospective ATE over a `(p_adv, p_exp)` grid for competitor `k`, with
/// `p_j(1) = p_adv (1 − p_exp)`, `p*_j(1) = p_adv p_exp` and share `sigma`.
pub fn experimentation_surface<T: Scalar>(
    table: &DegenerateTable<T>,
    k: usize,
    sigma: T,
    p_adv: &[T],
    p_exp: &[T],
    averaging: &Averaging<T>,
) -> Result<Vec<(T, T, T)>> {
    check_grid(p_adv, "p_adv")?;
    check_grid(p_exp, "p_exp")?;
    if k >= table.n_competitors() {
        return Err(Error::invalid(format!("competitor coordinate {k} out of range")));
    }
    let mut out = Vec::with_capacity(p_adv.len() * p_exp.len());
    for &a in p_adv {
        for &e in p_exp {
            let axis = CompetitorBelief::new(T::one() - a, a * (T::one() - e), a * e, sigma)?;
            let bs = others_beliefs(table.n_competitors(), k, averaging, axis)?;
            out.push((a, e, prospective_ate(table, &BeliefProfile::Independent(bs))?));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Each competitor experiments on its own with probability `p_exp`.
    Independent,
    /// With probability `p_exp` all competitors experiment as one block: a
    /// user is in every test arm (probability σ) or every control arm.
    Aligned,
}

/// Prospective ATE as a function of `p_exp` when every competitor in the
/// partition advertises for sure.
pub fn scenario_curve<T: Scalar>(table: &DegenerateTable<T>, p_exp: &[T], mode: Scenario, sigma: T) -> Result<Vec<(T, T)>> {
    check_grid(p_exp, "p_exp")?;
    table.check_complete()?;
    let n = table.n_competitors();
    let all_on = table.present;
    let all_off = Bits::zeros(n);
    let mut out = Vec::with_capacity(p_exp.len());
    for &e in p_exp {
        let v = match mode {
            Scenario::Independent => {
                let b = CompetitorBelief::new(T::zero(), T::one() - e, e, sigma)?;
                prospective_ate(table, &BeliefProfile::Independent(vec![b; n]))?
            }
            Scenario::Aligned => {
                let experimenting = mix_sigma(table.tau(&all_off)?, table.tau(&all_on)?, sigma)?;
                (T::one() - e) * table.tau(&all_on)? + e * experimenting
            }
        };
        out.push((e, v));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table3() -> DegenerateTable<f64> {
        let taus: BTreeMap<Bits, f64> = Bits::all(3).map(|s| (s, 0.1 + 0.2 * s.rank() as f64 - 0.05 * s.count_ones() as f64)).collect();
        DegenerateTable::new(Bits::ones(3), taus).unwrap()
    }

    #[test]
    fn mix_endpoints() {
        assert_eq!(mix_sigma(0.1, 0.3, 0.0).unwrap(), 0.1);
        assert_eq!(mix_sigma(0.1, 0.3, 1.0).unwrap(), 0.3);
        assert!((mix_sigma(0.1, 0.3, 0.5).unwrap() - 0.2f64).abs() < 1e-15);
        assert!(mix_sigma(0.1, 0.3, 1.5).is_err());
    }

    #[test]
    fn point_mass_belief() {
        let t = table3();
        let target: Bits = "101".parse().unwrap();
        let bs = target
            .iter()
            .map(|w| CompetitorBelief::advertising(if w { 1.0 } else { 0.0 }).unwrap())
            .collect();
        let v = prospective_ate(&t, &BeliefProfile::Independent(bs)).unwrap();
        assert_eq!(v, t.tau(&target).unwrap());
    }

    #[test]
    fn belief_sum_checked() {
        assert!(CompetitorBelief::new(0.5, 0.5, 0.1, 0.7).is_err());
    }

    #[test]
    fn absent_competitor_projects_to_zero() {
        let present: Bits = "10".parse().unwrap();
        let taus = [("00".parse().unwrap(), 1.0), ("10".parse().unwrap(), 3.0)].into_iter().collect();
        let t = DegenerateTable::new(present, taus).unwrap();
        assert_eq!(t.tau(&"01".parse().unwrap()).unwrap(), 1.0);
        assert_eq!(t.tau(&"11".parse().unwrap()).unwrap(), 3.0);
        let bs = vec![CompetitorBelief::advertising(0.25).unwrap(), CompetitorBelief::advertising(0.9).unwrap()];
        assert!((prospective_ate(&t, &BeliefProfile::Independent(bs)).unwrap() - 1.5f64).abs() < 1e-15);
    }

    #[test]
    fn missing_state_is_reported() {
        let taus = [("0".parse().unwrap(), 1.0)].into_iter().collect();
        let t = DegenerateTable::new(Bits::ones(1), taus).unwrap();
        let err = prospective_ate(&t, &BeliefProfile::Independent(vec![CompetitorBelief::advertising(0.5).unwrap()]));
        assert!(err.unwrap_err().to_string().contains('1'));
    }

    #[test]
    fn scenario_endpoints() {
        let t = table3();
        let all1 = t.tau(&Bits::ones(3)).unwrap();
        let all0 = t.tau(&Bits::zeros(3)).unwrap();
        for mode in [Scenario::Independent, Scenario::Aligned] {
            let c = scenario_curve(&t, &[0.0, 1.0], mode, 0.7).unwrap();
            assert!((c[0].1 - all1).abs() < 1e-15);
        }
        let aligned = scenario_curve(&t, &[1.0], Scenario::Aligned, 0.7).unwrap();
        assert!((aligned[0].1 - (0.7 * all1 + 0.3 * all0)).abs() < 1e-15);
    }

    #[test]
    fn competitor_curve_endpoints_and_flat_case() {
        let t = table3();
        let c = competitor_curve(&t, 1, &[0.0, 1.0], &Averaging::Unweighted, false).unwrap();
        assert!((c[0].1 - t.averaged(1, false).unwrap()).abs() < 1e-14);
        assert!((c[1].1 - t.averaged(1, true).unwrap()).abs() < 1e-14);
        let flat = DegenerateTable::new(Bits::ones(2), Bits::all(2).map(|s| (s, 0.4)).collect()).unwrap();
        let c = competitor_curve(&flat, 0, &[0.0, 0.3, 1.0], &Averaging::Unweighted, false).unwrap();
        assert!(c.iter().all(|(_, v)| (v - 0.4f64).abs() < 1e-15));
    }
}
