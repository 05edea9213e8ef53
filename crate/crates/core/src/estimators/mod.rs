//! Degenerate-ATE estimators: saturated per-cell OLS, the two-campaign
//! interaction regression, and the categorical product-kernel estimator with
//! leave-one-out bandwidth selection.
//!
//! Estimation works on one focal campaign at a time. Each observation carries
//! its partial assignment `d` (the assignment vector without the focal
//! coordinate), its partition label `s`, whether it is in the focal test arm,
//! and its outcome.

mod cv;
pub(crate) mod interaction;
mod kernel;
mod ols;

use std::collections::BTreeMap;
use std::fmt;

pub use cv::{cv_bandwidths, cv_loss, CvOptions, CvReport};
pub use interaction::{interaction_ols, InteractionFit};
pub use kernel::{kernel_table, kernel_theta, kernel_variance, kernel_weight, Bandwidths};
pub use ols::{cell_ols, pooled_ols, stacked_ols, CellFit};

use crate::bits::Bits;
use crate::design::{CampaignId, PartitionIndex, Population};
use crate::error::{Error, Result};
use crate::oracle::OutcomeRecord;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub user_id: u64,
    /// Partial assignment over competitor coordinates.
    pub d: Bits,
    /// 1-based partition label.
    pub partition: usize,
    pub treated: bool,
    pub y: T,
}

/// Observations for one focal campaign.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationData<T> {
    pub focal: CampaignId,
    pub n_competitors: usize,
    pub n_partitions: usize,
    pub obs: Vec<Observation<T>>,
}

impl<T: Scalar> EstimationData<T> {
    pub fn new(focal: CampaignId, n_competitors: usize, n_partitions: usize, obs: Vec<Observation<T>>) -> Result<Self> {
        for o in &obs {
            if o.d.len() != n_competitors {
                return Err(Error::invalid(format!("user {}: partial assignment length mismatch", o.user_id)));
            }
            if o.partition == 0 || o.partition > n_partitions {
                return Err(Error::invalid(format!("user {}: partition label {} out of range", o.user_id, o.partition)));
            }
            if !o.y.is_finite() {
                return Err(Error::invalid(format!("user {}: non-finite outcome", o.user_id)));
            }
        }
        Ok(EstimationData { focal, n_competitors, n_partitions, obs })
    }

    /// Joins outcomes for `partitions.focal` with assignments and partition
    /// labels. When `sample` is given, only those users are kept.
    pub fn assemble(
        population: &Population,
        partitions: &PartitionIndex,
        outcomes: &[OutcomeRecord],
        sample: Option<&[u64]>,
    ) -> Result<Self> {
        let focal = partitions.focal;
        let n_comp = population.targeting(0).len().saturating_sub(1);
        let mut obs = Vec::new();
        for rec in outcomes.iter().filter(|r| r.focal == focal) {
            if let Some(s) = sample {
                if s.binary_search(&rec.user_id).is_err() {
                    continue;
                }
            }
            let idx = population
                .index_of(rec.user_id)
                .ok_or_else(|| Error::invalid(format!("outcome for unknown user {}", rec.user_id)))?;
            let label = partitions
                .label_of_targeting(&population.targeting(idx))
                .ok_or_else(|| Error::invalid(format!("user {} is outside the audience of {focal}", rec.user_id)))?;
            let a = population.assignment(idx);
            if a.is_test(partitions.focal_pos) != rec.arm.is_test() {
                return Err(Error::invalid(format!("user {}: outcome arm disagrees with assignment", rec.user_id)));
            }
            obs.push(Observation {
                user_id: rec.user_id,
                d: a.partial(partitions.focal_pos),
                partition: label,
                treated: rec.arm.is_test(),
                y: T::of(rec.y),
            });
        }
        EstimationData::new(focal, n_comp, partitions.len(), obs)
    }

    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    /// Deterministic split into (training, estimation) parts: a user goes to
    /// training iff its hash under `seed` falls below `fraction`.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let (train, rest): (Vec<_>, Vec<_>) = self.obs.iter().partition(|o| {
            let h = crate::randomize::mix(o.user_id, crate::randomize::Stream::Split as u64, seed);
            crate::randomize::unit_interval(h) < fraction
        });
        let part = |obs| EstimationData { obs, ..self.clone_empty() };
        (part(train), part(rest))
    }

    fn clone_empty(&self) -> Self {
        EstimationData {
            focal: self.focal,
            n_competitors: self.n_competitors,
            n_partitions: self.n_partitions,
            obs: Vec::new(),
        }
    }

    /// Kernel covariate vector `Z = [d, one-hot(s)]`.
    pub fn z_vector(&self, o: &Observation<T>) -> Vec<bool> {
        let mut z: Vec<bool> = o.d.iter().collect();
        z.extend((1..=self.n_partitions).map(|q| q == o.partition));
        z
    }

    /// Per-cell, per-arm summaries in cell order.
    pub fn cells(&self) -> CellTable<T> {
        let mut groups: BTreeMap<CellKey, [Vec<T>; 2]> = BTreeMap::new();
        for o in &self.obs {
            let key = CellKey { partition: o.partition, d: o.d };
            groups.entry(key).or_default()[o.treated as usize].push(o.y);
        }
        CellTable {
            n_competitors: self.n_competitors,
            n_partitions: self.n_partitions,
            cells: groups
                .into_iter()
                .map(|(key, [c, t])| CellStats { key, arms: [ArmStats::from_values(&c), ArmStats::from_values(&t)] })
                .collect(),
        }
    }
}

/// Conditioning cell `(s, d)`; ordered by partition, then `d` lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub partition: usize,
    pub d: Bits,
}

impl fmt::Display for CellKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(s={}, d={})", self.partition, self.d)
    }
}

/// Count, mean and centered sum of squares of one arm of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ArmStats<T> {
    pub n: usize,
    pub mean: T,
    pub m2: T,
}

impl<T: Scalar> ArmStats<T> {
    pub fn from_values(ys: &[T]) -> Self {
        if ys.is_empty() {
            return ArmStats { n: 0, mean: T::zero(), m2: T::zero() };
        }
        let n = ys.len();
        let mean = ys.iter().copied().sum::<T>() / T::of_usize(n);
        let m2 = ys.iter().map(|&y| (y - mean) * (y - mean)).sum();
        ArmStats { n, mean, m2 }
    }

    pub fn nf(&self) -> T {
        T::of_usize(self.n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellStats<T> {
    pub key: CellKey,
    /// Control, test.
    pub arms: [ArmStats<T>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellTable<T> {
    pub n_competitors: usize,
    pub n_partitions: usize,
    pub cells: Vec<CellStats<T>>,
}

impl<T> CellTable<T> {
    pub fn n_coords(&self) -> usize {
        self.n_competitors + self.n_partitions
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFlag {
    Ok,
    /// Identified, but an arm has fewer users than the configured minimum.
    LowSupport,
    /// An arm is empty (or carries zero kernel weight).
    NotIdentified,
}

impl CellFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CellFlag::Ok => "OK",
            CellFlag::LowSupport => "LOW_SUPPORT",
            CellFlag::NotIdentified => "NOT_IDENTIFIED",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteRow<T> {
    pub key: CellKey,
    pub alpha: T,
    pub tau: T,
    pub se_alpha: T,
    pub se_tau: T,
    pub n_test: usize,
    pub n_control: usize,
    pub flag: CellFlag,
}

/// Degenerate ATEs of one focal campaign keyed by cell. Identified cells are
/// in `rows`; cells with an empty arm are listed in `not_identified`.
#[derive(Debug, Clone, PartialEq)]
pub struct AteTable<T> {
    pub focal: CampaignId,
    pub n_competitors: usize,
    pub rows: Vec<AteRow<T>>,
    pub not_identified: Vec<(CellKey, usize, usize)>,
}

impl<T: Scalar> AteTable<T> {
    pub fn get(&self, key: &CellKey) -> Option<&AteRow<T>> {
        self.rows.binary_search_by(|r| r.key.cmp(key)).ok().map(|i| &self.rows[i])
    }

    /// Rows of one partition.
    pub fn partition(&self, label: usize) -> impl Iterator<Item = &AteRow<T>> + '_ {
        self.rows.iter().filter(move |r| r.key.partition == label)
    }

    /// `tau` by state for one partition.
    pub fn taus(&self, label: usize) -> BTreeMap<Bits, T> {
        self.partition(label).map(|r| (r.key.d, r.tau)).collect()
    }

    fn finish(focal: CampaignId, n_competitors: usize, mut rows: Vec<AteRow<T>>, mut ni: Vec<(CellKey, usize, usize)>) -> Self {
        rows.sort_by_key(|r| r.key);
        ni.sort_by_key(|c| c.0);
        AteTable { focal, n_competitors, rows, not_identified: ni }
    }
}

pub const DEFAULT_MIN_ARM: usize = 2;

fn support_flag(n_test: usize, n_control: usize, min_arm: usize) -> CellFlag {
    if n_test == 0 || n_control == 0 {
        CellFlag::NotIdentified
    } else if n_test < min_arm || n_control < min_arm {
        CellFlag::LowSupport
    } else {
        CellFlag::Ok
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let obs: Vec<Observation<f64>> = (0..1000)
            .map(|u| Observation { user_id: u, d: Bits::zeros(1), partition: 1, treated: u % 2 == 0, y: 1.0 })
            .collect();
        let data = EstimationData::new(CampaignId(1), 1, 1, obs).unwrap();
        let (a, b) = data.split(0.1, 5);
        let (a2, _) = data.split(0.1, 5);
        assert_eq!(a, a2);
        assert_eq!(a.len() + b.len(), 1000);
        assert!((50..150).contains(&a.len()), "{}", a.len());
    }

    #[test]
    fn rejects_bad_label() {
        let o = Observation { user_id: 1, d: Bits::zeros(1), partition: 3, treated: true, y: 0.0f32 };
        assert!(EstimationData::new(CampaignId(1), 1, 2, vec![o]).is_err());
    }
}
