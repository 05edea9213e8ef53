//! Experiment design: campaigns, audiences, treatment assignments, audience
//! partitions, overlap/full-support checks and states of the world.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::{Bits, MAX_BITS};
use crate::error::{Error, Result};
use crate::randomize::{self, SplitSeed, Stream};

/// Campaign (= advertiser) index. `0` is reserved for "no ad".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CampaignId(pub u32);

impl CampaignId {
    pub const NO_AD: CampaignId = CampaignId(0);

    pub fn is_ad(self) -> bool {
        self.0 != 0
    }
}

impl fmt::Display for CampaignId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Target audience of a campaign, evaluated lazily per user.
#[derive(Debug, Clone, PartialEq)]
pub enum Audience {
    All,
    /// Half-open id range `[start, end)`.
    Range { start: u64, end: u64 },
    /// Pseudo-random subset of the given share, keyed by campaign and `salt`.
    Fraction { share: f64, salt: u64 },
    List(Vec<u64>),
}

impl Audience {
    pub fn contains(&self, user_id: u64, campaign: CampaignId) -> bool {
        match self {
            Audience::All => true,
            Audience::Range { start, end } => (*start..*end).contains(&user_id),
            Audience::Fraction { share, salt } => {
                let h = randomize::mix(user_id, campaign.0 as u64, Stream::Audience as u64 ^ salt);
                randomize::unit_interval(h) < *share
            }
            Audience::List(ids) => ids.binary_search(&user_id).is_ok(),
        }
    }
}

impl FromStr for Audience {
    type Err = Error;

    /// `all`, `range:START..END`, `fraction:SHARE[:SALT]` or `list:ID,ID,...`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(Audience::All);
        }
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::config(format!("unrecognised audience {s:?}")))?;
        let bad = |what: &str| Error::config(format!("bad {what} in audience {s:?}"));
        match kind {
            "range" => {
                let (a, b) = rest.split_once("..").ok_or_else(|| bad("range"))?;
                let start = a.trim().parse().map_err(|_| bad("range start"))?;
                let end = b.trim().parse().map_err(|_| bad("range end"))?;
                if end <= start {
                    return Err(bad("empty range"));
                }
                Ok(Audience::Range { start, end })
            }
            "fraction" => {
                let mut parts = rest.split(':');
                let share: f64 = parts
                    .next()
                    .and_then(|p| p.trim().parse().ok())
                    .ok_or_else(|| bad("fraction"))?;
                if !(share > 0.0 && share <= 1.0) {
                    return Err(bad("fraction (must be in (0, 1])"));
                }
                let salt = match parts.next() {
                    Some(p) => p.trim().parse().map_err(|_| bad("salt"))?,
                    None => 0,
                };
                Ok(Audience::Fraction { share, salt })
            }
            "list" => {
                let mut ids = rest
                    .split(',')
                    .filter(|t| !t.trim().is_empty())
                    .map(|t| t.trim().parse::<u64>().map_err(|_| bad("user id")))
                    .collect::<Result<Vec<_>>>()?;
                if ids.is_empty() {
                    return Err(bad("empty list"));
                }
                ids.sort_unstable();
                ids.dedup();
                Ok(Audience::List(ids))
            }
            _ => Err(Error::config(format!("unrecognised audience kind {kind:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Campaign {
    pub index: CampaignId,
    pub audience: Audience,
    /// Share of the audience randomized to test (sigma). `1` means advertising
    /// without experimenting.
    pub treatment_share: f64,
    pub base_bid: f64,
    pub quality: f64,
}

impl Campaign {
    pub fn new(index: u32, audience: Audience, treatment_share: f64) -> Self {
        Campaign { index: CampaignId(index), audience, treatment_share, base_bid: 1.0, quality: 1.0 }
    }

    pub fn with_score(mut self, base_bid: f64, quality: f64) -> Self {
        self.base_bid = base_bid;
        self.quality = quality;
        self
    }

    pub fn targets(&self, user_id: u64) -> bool {
        self.audience.contains(user_id, self.index)
    }
}

/// The experiment's campaigns, sorted by index. A campaign's position in this
/// list is its coordinate in every assignment vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Roster {
    campaigns: Vec<Campaign>,
}

impl Roster {
    pub fn new(mut campaigns: Vec<Campaign>) -> Result<Self> {
        if campaigns.is_empty() {
            return Err(Error::config("campaign list is empty"));
        }
        if campaigns.len() > MAX_BITS {
            return Err(Error::config(format!("at most {MAX_BITS} campaigns are supported")));
        }
        campaigns.sort_by_key(|c| c.index);
        for w in campaigns.windows(2) {
            if w[0].index == w[1].index {
                return Err(Error::config(format!("duplicate campaign index {}", w[0].index)));
            }
        }
        for c in &campaigns {
            if c.index == CampaignId::NO_AD {
                return Err(Error::config("campaign index 0 is reserved for no-ad"));
            }
            if !(0.0..=1.0).contains(&c.treatment_share) {
                return Err(Error::config(format!(
                    "campaign {}: treatment share {} outside [0, 1]",
                    c.index, c.treatment_share
                )));
            }
            if !(c.base_bid >= 0.0 && c.quality >= 0.0) {
                return Err(Error::config(format!("campaign {}: negative bid or quality", c.index)));
            }
        }
        Ok(Roster { campaigns })
    }

    pub fn len(&self) -> usize {
        self.campaigns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.campaigns.is_empty()
    }

    pub fn campaigns(&self) -> &[Campaign] {
        &self.campaigns
    }

    pub fn get(&self, pos: usize) -> &Campaign {
        &self.campaigns[pos]
    }

    pub fn ids(&self) -> impl Iterator<Item = CampaignId> + '_ {
        self.campaigns.iter().map(|c| c.index)
    }

    pub fn position(&self, id: CampaignId) -> Option<usize> {
        self.campaigns.binary_search_by_key(&id, |c| c.index).ok()
    }

    pub fn require_position(&self, id: CampaignId) -> Result<usize> {
        self.position(id).ok_or_else(|| Error::invalid(format!("unknown campaign {id}")))
    }

    /// Which campaigns target `user_id`, as a vector over roster positions.
    pub fn targeting(&self, user_id: u64) -> Bits {
        let mut b = Bits::zeros(self.len());
        for (pos, c) in self.campaigns.iter().enumerate() {
            if c.targets(user_id) {
                b.set(pos, true);
            }
        }
        b
    }

    /// Roster positions of the competitors of `focal_pos`, in coordinate order.
    pub fn competitor_positions(&self, focal_pos: usize) -> Vec<usize> {
        (0..self.len()).filter(|&p| p != focal_pos).collect()
    }

    pub fn competitor_ids(&self, focal_pos: usize) -> Vec<CampaignId> {
        self.competitor_positions(focal_pos).into_iter().map(|p| self.campaigns[p].index).collect()
    }
}

/// A user's total treatment assignment `D_i` over roster positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TreatmentAssignment {
    pub user_id: u64,
    pub bits: Bits,
}

impl TreatmentAssignment {
    /// Hash-split assignment; coordinates of campaigns not targeting the user are 0.
    pub fn draw(roster: &Roster, user_id: u64, seed: SplitSeed) -> Self {
        let mut bits = Bits::zeros(roster.len());
        for (pos, c) in roster.campaigns().iter().enumerate() {
            if c.targets(user_id) {
                let arm = randomize::assign(user_id, c.index.0 as u64, seed, c.treatment_share);
                bits.set(pos, arm.is_test());
            }
        }
        TreatmentAssignment { user_id, bits }
    }

    pub fn is_test(&self, pos: usize) -> bool {
        self.bits.get(pos)
    }

    /// Partial assignment `D_{i,-j}` for the focal campaign at `focal_pos`.
    pub fn partial(&self, focal_pos: usize) -> Bits {
        self.bits.remove(focal_pos)
    }
}

/// Users of an experiment with their targeting and assignment vectors,
/// aligned and sorted by user id.
#[derive(Debug, Clone)]
pub struct Population {
    users: Vec<u64>,
    targeting: Vec<Bits>,
    assignments: Vec<Bits>,
}

impl Population {
    pub fn draw(roster: &Roster, mut users: Vec<u64>, seed: SplitSeed) -> Self {
        users.sort_unstable();
        users.dedup();
        let (targeting, assignments): (Vec<Bits>, Vec<Bits>) = users
            .par_iter()
            .map(|&u| (roster.targeting(u), TreatmentAssignment::draw(roster, u, seed).bits))
            .unzip();
        Population { users, targeting, assignments }
    }

    /// Builds a population from explicit assignments (e.g. read back from disk).
    pub fn from_parts(roster: &Roster, assignments: Vec<TreatmentAssignment>) -> Result<Self> {
        let mut assignments = assignments;
        assignments.sort_by_key(|a| a.user_id);
        let mut users = Vec::with_capacity(assignments.len());
        let mut targeting = Vec::with_capacity(assignments.len());
        let mut bits = Vec::with_capacity(assignments.len());
        for a in assignments {
            if a.bits.len() != roster.len() {
                return Err(Error::invalid(format!("user {}: assignment length mismatch", a.user_id)));
            }
            let t = roster.targeting(a.user_id);
            if a.bits.mask(&t) != a.bits {
                return Err(Error::invalid(format!("user {}: test arm outside target audience", a.user_id)));
            }
            if users.last() == Some(&a.user_id) {
                return Err(Error::invalid(format!("duplicate user {}", a.user_id)));
            }
            users.push(a.user_id);
            targeting.push(t);
            bits.push(a.bits);
        }
        Ok(Population { users, targeting, assignments: bits })
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn users(&self) -> &[u64] {
        &self.users
    }

    pub fn targeting(&self, idx: usize) -> Bits {
        self.targeting[idx]
    }

    pub fn assignment(&self, idx: usize) -> TreatmentAssignment {
        TreatmentAssignment { user_id: self.users[idx], bits: self.assignments[idx] }
    }

    pub fn index_of(&self, user_id: u64) -> Option<usize> {
        self.users.binary_search(&user_id).ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = TreatmentAssignment> + '_ {
        (0..self.len()).map(|i| self.assignment(i))
    }
}

/// One audience partition `P_j(q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// 1-based label `q`.
    pub label: usize,
    /// Competitor set `O_jq` as a vector over competitor coordinates.
    pub competitors: Bits,
    pub competitor_ids: Vec<CampaignId>,
    pub members: Vec<u64>,
}

/// Partitions of one focal campaign's target audience.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionIndex {
    pub focal: CampaignId,
    pub focal_pos: usize,
    pub partitions: Vec<Partition>,
    by_signature: BTreeMap<Bits, usize>,
}

impl PartitionIndex {
    pub fn len(&self) -> usize {
        self.partitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.partitions.is_empty()
    }

    /// Label of the partition with competitor set `signature`.
    pub fn label_for(&self, signature: &Bits) -> Option<usize> {
        self.by_signature.get(signature).copied()
    }

    /// Label `q` of a user given their targeting vector; `None` outside `TA_j`.
    pub fn label_of_targeting(&self, targeting: &Bits) -> Option<usize> {
        if !targeting.get(self.focal_pos) {
            return None;
        }
        self.label_for(&targeting.remove(self.focal_pos))
    }

    pub fn partition(&self, label: usize) -> &Partition {
        &self.partitions[label - 1]
    }

    /// One-hot `S_ij` for a label.
    pub fn one_hot(&self, label: usize) -> Bits {
        Bits::zeros(self.len()).with(label - 1, true)
    }
}

/// Sort key for competitor sets: the set read as a binary number whose least
/// significant bit is the first competitor. Smaller sets of earlier
/// competitors come first (`∅, {k}, {l}, {k,l}`).
fn signature_key(sig: &Bits) -> u64 {
    sig.ones_positions().map(|k| 1u64 << k).sum()
}

/// Groups each campaign's audience by the exact set of other campaigns that
/// also target the user. Labels are dense and assigned in `signature_key`
/// order, so they do not depend on user order.
pub fn build_partitions(roster: &Roster, users: &[u64]) -> Result<Vec<PartitionIndex>> {
    if roster.is_empty() {
        return Err(Error::config("campaign list is empty"));
    }
    let targeting: Vec<(u64, Bits)> = users.iter().map(|&u| (u, roster.targeting(u))).collect();
    let mut out = Vec::with_capacity(roster.len());
    for focal_pos in 0..roster.len() {
        let mut groups: BTreeMap<Bits, Vec<u64>> = BTreeMap::new();
        for (u, t) in &targeting {
            if t.get(focal_pos) {
                groups.entry(t.remove(focal_pos)).or_default().push(*u);
            }
        }
        let comp_ids = roster.competitor_ids(focal_pos);
        let mut groups: Vec<(Bits, Vec<u64>)> = groups.into_iter().collect();
        groups.sort_by_key(|(sig, _)| signature_key(sig));
        let mut by_signature = BTreeMap::new();
        let mut partitions = Vec::with_capacity(groups.len());
        for (q, (sig, mut members)) in groups.into_iter().enumerate() {
            members.sort_unstable();
            members.dedup();
            by_signature.insert(sig, q + 1);
            partitions.push(Partition {
                label: q + 1,
                competitors: sig,
                competitor_ids: sig.ones_positions().map(|k| comp_ids[k]).collect(),
                members,
            });
        }
        out.push(PartitionIndex {
            focal: roster.get(focal_pos).index,
            focal_pos,
            partitions,
            by_signature,
        });
    }
    Ok(out)
}

/// Overlap and full-support diagnostics for one partition.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionCheck {
    pub focal: CampaignId,
    pub label: usize,
    pub members: usize,
    /// `{j} ∪ O_jq` in roster order; coordinates of `cell_counts` keys.
    pub involved: Vec<CampaignId>,
    /// Empirical test share of each involved campaign within the partition.
    pub shares: Vec<f64>,
    /// Counts per test/control combination over `involved`.
    pub cell_counts: Vec<usize>,
    pub overlap_violations: Vec<CampaignId>,
    /// Mixed combinations with fewer than `min_cell` users.
    pub support_a_violations: Vec<Bits>,
    /// All-test / all-control combinations with fewer than `min_cell` users.
    pub support_b_violations: Vec<Bits>,
    /// Set when the involved set is too large to enumerate its cells.
    pub too_many_cells: bool,
}

impl PartitionCheck {
    pub fn is_clean(&self) -> bool {
        self.overlap_violations.is_empty()
            && self.support_a_violations.is_empty()
            && self.support_b_violations.is_empty()
            && !self.too_many_cells
    }
}

pub const DEFAULT_MIN_CELL: usize = 1;
pub const DEFAULT_STATE_CAP: usize = 24;

/// Checks overlap and full support in every partition of one focal campaign.
pub fn check_assumptions(
    population: &Population,
    partitions: &PartitionIndex,
    min_cell: usize,
) -> Vec<PartitionCheck> {
    let focal_pos = partitions.focal_pos;
    partitions
        .partitions
        .iter()
        .map(|part| {
            // {j} ∪ O_jq as (roster position, id), in roster order
            let mut involved: Vec<(usize, CampaignId)> = part
                .competitors
                .ones_positions()
                .map(|k| if k < focal_pos { k } else { k + 1 })
                .zip(part.competitor_ids.iter().copied())
                .collect();
            involved.push((focal_pos, partitions.focal));
            involved.sort_unstable();
            let involved_pos: Vec<usize> = involved.iter().map(|&(p, _)| p).collect();
            let ids: Vec<CampaignId> = involved.iter().map(|&(_, id)| id).collect();
            let m = involved_pos.len();

            let mut test_counts = vec![0usize; m];
            let too_many_cells = m > DEFAULT_STATE_CAP;
            let mut cell_counts = if too_many_cells { Vec::new() } else { vec![0usize; 1 << m] };
            let mut n = 0usize;
            for &u in &part.members {
                let Some(idx) = population.index_of(u) else { continue };
                n += 1;
                let a = population.assignment(idx);
                let mut combo = Bits::zeros(m);
                for (c, &p) in involved_pos.iter().enumerate() {
                    if a.is_test(p) {
                        test_counts[c] += 1;
                        combo.set(c, true);
                    }
                }
                if !too_many_cells {
                    cell_counts[combo.rank() as usize] += 1;
                }
            }
            let shares: Vec<f64> =
                test_counts.iter().map(|&t| if n == 0 { f64::NAN } else { t as f64 / n as f64 }).collect();
            let overlap_violations = ids
                .iter()
                .zip(&shares)
                .filter(|(_, &s)| !(s > 0.0 && s < 1.0))
                .map(|(&id, _)| id)
                .collect();
            let mut support_a_violations = Vec::new();
            let mut support_b_violations = Vec::new();
            if !too_many_cells {
                let full = (1u64 << m) - 1;
                for (rank, &count) in cell_counts.iter().enumerate() {
                    if count >= min_cell {
                        continue;
                    }
                    let combo = Bits::from_rank(m, rank as u64);
                    if rank == 0 || rank as u64 == full {
                        support_b_violations.push(combo);
                    } else {
                        support_a_violations.push(combo);
                    }
                }
            }
            PartitionCheck {
                focal: partitions.focal,
                label: part.label,
                members: n,
                involved: ids,
                shares,
                cell_counts,
                overlap_violations,
                support_a_violations,
                support_b_violations,
                too_many_cells,
            }
        })
        .collect()
}

/// Degenerate state of the world for a focal campaign's competitors:
/// `omega_k = 0` not advertising, `omega_k = 1` advertising without experimenting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateOfWorld {
    pub omega: Bits,
}

impl StateOfWorld {
    pub fn advertising(&self, k: usize) -> bool {
        self.omega.get(k)
    }

    /// Degenerate states never experiment.
    pub fn experimenting(&self, _k: usize) -> bool {
        false
    }

    /// Number of competitors advertising.
    pub fn active_count(&self) -> usize {
        self.omega.count_ones()
    }
}

impl fmt::Display for StateOfWorld {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.omega.fmt(f)
    }
}

/// All `2^n` states in lexicographic order by competitor coordinate.
pub fn enumerate_states(n_competitors: usize, cap: usize) -> Result<Vec<StateOfWorld>> {
    if n_competitors > cap.min(MAX_BITS - 1) {
        return Err(Error::Refused(format!(
            "{n_competitors} competitors exceed the state enumeration cap of {cap}"
        )));
    }
    Ok(Bits::all(n_competitors).map(|omega| StateOfWorld { omega }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig2_roster() -> Roster {
        // j = 1 targets 0..100; k = 2 targets 50..150; l = 3 targets 25..75 ∪ 90..120
        let mut l: Vec<u64> = (25..75).collect();
        l.extend(90..120);
        Roster::new(vec![
            Campaign::new(1, Audience::Range { start: 0, end: 100 }, 0.5),
            Campaign::new(2, Audience::Range { start: 50, end: 150 }, 0.5),
            Campaign::new(3, Audience::List(l), 0.5),
        ])
        .unwrap()
    }

    #[test]
    fn four_partitions_for_two_intersecting_competitors() {
        let roster = fig2_roster();
        let users: Vec<u64> = (0..200).collect();
        let parts = build_partitions(&roster, &users).unwrap();
        let j = &parts[0];
        assert_eq!(j.len(), 4);
        let sets: Vec<Vec<u32>> =
            j.partitions.iter().map(|p| p.competitor_ids.iter().map(|c| c.0).collect()).collect();
        assert_eq!(sets, vec![vec![], vec![2], vec![3], vec![2, 3]]);
        // P(∅) = 0..25, P({k}) = 75..90, P({l}) = 25..50, P({k,l}) = 50..75 ∪ 90..100
        assert_eq!(j.partitions[0].members, (0..25).collect::<Vec<_>>());
        let total: usize = j.partitions.iter().map(|p| p.members.len()).sum();
        assert_eq!(total, 100);
    }

    #[test]
    fn single_advertiser_single_partition() {
        let roster = Roster::new(vec![Campaign::new(4, Audience::Range { start: 0, end: 10 }, 0.3)]).unwrap();
        let parts = build_partitions(&roster, &(0..50).collect::<Vec<_>>()).unwrap();
        assert_eq!(parts[0].len(), 1);
        assert!(parts[0].partitions[0].competitor_ids.is_empty());
        assert_eq!(parts[0].partitions[0].members.len(), 10);
    }

    #[test]
    fn empty_roster_is_config_error() {
        assert!(matches!(Roster::new(vec![]), Err(Error::Config { .. })));
    }

    #[test]
    fn duplicate_index_rejected() {
        let r = Roster::new(vec![Campaign::new(1, Audience::All, 0.5), Campaign::new(1, Audience::All, 0.5)]);
        assert!(r.is_err());
    }

    #[test]
    fn states_enumeration() {
        assert_eq!(enumerate_states(0, 24).unwrap().len(), 1);
        let two: Vec<String> = enumerate_states(2, 24).unwrap().iter().map(|s| s.to_string()).collect();
        assert_eq!(two, ["00", "01", "10", "11"]);
        assert_eq!(enumerate_states(15, 24).unwrap().len(), 32_768);
        assert!(matches!(enumerate_states(25, 24), Err(Error::Refused(_))));
    }

    #[test]
    fn audience_parsing() {
        assert_eq!("all".parse::<Audience>().unwrap(), Audience::All);
        assert_eq!("range:5..9".parse::<Audience>().unwrap(), Audience::Range { start: 5, end: 9 });
        assert_eq!("list:3,1,3".parse::<Audience>().unwrap(), Audience::List(vec![1, 3]));
        assert!(matches!("fraction:0.25:9".parse::<Audience>().unwrap(), Audience::Fraction { salt: 9, .. }));
        assert!("range:9..5".parse::<Audience>().is_err());
        assert!("fraction:1.5".parse::<Audience>().is_err());
        assert!("bogus".parse::<Audience>().is_err());
    }

    #[test]
    fn assignment_zero_outside_audience() {
        let roster = fig2_roster();
        for u in 0..200u64 {
            let a = TreatmentAssignment::draw(&roster, u, SplitSeed(3));
            let t = roster.targeting(u);
            assert_eq!(a.bits.mask(&t), a.bits);
        }
    }

    #[test]
    fn overlap_violation_when_share_is_one() {
        let roster = Roster::new(vec![
            Campaign::new(1, Audience::All, 0.5),
            Campaign::new(2, Audience::All, 1.0),
        ])
        .unwrap();
        let users: Vec<u64> = (0..500).collect();
        let pop = Population::draw(&roster, users.clone(), SplitSeed(1));
        let parts = build_partitions(&roster, &users).unwrap();
        let report = check_assumptions(&pop, &parts[0], 1);
        assert_eq!(report[0].overlap_violations, vec![CampaignId(2)]);
        assert!(!report[0].is_clean());
    }

    #[test]
    fn pigeonhole_support_violation() {
        let roster = Roster::new(vec![
            Campaign::new(1, Audience::Range { start: 0, end: 2 }, 0.5),
            Campaign::new(2, Audience::Range { start: 0, end: 2 }, 0.5),
            Campaign::new(3, Audience::Range { start: 0, end: 2 }, 0.5),
        ])
        .unwrap();
        let users: Vec<u64> = (0..2).collect();
        let pop = Population::draw(&roster, users.clone(), SplitSeed(9));
        let parts = build_partitions(&roster, &users).unwrap();
        let report = check_assumptions(&pop, &parts[0], 1);
        assert_eq!(report.len(), 1);
        let r = &report[0];
        assert_eq!(r.cell_counts.len(), 8);
        assert!(r.support_a_violations.len() + r.support_b_violations.len() >= 6);
    }
}
