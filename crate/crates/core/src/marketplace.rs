//! Ranked-queue ad serving with experiment eligibility filtering.
//!
//! Every auction ranks the campaigns targeting the user by `bid × quality`
//! (optionally with multiplicative log-normal jitter), logs the queue head as
//! the counterfactual ad, drops campaigns whose experiment holds the user in
//! control, and serves the first survivor that has not already been shown in
//! the current page view.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use rayon::prelude::*;

use crate::bits::Bits;
use crate::design::{CampaignId, Population, Roster};
use crate::error::{Error, Result};
use crate::randomize::{substream, Stream};

pub const MAX_SLOTS: u8 = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuctionRecord {
    pub auction_id: u64,
    pub user_id: u64,
    /// Position within the page view, `1..=slots`.
    pub slot: u8,
    pub queue: Vec<CampaignId>,
    pub served: CampaignId,
    pub counterfactual: CampaignId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub user_id: u64,
    pub records: Vec<AuctionRecord>,
}

impl Session {
    pub fn auctions(&self) -> usize {
        self.records.len()
    }

    /// Campaigns served at least once, over roster positions.
    pub fn exposure(&self, roster: &Roster) -> Bits {
        let mut e = Bits::zeros(roster.len());
        for r in &self.records {
            if let Some(p) = roster.position(r.served) {
                e.set(p, true);
            }
        }
        e
    }
}

/// Number of auctions a user takes part in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ArrivalModel {
    Fixed(u32),
    /// Geometric on `{0, 1, 2, ...}` with the given mean.
    Geometric { mean: f64 },
}

impl Default for ArrivalModel {
    fn default() -> Self {
        ArrivalModel::Geometric { mean: 3.0 }
    }
}

impl ArrivalModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ArrivalModel::Fixed(_) => Ok(()),
            ArrivalModel::Geometric { mean } if mean >= 0.0 && mean.is_finite() => Ok(()),
            ArrivalModel::Geometric { mean } => Err(Error::config(format!("arrival mean {mean} must be >= 0"))),
        }
    }

    pub fn draw(&self, rng: &mut ChaCha8Rng) -> u32 {
        match *self {
            ArrivalModel::Fixed(t) => t,
            ArrivalModel::Geometric { mean } => {
                if mean == 0.0 {
                    return 0;
                }
                let g = Geometric::new(1.0 / (1.0 + mean)).expect("probability in (0, 1]");
                g.sample(rng).min(u32::MAX as u64) as u32
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarketConfig {
    /// Auctions per page view; the experience filter applies within one view.
    pub slots: u8,
    pub arrivals: ArrivalModel,
    /// Standard deviation of the log-normal score jitter; `0` disables it.
    pub queue_jitter: f64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig { slots: MAX_SLOTS, arrivals: ArrivalModel::default(), queue_jitter: 0.0 }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_SLOTS).contains(&self.slots) {
            return Err(Error::config(format!("slots must be in 1..={MAX_SLOTS}, got {}", self.slots)));
        }
        if !(self.queue_jitter >= 0.0 && self.queue_jitter.is_finite()) {
            return Err(Error::config("queue jitter must be a finite nonnegative number"));
        }
        self.arrivals.validate()
    }
}

/// Descending by score, ties by ascending campaign index.
pub fn rank_queue(mut scored: Vec<(CampaignId, f64)>) -> Vec<CampaignId> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(c, _)| c).collect()
}

/// Returns `(served, counterfactual)`. `eligible` says whether the user may
/// see a campaign under its experiment; `shown` lists campaigns already served
/// in the current page view.
pub fn serve(
    queue: &[CampaignId],
    eligible: impl Fn(CampaignId) -> bool,
    shown: &[CampaignId],
) -> (CampaignId, CampaignId) {
    let counterfactual = queue.first().copied().unwrap_or(CampaignId::NO_AD);
    let served = queue
        .iter()
        .copied()
        .find(|&c| eligible(c) && !shown.contains(&c))
        .unwrap_or(CampaignId::NO_AD);
    (served, counterfactual)
}

/// Runs `auctions` auctions for one user. `candidates` are the roster positions
/// present in the user's queues and `eligible` the positions that survive the
/// experiment filter. Jitter draws are taken for every candidate in roster
/// order, so two calls that differ only in `eligible` see identical queues.
pub fn run_auctions(
    roster: &Roster,
    user_id: u64,
    candidates: &Bits,
    eligible: &Bits,
    auctions: u32,
    config: &MarketConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<AuctionRecord> {
    let slots = config.slots as u32;
    let mut records = Vec::with_capacity(auctions as usize);
    let mut shown: Vec<CampaignId> = Vec::with_capacity(slots as usize);
    let positions: Vec<usize> = candidates.ones_positions().collect();
    for t in 0..auctions {
        if t % slots == 0 {
            shown.clear();
        }
        let scored: Vec<(CampaignId, f64)> = positions
            .iter()
            .map(|&p| {
                let c = roster.get(p);
                let mut score = c.base_bid * c.quality;
                if config.queue_jitter > 0.0 {
                    let z: f64 = StandardNormal.sample(rng);
                    score *= (config.queue_jitter * z).exp();
                }
                (c.index, score)
            })
            .collect();
        let queue = rank_queue(scored);
        let (served, counterfactual) =
            serve(&queue, |c| roster.position(c).is_some_and(|p| eligible.get(p)), &shown);
        if served.is_ad() {
            shown.push(served);
        }
        records.push(AuctionRecord {
            auction_id: 0,
            user_id,
            slot: (t % slots + 1) as u8,
            queue,
            served,
            counterfactual,
        });
    }
    records
}

/// One user's session under the factual experiment: every campaign targeting
/// the user is queued and test-arm campaigns are eligible. `auction_id`s are
/// left at zero; [`simulate_sessions`] numbers them.
pub fn run_session(
    roster: &Roster,
    user_id: u64,
    targeting: &Bits,
    assignment: &Bits,
    config: &MarketConfig,
    seed: u64,
) -> Session {
    let mut rng = substream(seed, Stream::Arrivals, user_id, 0);
    let t = config.arrivals.draw(&mut rng);
    let eligible = assignment.mask(targeting);
    let records = run_auctions(roster, user_id, targeting, &eligible, t, config, &mut rng);
    Session { user_id, records }
}

/// Sessions for every user, in user-id order with sequential auction ids.
/// Runs on the current rayon pool; output does not depend on its size.
pub fn simulate_sessions(roster: &Roster, population: &Population, config: &MarketConfig, seed: u64) -> Vec<Session> {
    let mut sessions: Vec<Session> = (0..population.len())
        .into_par_iter()
        .map(|i| {
            let a = population.assignment(i);
            run_session(roster, a.user_id, &population.targeting(i), &a.bits, config, seed)
        })
        .collect();
    let mut next = 0u64;
    for s in &mut sessions {
        for r in &mut s.records {
            r.auction_id = next;
            next += 1;
        }
    }
    sessions
}

/// Users with at least one record where the focal campaign was served or was
/// the counterfactual ad.
pub fn eligible_sample<'a>(records: impl IntoIterator<Item = &'a AuctionRecord>, focal: CampaignId) -> Vec<u64> {
    let mut users: Vec<u64> = records
        .into_iter()
        .filter(|r| r.served == focal || r.counterfactual == focal)
        .map(|r| r.user_id)
        .collect();
    users.sort_unstable();
    users.dedup();
    users
}

/// Counts of records violating the ad-exposure restriction or the
/// counterfactual-head rule.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LogAudit {
    pub records: u64,
    pub exposure_violations: u64,
    pub counterfactual_violations: u64,
    pub repeat_violations: u64,
}

pub fn audit_logs(roster: &Roster, population: &Population, sessions: &[Session], slots: u8) -> LogAudit {
    let mut audit = LogAudit::default();
    for s in sessions {
        let Some(idx) = population.index_of(s.user_id) else {
            audit.exposure_violations += s.records.len() as u64;
            continue;
        };
        let assignment = population.assignment(idx);
        for (t, r) in s.records.iter().enumerate() {
            audit.records += 1;
            if r.served.is_ad() {
                let ok = roster.position(r.served).is_some_and(|p| assignment.is_test(p));
                if !ok {
                    audit.exposure_violations += 1;
                }
            }
            if r.counterfactual != r.queue.first().copied().unwrap_or(CampaignId::NO_AD) {
                audit.counterfactual_violations += 1;
            }
            let view_start = t - t % slots as usize;
            if r.served.is_ad() && s.records[view_start..t].iter().any(|o| o.served == r.served) {
                audit.repeat_violations += 1;
            }
        }
    }
    audit
}

/// Per-user count of distinct campaigns served, for overlap tables.
pub fn exposure_counts(roster: &Roster, sessions: &[Session]) -> Vec<usize> {
    sessions.iter().map(|s| s.exposure(roster).count_ones()).collect()
}
