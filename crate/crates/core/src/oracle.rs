//! Outcome model and brute-force ground-truth ATEs.
//!
//! A user's outcome for focal campaign `j` is
//!
//! ```text
//! Y_ij = b_j + δ_j E_ij + Σ_k γ_jk E_ik + Σ_k η_jk E_ij E_ik + ε
//! ```
//!
//! where `E_ik = 1` when the user was served `k` at least once. Noise is
//! additive Gaussian or Poisson (the linear predictor, clipped at zero, is the
//! rate). With `floor` set, Gaussian outcomes are clipped at zero.
//!
//! Ground truth is computed on synthetic users of one partition in a forced
//! world: each competitor is absent from queues, always eligible, or eligible
//! with a fixed probability. Every replication runs the same arrivals and
//! queue draws twice, once with the focal campaign eligible and once not, and
//! scores both with the conditional mean of `Y` given exposure.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StdNormal};

use crate::bits::Bits;
use crate::design::{CampaignId, Population, Roster};
use crate::error::{Error, Result};
use crate::marketplace::{run_auctions, MarketConfig, Session};
use crate::randomize::{substream, Arm, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    Gaussian { scale: f64 },
    Poisson,
}

/// Effects of exposure on one focal campaign's outcome.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FocalEffects {
    pub baseline: f64,
    pub own_effect: f64,
    /// `γ_jk`: competitor exposure effects.
    pub direct: Vec<(CampaignId, f64)>,
    /// `η_jk`: effects of joint exposure to `j` and `k`.
    pub interaction: Vec<(CampaignId, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    pub focals: Vec<(CampaignId, FocalEffects)>,
    pub noise: Noise,
    pub floor: bool,
}

/// An [`OutcomeModel`] resolved against a roster.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    focals: Vec<CompiledFocal>,
    noise: Noise,
    floor: bool,
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledFocal {
    id: CampaignId,
    pos: usize,
    baseline: f64,
    own: f64,
    /// Indexed by roster position; the focal entry is zero.
    direct: Vec<f64>,
    interaction: Vec<f64>,
}

impl OutcomeModel {
    pub fn compile(&self, roster: &Roster) -> Result<CompiledModel> {
        if let Noise::Gaussian { scale } = self.noise {
            if !(scale >= 0.0 && scale.is_finite()) {
                return Err(Error::config(format!("noise scale {scale} must be >= 0")));
            }
        }
        let unknown = |id: CampaignId| Error::config(format!("outcome model references unknown campaign {id}"));
        let mut focals = Vec::with_capacity(self.focals.len());
        for (id, fx) in &self.focals {
            let pos = roster.position(*id).ok_or_else(|| unknown(*id))?;
            if focals.iter().any(|f: &CompiledFocal| f.id == *id) {
                return Err(Error::config(format!("outcome model lists campaign {id} twice")));
            }
            let mut direct = vec![0.0; roster.len()];
            let mut interaction = vec![0.0; roster.len()];
            for (table, src) in [(&mut direct, &fx.direct), (&mut interaction, &fx.interaction)] {
                for &(k, v) in src {
                    let p = roster.position(k).ok_or_else(|| unknown(k))?;
                    if p == pos {
                        return Err(Error::config(format!("campaign {id}: effect of itself listed as a competitor")));
                    }
                    table[p] += v;
                }
            }
            focals.push(CompiledFocal {
                id: *id,
                pos,
                baseline: fx.baseline,
                own: fx.own_effect,
                direct,
                interaction,
            });
        }
        focals.sort_by_key(|f| f.pos);
        Ok(CompiledModel { focals, noise: self.noise, floor: self.floor })
    }
}

impl CompiledModel {
    pub fn focal_ids(&self) -> impl Iterator<Item = CampaignId> + '_ {
        self.focals.iter().map(|f| f.id)
    }

    fn focal(&self, id: CampaignId) -> Result<&CompiledFocal> {
        self.focals
            .iter()
            .find(|f| f.id == id)
            .ok_or_else(|| Error::invalid(format!("campaign {id} has no outcome model")))
    }

    /// Linear predictor given exposure over roster positions.
    pub fn linear(&self, focal: CampaignId, exposure: &Bits) -> Result<f64> {
        Ok(self.focal(focal)?.linear(exposure))
    }

    /// `E[Y | exposure]`, accounting for flooring and the Poisson rate clip.
    pub fn expected(&self, focal: CampaignId, exposure: &Bits) -> Result<f64> {
        Ok(self.expected_from_linear(self.focal(focal)?.linear(exposure)))
    }

    fn expected_from_linear(&self, mu: f64) -> f64 {
        match self.noise {
            Noise::Poisson => mu.max(0.0),
            Noise::Gaussian { scale } if self.floor => {
                if scale == 0.0 {
                    mu.max(0.0)
                } else {
                    // E[max(mu + sZ, 0)] = mu Φ(mu/s) + s φ(mu/s)
                    let n = StdNormal::new(0.0, 1.0).expect("standard normal");
                    let z = mu / scale;
                    mu * n.cdf(z) + scale * n.pdf(z)
                }
            }
            Noise::Gaussian { .. } => mu,
        }
    }

    fn draw(&self, mu: f64, rng: &mut ChaCha8Rng) -> f64 {
        let y = match self.noise {
            Noise::Gaussian { scale } if scale > 0.0 => mu + Normal::new(0.0, scale).expect("valid scale").sample(rng),
            Noise::Gaussian { .. } => mu,
            Noise::Poisson => {
                let rate = mu.max(0.0);
                if rate == 0.0 {
                    0.0
                } else {
                    Poisson::new(rate).expect("positive rate").sample(rng)
                }
            }
        };
        if self.floor {
            y.max(0.0)
        } else {
            y
        }
    }
}

impl CompiledFocal {
    fn linear(&self, e: &Bits) -> f64 {
        let own = e.get(self.pos);
        let mut y = self.baseline;
        if own {
            y += self.own;
        }
        for k in e.ones_positions() {
            if k != self.pos {
                y += self.direct[k];
                if own {
                    y += self.interaction[k];
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeRecord {
    pub user_id: u64,
    pub focal: CampaignId,
    pub arm: Arm,
    pub y: f64,
}

/// Outcomes for every modelled focal campaign and every user in its audience,
/// ordered by focal then user id.
pub fn realize_outcomes(
    roster: &Roster,
    population: &Population,
    sessions: &[Session],
    model: &CompiledModel,
    seed: u64,
) -> Result<Vec<OutcomeRecord>> {
    if sessions.len() != population.len() {
        return Err(Error::invalid("sessions do not cover the population"));
    }
    let exposures: Vec<Bits> = sessions.iter().map(|s| s.exposure(roster)).collect();
    let mut out = Vec::new();
    for f in &model.focals {
        let recs: Vec<OutcomeRecord> = (0..population.len())
            .into_par_iter()
            .filter(|&i| population.targeting(i).get(f.pos))
            .map(|i| {
                let a = population.assignment(i);
                let mut rng = substream(seed, Stream::Noise, a.user_id, f.id.0 as u64);
                let y = model.draw(f.linear(&exposures[i]), &mut rng);
                let arm = if a.is_test(f.pos) { Arm::Test } else { Arm::Control };
                OutcomeRecord { user_id: a.user_id, focal: f.id, arm, y }
            })
            .collect();
        out.extend(recs);
    }
    Ok(out)
}

/// How each competitor of the focal campaign behaves in a forced world.
#[derive(Debug, Clone, PartialEq)]
pub struct ForcedWorld {
    /// Eligibility probability per competitor coordinate: `None` means not
    /// advertising (absent from queues), `Some(1.0)` advertising without
    /// experimenting, `Some(σ)` experimenting with test share `σ`.
    pub competitors: Vec<Option<f64>>,
}

impl ForcedWorld {
    /// Degenerate state `ω` restricted to the competitor set `present`.
    pub fn degenerate(omega: &Bits, present: &Bits) -> Self {
        assert_eq!(omega.len(), present.len());
        ForcedWorld {
            competitors: (0..omega.len())
                .map(|k| (omega.get(k) && present.get(k)).then_some(1.0))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub tau: f64,
    pub mc_se: f64,
    pub replications: u64,
}

/// Everything the oracle needs besides the world itself.
#[derive(Debug, Clone)]
pub struct OracleSetup<'a> {
    pub roster: &'a Roster,
    pub model: &'a CompiledModel,
    pub market: MarketConfig,
    pub seed: u64,
}

const BLOCK: u64 = 4096;

/// Monte Carlo ATE of making `focal` eligible, in the given forced world.
pub fn forced_world_ate(
    setup: &OracleSetup<'_>,
    focal: CampaignId,
    world: &ForcedWorld,
    replications: u64,
) -> Result<OracleEstimate> {
    if replications < 1 {
        return Err(Error::invalid("oracle needs at least one replication"));
    }
    let roster = setup.roster;
    let fpos = roster.require_position(focal)?;
    let f = setup.model.focal(focal)?;
    if world.competitors.len() + 1 != roster.len() {
        return Err(Error::invalid(format!(
            "forced world has {} competitor coordinates, expected {}",
            world.competitors.len(),
            roster.len() - 1
        )));
    }
    for p in world.competitors.iter().flatten() {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::invalid(format!("eligibility probability {p} outside [0, 1]")));
        }
    }
    let comp_pos = roster.competitor_positions(fpos);
    let blocks = replications.div_ceil(BLOCK);
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let (mut s, mut s2) = (0.0, 0.0);
            let end = ((b + 1) * BLOCK).min(replications);
            for r in b * BLOCK..end {
                let mut rng = substream(setup.seed, Stream::Oracle, r, focal.0 as u64);
                let d = replication(setup, f, fpos, &comp_pos, world, &mut rng);
                s += d;
                s2 += d * d;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1));
    let n = replications as f64;
    let tau = s / n;
    let var = if replications > 1 { ((s2 - n * tau * tau) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(OracleEstimate { tau, mc_se: (var / n).sqrt(), replications })
}

fn replication(
    setup: &OracleSetup<'_>,
    f: &CompiledFocal,
    fpos: usize,
    comp_pos: &[usize],
    world: &ForcedWorld,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let n = setup.roster.len();
    let mut candidates = Bits::zeros(n).with(fpos, true);
    let mut eligible = Bits::zeros(n);
    for (k, &p) in comp_pos.iter().enumerate() {
        if let Some(prob) = world.competitors[k] {
            candidates.set(p, true);
            let u: f64 = rng.random();
            if u < prob {
                eligible.set(p, true);
            }
        }
    }
    let t = setup.market.arrivals.draw(rng);
    let mut rng_off = rng.clone();
    let on = run_auctions(setup.roster, 0, &candidates, &eligible.with(fpos, true), t, &setup.market, rng);
    let off = run_auctions(setup.roster, 0, &candidates, &eligible, t, &setup.market, &mut rng_off);
    let exposure = |recs: &[crate::marketplace::AuctionRecord]| {
        let mut e = Bits::zeros(n);
        for r in recs {
            if let Some(p) = setup.roster.position(r.served) {
                e.set(p, true);
            }
        }
        e
    };
    let m = setup.model;
    m.expected_from_linear(f.linear(&exposure(&on))) - m.expected_from_linear(f.linear(&exposure(&off)))
}

/// `τ_j(ω | P_j(q))` for a partition whose competitor set is `present`.
pub fn true_degenerate_ate(
    setup: &OracleSetup<'_>,
    focal: CampaignId,
    present: &Bits,
    omega: &Bits,
    replications: u64,
) -> Result<OracleEstimate> {
    forced_world_ate(setup, focal, &ForcedWorld::degenerate(omega, present), replications)
}

/// One row of an oracle table.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleRow {
    pub focal: CampaignId,
    pub partition: usize,
    /// State over all competitor coordinates; absent competitors are 0.
    pub state: Bits,
    pub estimate: OracleEstimate,
}

/// Oracle ATEs for every partition of `focal` and every state of its
/// competitor set, in (partition, state) order.
pub fn oracle_table(
    setup: &OracleSetup<'_>,
    partitions: &crate::design::PartitionIndex,
    replications: u64,
    state_cap: usize,
) -> Result<Vec<OracleRow>> {
    let mut rows = Vec::new();
    for part in &partitions.partitions {
        let present = part.competitors;
        let m = present.count_ones();
        if m > state_cap {
            return Err(Error::Refused(format!(
                "partition {} of campaign {} has {m} competitors, above the state cap {state_cap}",
                part.label, partitions.focal
            )));
        }
        let coords: Vec<usize> = present.ones_positions().collect();
        for sub in Bits::all(m) {
            let mut state = Bits::zeros(present.len());
            for (i, &k) in coords.iter().enumerate() {
                state.set(k, sub.get(i));
            }
            let estimate = true_degenerate_ate(setup, partitions.focal, &present, &state, replications)?;
            rows.push(OracleRow { focal: partitions.focal, partition: part.label, state, estimate });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{Audience, Campaign};
    use crate::marketplace::{simulate_sessions, ArrivalModel};
    use crate::randomize::SplitSeed;

    fn roster() -> Roster {
        Roster::new(vec![
            Campaign::new(1, Audience::All, 0.5).with_score(3.0, 1.0),
            Campaign::new(2, Audience::All, 0.5).with_score(2.0, 1.0),
        ])
        .unwrap()
    }

    fn model(own: f64, gamma: f64, eta: f64, noise: Noise) -> OutcomeModel {
        OutcomeModel {
            focals: vec![(
                CampaignId(1),
                FocalEffects {
                    baseline: 2.0,
                    own_effect: own,
                    direct: vec![(CampaignId(2), gamma)],
                    interaction: vec![(CampaignId(2), eta)],
                },
            )],
            noise,
            floor: false,
        }
    }

    #[test]
    fn unknown_campaign_rejected() {
        let mut m = model(1.0, 0.0, 0.0, Noise::Poisson);
        m.focals[0].1.direct.push((CampaignId(7), 1.0));
        assert!(matches!(m.compile(&roster()), Err(Error::Config { .. })));
    }

    #[test]
    fn zero_model_gives_baseline() {
        let r = roster();
        let m = model(0.0, 0.0, 0.0, Noise::Gaussian { scale: 0.0 }).compile(&r).unwrap();
        let pop = Population::draw(&r, (0..300).collect(), SplitSeed(1));
        let sessions = simulate_sessions(&r, &pop, &MarketConfig::default(), 1);
        for rec in realize_outcomes(&r, &pop, &sessions, &m, 9).unwrap() {
            assert_eq!(rec.y, 2.0);
        }
    }

    #[test]
    fn own_effect_only() {
        let r = roster();
        let m = model(1.0, 0.0, 0.0, Noise::Gaussian { scale: 0.0 }).compile(&r).unwrap();
        let pop = Population::draw(&r, (0..300).collect(), SplitSeed(1));
        let sessions = simulate_sessions(&r, &pop, &MarketConfig::default(), 1);
        let recs = realize_outcomes(&r, &pop, &sessions, &m, 9).unwrap();
        for (rec, s) in recs.iter().zip(&sessions) {
            let e = s.exposure(&r).get(0) as u8 as f64;
            assert_eq!(rec.y, 2.0 + e);
        }
    }

    #[test]
    fn single_advertiser_served_once() {
        let r = Roster::new(vec![Campaign::new(1, Audience::All, 0.5)]).unwrap();
        let m = OutcomeModel {
            focals: vec![(CampaignId(1), FocalEffects { baseline: 0.0, own_effect: 1.0, ..Default::default() })],
            noise: Noise::Gaussian { scale: 0.0 },
            floor: false,
        }
        .compile(&r)
        .unwrap();
        let setup = OracleSetup {
            roster: &r,
            model: &m,
            market: MarketConfig { slots: 1, arrivals: ArrivalModel::Fixed(1), queue_jitter: 0.0 },
            seed: 3,
        };
        let est = true_degenerate_ate(&setup, CampaignId(1), &Bits::zeros(0), &Bits::zeros(0), 50).unwrap();
        assert_eq!(est.tau, 1.0);
        assert_eq!(est.mc_se, 0.0);
    }

    #[test]
    fn zero_replications_rejected() {
        let r = roster();
        let m = model(1.0, 0.0, 0.0, Noise::Poisson).compile(&r).unwrap();
        let setup = OracleSetup { roster: &r, model: &m, market: MarketConfig::default(), seed: 1 };
        assert!(true_degenerate_ate(&setup, CampaignId(1), &Bits::ones(1), &Bits::ones(1), 0).is_err());
    }

    #[test]
    fn floored_gaussian_expectation() {
        let r = roster();
        let mut om = model(0.0, 0.0, 0.0, Noise::Gaussian { scale: 1.0 });
        om.floor = true;
        let m = om.compile(&r).unwrap();
        // mu = 0 gives E[max(Z, 0)] = 1/sqrt(2π)
        let e = m.expected_from_linear(0.0);
        assert!((e - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
    }
}
