//! Experiment configuration in TOML.
//!
//! ```toml
//! [experiment]
//! users = 100000          # user ids 0..users
//! seed = 7
//! slots = 8               # auctions per page view
//! arrival_mean = 3.0      # geometric arrivals; or `arrivals_fixed = 5`
//! queue_jitter = 0.0
//! noise = "gaussian"      # or "poisson"
//! noise_scale = 1.0
//! floor = false
//! focals = [1, 2]         # campaigns with outcomes; default all
//! oracle_replications = 20000
//! oracle_focals = [1]     # campaigns with oracle tables; default all focals
//!
//! [[campaign]]
//! index = 1
//! audience = "all"        # "range:0..5000", "fraction:0.4[:salt]", "list:1,2,3"
//! share = 0.7
//! bid = 3.0
//! quality = 1.0
//! baseline = 5.0
//! own_effect = 1.0
//! effects = { "2" = 0.3 }        # exposure effects of other campaigns
//! interactions = { "2" = -0.2 }  # joint-exposure effects
//!
//! [[belief]]              # used by prospective-ATE calculations
//! campaign = 2
//! p_not_adv = 0.2
//! p_adv_not_exp = 0.5
//! p_adv_exp = 0.3
//! sigma = 0.7
//! ```

use std::collections::BTreeMap;
use std::ops::Range;

use serde::Deserialize;
use toml::Spanned;

use crate::calculus::CompetitorBelief;
use crate::design::{Audience, Campaign, CampaignId, Roster};
use crate::error::{Error, Result};
use crate::marketplace::{ArrivalModel, MarketConfig};
use crate::oracle::{FocalEffects, Noise, OutcomeModel};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: Spanned<RawExperiment>,
    #[serde(default)]
    campaign: Vec<Spanned<RawCampaign>>,
    #[serde(default)]
    belief: Vec<Spanned<RawBelief>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    users: u64,
    #[serde(default)]
    seed: Option<u64>,
    #[serde(default = "default_slots")]
    slots: u8,
    #[serde(default)]
    arrival_mean: Option<f64>,
    #[serde(default)]
    arrivals_fixed: Option<u32>,
    #[serde(default)]
    queue_jitter: f64,
    #[serde(default = "default_noise")]
    noise: String,
    #[serde(default = "default_noise_scale")]
    noise_scale: f64,
    #[serde(default)]
    floor: bool,
    #[serde(default)]
    focals: Option<Vec<u32>>,
    #[serde(default = "default_replications")]
    oracle_replications: u64,
    #[serde(default)]
    oracle_focals: Option<Vec<u32>>,
}

fn default_slots() -> u8 {
    crate::marketplace::MAX_SLOTS
}
fn default_noise() -> String {
    "gaussian".into()
}
fn default_noise_scale() -> f64 {
    1.0
}
fn default_replications() -> u64 {
    20_000
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCampaign {
    index: u32,
    #[serde(default = "default_audience")]
    audience: String,
    share: f64,
    #[serde(default = "default_one")]
    bid: f64,
    #[serde(default = "default_one")]
    quality: f64,
    #[serde(default)]
    baseline: f64,
    #[serde(default)]
    own_effect: f64,
    #[serde(default)]
    effects: BTreeMap<String, f64>,
    #[serde(default)]
    interactions: BTreeMap<String, f64>,
}

fn default_audience() -> String {
    "all".into()
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBelief {
    campaign: u32,
    p_not_adv: f64,
    p_adv_not_exp: f64,
    p_adv_exp: f64,
    #[serde(default = "default_sigma")]
    sigma: f64,
}

fn default_sigma() -> f64 {
    crate::calculus::DEFAULT_SIGMA
}

/// Parsed and validated experiment configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub users: u64,
    pub seed: Option<u64>,
    pub roster: Roster,
    pub market: MarketConfig,
    pub outcome: OutcomeModel,
    pub oracle_replications: u64,
    /// Campaigns whose oracle tables `simulate` computes.
    pub oracle_focals: Vec<CampaignId>,
    pub beliefs: BTreeMap<CampaignId, CompetitorBelief<f64>>,
}

impl ExperimentConfig {
    pub fn user_ids(&self) -> Vec<u64> {
        (0..self.users).collect()
    }

    /// Beliefs over the competitors of `focal` in coordinate order; campaigns
    /// without a `[[belief]]` entry are assumed to advertise for sure.
    pub fn beliefs_for(&self, focal: CampaignId) -> Result<Vec<CompetitorBelief<f64>>> {
        let pos = self.roster.require_position(focal)?;
        self.roster
            .competitor_ids(pos)
            .into_iter()
            .map(|k| match self.beliefs.get(&k) {
                Some(b) => Ok(*b),
                None => CompetitorBelief::advertising(1.0),
            })
            .collect()
    }
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config {
        line: e.span().map(|s| line_of(text, s)),
        message: e.message().to_string(),
    })?;
    let at = |span: Range<usize>, message: String| Error::Config { line: Some(line_of(text, span)), message };

    let exp_span = raw.experiment.span();
    let exp = raw.experiment.into_inner();
    if raw.campaign.is_empty() {
        return Err(at(exp_span, "no [[campaign]] sections".into()));
    }
    let arrivals = match (exp.arrival_mean, exp.arrivals_fixed) {
        (Some(_), Some(_)) => return Err(at(exp_span, "set either arrival_mean or arrivals_fixed, not both".into())),
        (None, Some(t)) => ArrivalModel::Fixed(t),
        (Some(mean), None) => ArrivalModel::Geometric { mean },
        (None, None) => ArrivalModel::default(),
    };
    let market = MarketConfig { slots: exp.slots, arrivals, queue_jitter: exp.queue_jitter };
    market.validate().map_err(|e| at(exp_span.clone(), strip(e)))?;
    let noise = match exp.noise.as_str() {
        "gaussian" => Noise::Gaussian { scale: exp.noise_scale },
        "poisson" => Noise::Poisson,
        other => return Err(at(exp_span, format!("unknown noise kind {other:?}"))),
    };
    if exp.oracle_replications == 0 {
        return Err(at(exp_span, "oracle_replications must be at least 1".into()));
    }

    let mut campaigns = Vec::new();
    let mut effects = Vec::new();
    for c in &raw.campaign {
        let span = c.span();
        let c = c.get_ref();
        let audience: Audience = c.audience.parse().map_err(|e| at(span.clone(), strip(e)))?;
        campaigns.push(Campaign {
            index: CampaignId(c.index),
            audience,
            treatment_share: c.share,
            base_bid: c.bid,
            quality: c.quality,
        });
        let parse_map = |m: &BTreeMap<String, f64>| -> Result<Vec<(CampaignId, f64)>> {
            m.iter()
                .map(|(k, v)| {
                    k.trim()
                        .parse::<u32>()
                        .map(|k| (CampaignId(k), *v))
                        .map_err(|_| at(span.clone(), format!("campaign key {k:?} is not an index")))
                })
                .collect()
        };
        effects.push((
            CampaignId(c.index),
            FocalEffects {
                baseline: c.baseline,
                own_effect: c.own_effect,
                direct: parse_map(&c.effects)?,
                interaction: parse_map(&c.interactions)?,
            },
        ));
    }
    let first_span = raw.campaign[0].span();
    let roster = Roster::new(campaigns).map_err(|e| at(first_span, strip(e)))?;
    if let Some(focals) = &exp.focals {
        for f in focals {
            if roster.position(CampaignId(*f)).is_none() {
                return Err(at(exp_span, format!("focal {f} is not a configured campaign")));
            }
        }
        effects.retain(|(id, _)| focals.contains(&id.0));
    }
    let outcome = OutcomeModel { focals: effects, noise, floor: exp.floor };
    let modelled: Vec<CampaignId> = outcome.focals.iter().map(|(id, _)| *id).collect();
    let oracle_focals = match &exp.oracle_focals {
        None => modelled,
        Some(list) => {
            for f in list {
                if !modelled.contains(&CampaignId(*f)) {
                    return Err(at(exp_span, format!("oracle focal {f} has no outcome model")));
                }
            }
            list.iter().map(|&f| CampaignId(f)).collect()
        }
    };
    outcome.compile(&roster).map_err(|e| at(exp_span.clone(), strip(e)))?;

    let mut beliefs = BTreeMap::new();
    for b in &raw.belief {
        let span = b.span();
        let b = b.get_ref();
        let id = CampaignId(b.campaign);
        if roster.position(id).is_none() {
            return Err(at(span, format!("belief for unknown campaign {id}")));
        }
        let belief = CompetitorBelief::new(b.p_not_adv, b.p_adv_not_exp, b.p_adv_exp, b.sigma)
            .map_err(|e| at(span.clone(), strip(e)))?;
        if beliefs.insert(id, belief).is_some() {
            return Err(at(span, format!("duplicate belief for campaign {id}")));
        }
    }

    Ok(ExperimentConfig {
        users: exp.users,
        seed: exp.seed,
        roster,
        market,
        outcome,
        oracle_replications: exp.oracle_replications,
        oracle_focals,
        beliefs,
    })
}

/// Message of an error without its category prefix.
fn strip(e: Error) -> String {
    match e {
        Error::Config { message, .. } => message,
        Error::InvalidInput(m) | Error::NotIdentified(m) | Error::Refused(m) => m,
        other => other.to_string(),
    }
}
