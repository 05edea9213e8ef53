//! Built-in scaled-down reproductions run by `parexp replicate`.
//!
//! - `two_firm`: two fully overlapping advertisers. Checks the three focal
//!   ATEs (competitor absent, advertising, experimenting at σ = 0.7) against
//!   the oracle, and the σ-mixing identity on the estimates.
//! - `overlap_table`: sixteen campaigns with partly overlapping audiences;
//!   tabulates how many distinct campaigns each user was served.
//! - `balance`: sixteen campaigns under a null pre-period covariate model;
//!   per-campaign balance p-values and their KS uniformity test.

use rayon::prelude::*;

use crate::calculus::mix_sigma;
use crate::design::{Audience, Campaign, CampaignId, Population, Roster};
use crate::diagnostics::{balance_test, ks_uniformity, proportion_test, quantile_pairs, simulate_covariates};
use crate::error::{Error, Result};
use crate::estimators::{stacked_ols, CellKey, EstimationData};
use crate::marketplace::{audit_logs, exposure_counts, simulate_sessions, MarketConfig};
use crate::oracle::{forced_world_ate, realize_outcomes, FocalEffects, ForcedWorld, Noise, OracleSetup, OutcomeModel};
use crate::randomize::{Arm, SplitSeed};

pub const SCENARIOS: [&str; 3] = ["two_firm", "overlap_table", "balance"];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Named tidy table emitted by a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scenario: String,
    pub checks: Vec<Check>,
    pub tables: Vec<Table>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

fn check(name: &str, pass: bool, detail: String) -> Check {
    Check { name: name.into(), pass, detail }
}

fn table(name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Table {
    Table { name: name.into(), header: header.iter().map(|h| h.to_string()).collect(), rows }
}

pub fn run_scenario(name: &str, seed: u64) -> Result<Report> {
    match name {
        "two_firm" => two_firm(seed),
        "overlap_table" => overlap_table(seed),
        "balance" => balance(seed),
        other => Err(Error::invalid(format!("unknown scenario {other:?}; expected one of {}", SCENARIOS.join(", ")))),
    }
}

const TWO_FIRM_USERS: u64 = 40_000;
const TWO_FIRM_REPLICATIONS: u64 = 100_000;

fn two_firm(seed: u64) -> Result<Report> {
    let roster = Roster::new(vec![
        Campaign::new(1, Audience::All, 0.7).with_score(3.0, 1.0),
        Campaign::new(2, Audience::All, 0.7).with_score(2.0, 1.0),
    ])?;
    let model = OutcomeModel {
        focals: vec![(
            CampaignId(1),
            FocalEffects {
                baseline: 2.0,
                own_effect: 1.0,
                direct: vec![(CampaignId(2), 0.5)],
                interaction: vec![(CampaignId(2), -0.6)],
            },
        )],
        noise: Noise::Gaussian { scale: 1.0 },
        floor: false,
    }
    .compile(&roster)?;
    let market = MarketConfig::default();
    let population = Population::draw(&roster, (0..TWO_FIRM_USERS).collect(), SplitSeed(seed));
    let sessions = simulate_sessions(&roster, &population, &market, seed);
    let outcomes = realize_outcomes(&roster, &population, &sessions, &model, seed)?;
    let partitions = crate::design::build_partitions(&roster, population.users())?;
    let data = EstimationData::<f64>::assemble(&population, &partitions[0], &outcomes, None)?;
    let ate = stacked_ols(&data, 2);
    let cell = |d: &str| {
        ate.get(&CellKey { partition: 1, d: d.parse().expect("bit string") })
            .copied()
            .ok_or_else(|| Error::NotIdentified(format!("cell d={d} not identified")))
    };
    let (c0, c1) = (cell("0")?, cell("1")?);

    let setup = OracleSetup { roster: &roster, model: &model, market, seed };
    let world = |p: Option<f64>| ForcedWorld { competitors: vec![p] };
    let sigma = 0.7;
    let o0 = forced_world_ate(&setup, CampaignId(1), &world(None), TWO_FIRM_REPLICATIONS)?;
    let o1 = forced_world_ate(&setup, CampaignId(1), &world(Some(1.0)), TWO_FIRM_REPLICATIONS)?;
    let os = forced_world_ate(&setup, CampaignId(1), &world(Some(sigma)), TWO_FIRM_REPLICATIONS)?;
    let mixed = mix_sigma(c0.tau, c1.tau, sigma)?;
    let mixed_se = ((1.0 - sigma).powi(2) * c0.se_tau.powi(2) + sigma.powi(2) * c1.se_tau.powi(2)).sqrt();

    let within = |name: &str, est: f64, se: f64, truth: f64, mc: f64| {
        let bound = 3.0 * (se * se + mc * mc).sqrt();
        let gap = (est - truth).abs();
        check(name, gap <= bound, format!("estimate {est:.4}, oracle {truth:.4}, |gap| {gap:.4} <= {bound:.4}"))
    };
    let contrast_se = (o0.mc_se.powi(2) + o1.mc_se.powi(2)).sqrt();
    let checks = vec![
        within("tau_absent", c0.tau, c0.se_tau, o0.tau, o0.mc_se),
        within("tau_advertising", c1.tau, c1.se_tau, o1.tau, o1.mc_se),
        within("tau_experimenting", mixed, mixed_se, os.tau, os.mc_se),
        check(
            "competitor_matters",
            (o1.tau - o0.tau).abs() > 3.0 * contrast_se,
            format!("oracle tau(1) - tau(0) = {:.4}, MC se {contrast_se:.4}", o1.tau - o0.tau),
        ),
    ];
    let row = |name: &str, truth: f64, mc: f64, est: f64, se: f64| {
        vec![name.to_string(), truth.to_string(), mc.to_string(), est.to_string(), se.to_string()]
    };
    Ok(Report {
        scenario: "two_firm".into(),
        checks,
        tables: vec![table(
            "two_firm",
            &["ate", "oracle_tau", "oracle_mc_se", "estimate", "se"],
            vec![
                row("absent", o0.tau, o0.mc_se, c0.tau, c0.se_tau),
                row("advertising", o1.tau, o1.mc_se, c1.tau, c1.se_tau),
                row("experimenting_0.7", os.tau, os.mc_se, mixed, mixed_se),
            ],
        )],
    })
}

const SIXTEEN_USERS: u64 = 20_000;

/// Sixteen campaigns with audience shares spread over `[0.3, 0.9]` and
/// decreasing bids.
fn sixteen_roster() -> Result<Roster> {
    Roster::new(
        (1..=16u32)
            .map(|i| {
                let share = 0.3 + 0.04 * (i - 1) as f64;
                Campaign::new(i, Audience::Fraction { share, salt: 1 }, 0.7).with_score(20.0 - i as f64, 1.0)
            })
            .collect(),
    )
}

fn overlap_table(seed: u64) -> Result<Report> {
    let roster = sixteen_roster()?;
    let market = MarketConfig::default();
    let population = Population::draw(&roster, (0..SIXTEEN_USERS).collect(), SplitSeed(seed));
    let sessions = simulate_sessions(&roster, &population, &market, seed);
    let counts = exposure_counts(&roster, &sessions);
    let mut hist = vec![0usize; roster.len() + 1];
    for c in &counts {
        hist[*c] += 1;
    }
    let audit = audit_logs(&roster, &population, &sessions, market.slots);
    let n = counts.len() as f64;
    let rows = hist
        .iter()
        .enumerate()
        .map(|(k, &u)| vec![k.to_string(), u.to_string(), (u as f64 / n).to_string()])
        .collect();
    let clean = audit.exposure_violations + audit.counterfactual_violations + audit.repeat_violations == 0;
    Ok(Report {
        scenario: "overlap_table".into(),
        checks: vec![
            check(
                "counts_cover_users",
                hist.iter().sum::<usize>() == population.len(),
                format!("{} users tabulated", hist.iter().sum::<usize>()),
            ),
            check("log_invariants", clean, format!("{audit:?}")),
        ],
        tables: vec![table("overlap_table", &["campaigns_served", "users", "share"], rows)],
    })
}

fn balance(seed: u64) -> Result<Report> {
    let roster = sixteen_roster()?;
    let population = Population::draw(&roster, (0..SIXTEEN_USERS).collect(), SplitSeed(seed));
    let covariates: Vec<Vec<f64>> =
        population.users().par_iter().map(|&u| simulate_covariates(u, seed).to_vec()).collect();
    let mut rows = Vec::new();
    let mut balance_p = Vec::new();
    for pos in 0..roster.len() {
        let members: Vec<usize> = (0..population.len()).filter(|&i| population.targeting(i).get(pos)).collect();
        let x: Vec<Vec<f64>> = members.iter().map(|&i| covariates[i].clone()).collect();
        let arms: Vec<bool> = members.iter().map(|&i| population.assignment(i).is_test(pos)).collect();
        let c = roster.get(pos);
        let share_p = proportion_test(arms.iter().map(|&t| if t { Arm::Test } else { Arm::Control }), c.treatment_share)?;
        let p = balance_test(&x, &arms)?;
        balance_p.push(p);
        rows.push(vec![c.index.to_string(), members.len().to_string(), share_p.to_string(), p.to_string()]);
    }
    let ks = ks_uniformity(&balance_p)?;
    let qq = quantile_pairs(&balance_p).into_iter().map(|(u, q)| vec![u.to_string(), q.to_string()]).collect();
    Ok(Report {
        scenario: "balance".into(),
        checks: vec![check(
            "ks_uniform_balance",
            ks.p_value > 0.05,
            format!("KS statistic {:.4}, p-value {:.4} over {} campaigns", ks.statistic, ks.p_value, ks.n),
        )],
        tables: vec![
            table("balance", &["campaign", "users", "proportion_p", "balance_p"], rows),
            table("balance_qq", &["uniform_quantile", "empirical_quantile"], qq),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scenario() {
        assert!(run_scenario("nope", 1).is_err());
    }

    #[test]
    fn overlap_runs() {
        let r = run_scenario("overlap_table", 3).unwrap();
        assert!(r.passed(), "{:?}", r.checks);
        assert_eq!(r.tables[0].rows.len(), 17);
    }

    #[test]
    fn two_firm_and_balance_pass() {
        for name in ["two_firm", "balance"] {
            let r = run_scenario(name, 1).unwrap();
            for c in &r.checks {
                println!("{name} {} {} {}", c.name, c.pass, c.detail);
            }
            assert!(r.passed());
        }
    }
}
