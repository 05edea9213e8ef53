//! End-to-end runs: simulate an experiment, compute oracle tables, estimate
//! degenerate ATEs for a focal campaign, and lay the results out on disk.
//!
//! Every random draw descends from one seed through named substreams, and
//! parallel stages collect in user order, so outputs do not depend on the
//! size of the rayon pool the caller installs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::{parse_config, ExperimentConfig};
use crate::design::{build_partitions, CampaignId, PartitionIndex, Population, Roster, DEFAULT_STATE_CAP};
use crate::error::{Error, Result};
use crate::estimators::{
    cv_bandwidths, interaction_ols, kernel_table, stacked_ols, AteTable, Bandwidths, CvOptions, CvReport,
    EstimationData, InteractionFit,
};
use crate::io::{self, Manifest};
use crate::marketplace::{simulate_sessions, AuctionRecord, Session};
use crate::oracle::{oracle_table, realize_outcomes, OracleRow, OracleSetup, OutcomeRecord};
use crate::randomize::SplitSeed;

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ORACLE_FILE: &str = "oracle.csv";
const LOG_STEM: &str = "exposure_log.csv";
const OUTCOME_STEM: &str = "outcomes.csv";

/// Population and partitions are a pure function of (config, seed).
pub fn draw_population(config: &ExperimentConfig, seed: u64) -> Result<(Population, Vec<PartitionIndex>)> {
    let users = config.user_ids();
    let partitions = build_partitions(&config.roster, &users)?;
    Ok((Population::draw(&config.roster, users, SplitSeed(seed)), partitions))
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub seed: u64,
    pub population: Population,
    pub partitions: Vec<PartitionIndex>,
    pub sessions: Vec<Session>,
    pub outcomes: Vec<OutcomeRecord>,
}

impl Simulation {
    pub fn records(&self) -> impl Iterator<Item = &AuctionRecord> {
        self.sessions.iter().flat_map(|s| &s.records)
    }

    pub fn partitions_of(&self, focal: CampaignId) -> Result<&PartitionIndex> {
        find_partitions(&self.partitions, focal)
    }
}

pub fn find_partitions(partitions: &[PartitionIndex], focal: CampaignId) -> Result<&PartitionIndex> {
    partitions
        .iter()
        .find(|p| p.focal == focal)
        .ok_or_else(|| Error::invalid(format!("campaign {focal} is not in the roster")))
}

pub fn simulate(config: &ExperimentConfig, seed: u64) -> Result<Simulation> {
    let (population, partitions) = draw_population(config, seed)?;
    let sessions = simulate_sessions(&config.roster, &population, &config.market, seed);
    let model = config.outcome.compile(&config.roster)?;
    let outcomes = realize_outcomes(&config.roster, &population, &sessions, &model, seed)?;
    Ok(Simulation { seed, population, partitions, sessions, outcomes })
}

/// Oracle tables for the configured oracle focals, concatenated in roster order.
pub fn oracle_rows(config: &ExperimentConfig, partitions: &[PartitionIndex], seed: u64) -> Result<Vec<OracleRow>> {
    let model = config.outcome.compile(&config.roster)?;
    let setup = OracleSetup { roster: &config.roster, model: &model, market: config.market, seed };
    let mut rows = Vec::new();
    for id in config.roster.ids().filter(|id| config.oracle_focals.contains(id)) {
        rows.extend(oracle_table(&setup, find_partitions(partitions, id)?, config.oracle_replications, DEFAULT_STATE_CAP)?);
    }
    Ok(rows)
}

/// Regroups log records into one session per user of the population.
pub fn sessions_from_records(population: &Population, records: Vec<AuctionRecord>) -> Result<Vec<Session>> {
    let mut sessions: Vec<Session> =
        population.users().iter().map(|&user_id| Session { user_id, records: Vec::new() }).collect();
    for r in records {
        let idx = population
            .index_of(r.user_id)
            .ok_or_else(|| Error::invalid(format!("log record for unknown user {}", r.user_id)))?;
        sessions[idx].records.push(r);
    }
    Ok(sessions)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sample {
    /// Every user in the focal audience.
    All,
    /// Users served the focal ad, factually or counterfactually, at least once.
    Eligible,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Cells,
    Kernel,
    Interaction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub method: Method,
    pub sample: Sample,
    /// Share of the sample used to choose bandwidths; 0 selects and
    /// estimates on the full sample.
    pub split: f64,
    pub split_seed: u64,
    /// Fixed common bandwidth; skips cross-validation and splitting.
    pub lambda: Option<f64>,
    pub min_arm: usize,
    pub cv: CvOptions,
    /// Rival for the interaction regression; defaults to the campaign that
    /// shares the most auction queues with the focal one.
    pub rival: Option<CampaignId>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            method: Method::Cells,
            sample: Sample::Eligible,
            split: 0.1,
            split_seed: 0,
            lambda: None,
            min_arm: crate::estimators::DEFAULT_MIN_ARM,
            cv: CvOptions::default(),
            rival: None,
        }
    }
}

/// Data an estimate is computed from.
#[derive(Debug, Clone, Copy)]
pub struct EstimateInputs<'a> {
    pub roster: &'a Roster,
    pub population: &'a Population,
    pub partitions: &'a PartitionIndex,
    pub records: &'a [AuctionRecord],
    pub outcomes: &'a [OutcomeRecord],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TableEstimate {
    pub table: AteTable<f64>,
    pub cv: Option<CvReport<f64>>,
    pub bandwidths: Option<Bandwidths<f64>>,
    pub n_sample: usize,
    pub n_train: usize,
    pub n_estimate: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEstimate {
    pub rival: CampaignId,
    /// Auctions whose queue held both campaigns.
    pub shared_auctions: u64,
    pub fit: InteractionFit<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Estimate {
    Table(TableEstimate),
    Interaction(InteractionEstimate),
}

/// Campaign sharing the most auction queues with `focal`, ties to the lower
/// index, with its count. `None` if no other campaign ever shares a queue.
pub fn rival_by_cooccurrence(records: &[AuctionRecord], focal: CampaignId) -> Option<(CampaignId, u64)> {
    let mut counts: BTreeMap<CampaignId, u64> = BTreeMap::new();
    for r in records.iter().filter(|r| r.queue.contains(&focal)) {
        for &c in r.queue.iter().filter(|&&c| c != focal) {
            *counts.entry(c).or_default() += 1;
        }
    }
    counts.into_iter().filter(|&(_, n)| n > 0).fold(None, |best, (c, n)| match best {
        Some((_, m)) if m >= n => best,
        _ => Some((c, n)),
    })
}

pub fn estimate(inputs: &EstimateInputs<'_>, options: &EstimateOptions) -> Result<Estimate> {
    let focal = inputs.partitions.focal;
    let sample = match options.sample {
        Sample::All => None,
        Sample::Eligible => Some(crate::marketplace::eligible_sample(inputs.records, focal)),
    };
    if sample.as_ref().is_some_and(|s| s.is_empty()) {
        return Err(Error::NotIdentified(format!("no user was eligible for campaign {focal}")));
    }
    let data = EstimationData::<f64>::assemble(inputs.population, inputs.partitions, inputs.outcomes, sample.as_deref())?;
    if data.is_empty() {
        return Err(Error::NotIdentified(format!("no outcomes for campaign {focal} in the sample")));
    }
    match options.method {
        Method::Cells => {
            let table = stacked_ols(&data, options.min_arm);
            require_rows(&table)?;
            let n = data.len();
            Ok(Estimate::Table(TableEstimate { table, cv: None, bandwidths: None, n_sample: n, n_train: 0, n_estimate: n }))
        }
        Method::Kernel => kernel_estimate(&data, options),
        Method::Interaction => interaction_estimate(inputs, &data, options),
    }
}

fn require_rows(table: &AteTable<f64>) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::NotIdentified(format!(
            "no identified cells for campaign {} ({} cells lack a test or control user)",
            table.focal,
            table.not_identified.len()
        )));
    }
    Ok(())
}

fn kernel_estimate(data: &EstimationData<f64>, options: &EstimateOptions) -> Result<Estimate> {
    let n_coords = data.n_competitors + data.n_partitions;
    let (bandwidths, cv, train_n, est) = match options.lambda {
        Some(l) => (Bandwidths::constant(n_coords, l)?, None, 0, data.clone()),
        None => {
            if !(0.0..1.0).contains(&options.split) {
                return Err(Error::invalid(format!("split fraction {} outside [0, 1)", options.split)));
            }
            let (train, est) = if options.split > 0.0 {
                data.split(options.split, options.split_seed)
            } else {
                (data.clone(), data.clone())
            };
            if train.len() < 2 {
                return Err(Error::NotIdentified(format!("training sample has {} observations", train.len())));
            }
            let report = cv_bandwidths(&train.cells(), &options.cv)?;
            (report.bandwidths.clone(), Some(report), train.len(), est)
        }
    };
    let table = kernel_table(&est.cells(), &bandwidths, data.focal, options.min_arm)?;
    require_rows(&table)?;
    Ok(Estimate::Table(TableEstimate {
        table,
        cv,
        bandwidths: Some(bandwidths),
        n_sample: data.len(),
        n_train: train_n,
        n_estimate: est.len(),
    }))
}

fn interaction_estimate(inputs: &EstimateInputs<'_>, data: &EstimationData<f64>, options: &EstimateOptions) -> Result<Estimate> {
    let focal = data.focal;
    let (rival, shared) = match options.rival {
        Some(r) => {
            let shared = inputs.records.iter().filter(|a| a.queue.contains(&focal) && a.queue.contains(&r)).count() as u64;
            (r, shared)
        }
        None => rival_by_cooccurrence(inputs.records, focal)
            .ok_or_else(|| Error::NotIdentified(format!("no campaign shares an auction with {focal}")))?,
    };
    if rival == focal {
        return Err(Error::invalid("rival must differ from the focal campaign"));
    }
    let rpos = inputs.roster.require_position(rival)?;
    let fpos = inputs.partitions.focal_pos;
    let mut rows = Vec::with_capacity(data.len());
    for o in &data.obs {
        let idx = inputs.population.index_of(o.user_id).expect("assembled users belong to the population");
        if !inputs.population.targeting(idx).get(rpos) {
            continue;
        }
        let a = inputs.population.assignment(idx);
        rows.push((a.is_test(fpos), a.is_test(rpos), o.y));
    }
    let fit = interaction_ols(&rows)?;
    Ok(Estimate::Interaction(InteractionEstimate { rival, shared_auctions: shared, fit }))
}

/// Bandwidth coordinate names: `d:<campaign>` per competitor, then
/// `s:<label>` per partition.
pub fn coordinate_names(roster: &Roster, partitions: &PartitionIndex) -> Vec<String> {
    roster
        .competitor_ids(partitions.focal_pos)
        .iter()
        .map(|k| format!("d:{k}"))
        .chain(partitions.partitions.iter().map(|p| format!("s:{}", p.label)))
        .collect()
}

fn data_file(dir: &Path, stem: &str, gzip: bool) -> PathBuf {
    dir.join(if gzip { format!("{stem}.gz") } else { stem.to_string() })
}

/// Finds `stem` or `stem.gz` in `dir`.
fn existing_data_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    [false, true]
        .into_iter()
        .map(|gz| data_file(dir, stem, gz))
        .find(|p| p.exists())
        .ok_or_else(|| Error::io(dir.join(stem), std::io::Error::from(std::io::ErrorKind::NotFound)))
}

/// Writes a simulation run: the config it came from, the exposure log,
/// outcomes, oracle tables and a manifest of digests.
pub fn write_simulation(
    dir: &Path,
    config_text: &str,
    config: &ExperimentConfig,
    sim: &Simulation,
    oracle: &[OracleRow],
    gzip: bool,
) -> Result<Manifest> {
    let config_path = dir.join(CONFIG_FILE);
    io::write_atomic(&config_path, |w| w.write_all(config_text.as_bytes()).map_err(|e| Error::io(&config_path, e)))?;
    let log = data_file(dir, LOG_STEM, gzip);
    io::write_exposure_log(&log, sim.records())?;
    let outcomes = data_file(dir, OUTCOME_STEM, gzip);
    io::write_outcomes(&outcomes, &sim.outcomes)?;
    let oracle_path = dir.join(ORACLE_FILE);
    io::write_oracle(&oracle_path, oracle)?;

    let mut m = Manifest::new("simulate");
    m.seed = Some(sim.seed);
    m.config_digest = Some(io::sha256_hex(config_text.as_bytes()));
    m.record_outputs(&[config_path, log, outcomes, oracle_path])?;
    m.set("users", sim.population.len());
    m.set("auctions", sim.sessions.iter().map(|s| s.records.len()).sum::<usize>());
    m.set(
        "roster",
        config
            .roster
            .campaigns()
            .iter()
            .map(|c| json!({"index": c.index.0, "share": c.treatment_share, "bid": c.base_bid, "quality": c.quality}))
            .collect::<Vec<_>>(),
    );
    m.set("oracle_replications", config.oracle_replications);
    m.write(&dir.join(MANIFEST_FILE))?;
    Ok(m)
}

/// A simulation run read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub config_text: String,
    pub config: ExperimentConfig,
    pub manifest: Manifest,
    pub seed: u64,
    pub population: Population,
    pub partitions: Vec<PartitionIndex>,
    pub records: Vec<AuctionRecord>,
    pub outcomes: Vec<OutcomeRecord>,
    pub log_path: PathBuf,
    pub outcome_path: PathBuf,
}

pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let config_path = dir.join(CONFIG_FILE);
    let config_text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let config = parse_config(&config_text)?;
    let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
    let seed = manifest
        .seed
        .ok_or_else(|| Error::Format { path: dir.join(MANIFEST_FILE), message: "manifest has no seed".into() })?;
    let (population, partitions) = draw_population(&config, seed)?;
    let log_path = existing_data_file(dir, LOG_STEM)?;
    let outcome_path = existing_data_file(dir, OUTCOME_STEM)?;
    let records = io::read_exposure_log(&log_path)?;
    let outcomes = io::read_outcomes(&outcome_path)?;
    Ok(LoadedRun { config_text, config, manifest, seed, population, partitions, records, outcomes, log_path, outcome_path })
}

impl LoadedRun {
    pub fn inputs(&self, focal: CampaignId) -> Result<EstimateInputs<'_>> {
        Ok(EstimateInputs {
            roster: &self.config.roster,
            population: &self.population,
            partitions: find_partitions(&self.partitions, focal)?,
            records: &self.records,
            outcomes: &self.outcomes,
        })
    }
}

pub fn method_name(method: Method) -> &'static str {
    match method {
        Method::Cells => "cells",
        Method::Kernel => "kernel",
        Method::Interaction => "interaction",
    }
}

/// `ate_<focal>.csv` for per-cell OLS, `ate_<focal>_kernel.csv` for the
/// kernel estimator.
pub fn ate_file_name(focal: CampaignId, method: Method) -> String {
    match method {
        Method::Cells => format!("ate_{focal}.csv"),
        other => format!("ate_{focal}_{}.csv", method_name(other)),
    }
}

/// Writes an estimate into `dir` and returns its manifest.
pub fn write_estimate(dir: &Path, run: &LoadedRun, focal: CampaignId, options: &EstimateOptions, est: &Estimate) -> Result<Manifest> {
    let mut m = Manifest::new("estimate");
    m.seed = Some(run.seed);
    m.config_digest = Some(io::sha256_hex(run.config_text.as_bytes()));
    m.record_input("exposure_log", &run.log_path)?;
    m.record_input("outcomes", &run.outcome_path)?;
    m.set("focal", focal.0);
    m.set("method", method_name(options.method));
    m.set("sample", format!("{:?}", options.sample).to_lowercase());
    m.set("min_arm", options.min_arm);
    let mut outputs = Vec::new();
    match est {
        Estimate::Table(t) => {
            let ate = dir.join(ate_file_name(focal, options.method));
            io::write_ate_table(&ate, &t.table)?;
            outputs.push(ate);
            if let Some(bw) = &t.bandwidths {
                let path = dir.join(format!("bandwidths_{focal}.csv"));
                let names = coordinate_names(&run.config.roster, find_partitions(&run.partitions, focal)?);
                io::write_table(
                    &path,
                    &["coord", "lambda"],
                    names.into_iter().zip(&bw.lambda).map(|(n, l)| vec![n, l.to_string()]),
                )?;
                outputs.push(path);
            }
            m.set("n_sample", t.n_sample);
            m.set("n_train", t.n_train);
            m.set("n_estimate", t.n_estimate);
            m.set("identified_cells", t.table.rows.len());
            m.set("not_identified_cells", t.table.not_identified.len());
            if let Some(cv) = &t.cv {
                m.set("split", options.split);
                m.set("cv_loss", cv.loss);
                m.set("cv_skipped", cv.skipped);
                m.set("cv_evaluations", cv.evaluations);
            }
            if let Some(l) = options.lambda {
                m.set("lambda", l);
            }
        }
        Estimate::Interaction(i) => {
            let path = dir.join(format!("interaction_{focal}.csv"));
            let terms = ["alpha", "beta1", "beta2", "beta3"];
            io::write_table(
                &path,
                &["term", "coef", "se", "p_value"],
                (0..4).map(|t| {
                    vec![terms[t].to_string(), i.fit.coef[t].to_string(), i.fit.se[t].to_string(), i.fit.p_value[t].to_string()]
                }),
            )?;
            outputs.push(path);
            m.set("rival", i.rival.0);
            m.set("shared_auctions", i.shared_auctions);
            m.set("cell_counts_00_01_10_11", i.fit.counts);
        }
    }
    m.record_outputs(&outputs)?;
    m.write(&dir.join(format!("estimate_{focal}_{}.json", method_name(options.method))))?;
    Ok(m)
}
