use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parexp::calculus::{
    competitor_curve, experimentation_surface, prospective_ate, scenario_curve, Averaging, BeliefProfile,
    DegenerateTable, Scenario,
};
use parexp::config::parse_config;
use parexp::design::{check_assumptions, CampaignId};
use parexp::diagnostics::{
    balance_test, heterogeneity_summary, ks_uniformity, proportion_test, quantile_pairs, simulate_covariates,
};
use parexp::estimators::{pooled_ols, EstimationData};
use parexp::io::{self, Manifest};
use parexp::marketplace::{audit_logs, exposure_counts};
use parexp::pipeline::{self, Estimate, EstimateOptions, LoadedRun, Method, Sample};
use parexp::scenarios::run_scenario;
use parexp::{Arm, Error, Result};

use crate::{
    AveragingArg, CalculusArgs, Command, DiagnoseArgs, EstimateArgs, MethodArg, ReplicateArgs, SampleArg, SimulateArgs,
};

/// Runs one subcommand; the returned value is the process exit code.
pub fn run(command: Command) -> Result<u8> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Calculus(a) => calculus(a),
        Command::Diagnose(a) => diagnose(a),
        Command::Replicate(a) => replicate(a),
    }
}

fn simulate(a: SimulateArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| Error::io(&a.config, e))?;
    let config = parse_config(&text).map_err(|e| match e {
        Error::Config { line, message } => Error::Config { line, message: format!("{}: {message}", a.config.display()) },
        other => other,
    })?;
    let seed = a
        .seed
        .or(config.seed)
        .ok_or_else(|| Error::config("no seed: pass --seed or set `seed` under [experiment]"))?;
    let sim = pipeline::simulate(&config, seed)?;
    let oracle = pipeline::oracle_rows(&config, &sim.partitions, seed)?;
    let m = pipeline::write_simulation(&a.out, &text, &config, &sim, &oracle, a.gzip)?;
    println!(
        "simulated {} users, {} auctions, {} oracle rows -> {}",
        sim.population.len(),
        m.values.get("auctions").cloned().unwrap_or_default(),
        oracle.len(),
        a.out.display()
    );
    Ok(0)
}

fn estimate(a: EstimateArgs) -> Result<u8> {
    let run = pipeline::load_run(&a.input)?;
    let focal = CampaignId(a.focal);
    let options = EstimateOptions {
        method: match a.method {
            MethodArg::Cells => Method::Cells,
            MethodArg::Kernel => Method::Kernel,
            MethodArg::Interaction => Method::Interaction,
        },
        sample: match a.sample {
            SampleArg::Eligible => Sample::Eligible,
            SampleArg::All => Sample::All,
        },
        split: a.split,
        split_seed: a.seed.unwrap_or(run.seed),
        lambda: a.lambda,
        min_arm: a.min_cell,
        cv: parexp::estimators::CvOptions { seed: a.seed.unwrap_or(run.seed), ..Default::default() },
        rival: a.rival.map(CampaignId),
    };
    let est = pipeline::estimate(&run.inputs(focal)?, &options)?;
    let out = a.out.unwrap_or_else(|| a.input.clone());
    pipeline::write_estimate(&out, &run, focal, &options, &est)?;
    match &est {
        Estimate::Table(t) => println!(
            "campaign {focal}: {} identified cells, {} not identified, {} users ({} train, {} estimate)",
            t.table.rows.len(),
            t.table.not_identified.len(),
            t.n_sample,
            t.n_train,
            t.n_estimate
        ),
        Estimate::Interaction(i) => println!(
            "campaign {focal} vs rival {} ({} shared auctions): beta1 {:.4} (se {:.4}), beta3 {:.4} (se {:.4})",
            i.rival, i.shared_auctions, i.fit.coef[1], i.fit.se[1], i.fit.coef[3], i.fit.se[3]
        ),
    }
    Ok(0)
}

fn grid(points: usize) -> Result<Vec<f64>> {
    if points < 2 {
        return Err(Error::invalid("grid needs at least 2 points"));
    }
    Ok((0..points).map(|i| i as f64 / (points - 1) as f64).collect())
}

/// Degenerate table of one partition, read from an estimate's ATE file.
fn degenerate_table(
    run: &LoadedRun,
    focal: CampaignId,
    table: Option<PathBuf>,
    base: &Path,
    partition: Option<usize>,
) -> Result<(usize, DegenerateTable<f64>)> {
    let path = table.unwrap_or_else(|| base.join(format!("ate_{focal}.csv")));
    let ate = io::read_ate_table(&path)?;
    if ate.focal != focal {
        return Err(Error::invalid(format!("{} holds campaign {}, not {focal}", path.display(), ate.focal)));
    }
    let parts = pipeline::find_partitions(&run.partitions, focal)?;
    let label = match partition {
        Some(l) if l >= 1 && l <= parts.len() => l,
        Some(l) => return Err(Error::invalid(format!("campaign {focal} has no partition {l}"))),
        None => parts
            .partitions
            .iter()
            .max_by_key(|p| (p.members.len(), std::cmp::Reverse(p.label)))
            .map(|p| p.label)
            .ok_or_else(|| Error::NotIdentified(format!("campaign {focal} has an empty audience")))?,
    };
    let present = parts.partition(label).competitors;
    Ok((label, DegenerateTable::from_ate_table(&ate, label, present)?))
}

fn calculus(a: CalculusArgs) -> Result<u8> {
    let run = pipeline::load_run(&a.input)?;
    let focal = CampaignId(a.focal);
    let (label, table) = degenerate_table(&run, focal, a.table.clone(), &a.input, a.partition)?;
    let out = a.out.clone().unwrap_or_else(|| a.input.clone());
    let g = grid(a.grid)?;
    let beliefs = run.config.beliefs_for(focal)?;
    let averaging = match a.averaging {
        AveragingArg::Unweighted => Averaging::Unweighted,
        AveragingArg::Beliefs => Averaging::Beliefs(beliefs.clone()),
    };
    let comp_ids = run.config.roster.competitor_ids(run.config.roster.require_position(focal)?);
    let stem = format!("{focal}_s{label}");
    let mut outputs = Vec::new();

    let prospective = prospective_ate(&table, &BeliefProfile::Independent(beliefs))?;
    let path = out.join(format!("prospective_{stem}.csv"));
    io::write_table(&path, &["partition", "value"], [vec![label.to_string(), prospective.to_string()]])?;
    outputs.push(path);

    for k in table.present_coords() {
        let id = comp_ids[k];
        let curve = competitor_curve(&table, k, &g, &averaging, a.normalize)?;
        let path = out.join(format!("curve_{stem}_k{id}.csv"));
        io::write_table(&path, &["x", "value"], curve.iter().map(|(x, v)| vec![x.to_string(), v.to_string()]))?;
        outputs.push(path);
        let surface = experimentation_surface(&table, k, a.sigma, &g, &g, &averaging)?;
        let path = out.join(format!("surface_{stem}_k{id}.csv"));
        io::write_table(
            &path,
            &["x", "y", "value"],
            surface.iter().map(|(x, y, v)| vec![x.to_string(), y.to_string(), v.to_string()]),
        )?;
        outputs.push(path);
    }
    for (mode, name) in [(Scenario::Independent, "independent"), (Scenario::Aligned, "aligned")] {
        let curve = scenario_curve(&table, &g, mode, a.sigma)?;
        let path = out.join(format!("scenario_{stem}_{name}.csv"));
        io::write_table(&path, &["x", "value"], curve.iter().map(|(x, v)| vec![x.to_string(), v.to_string()]))?;
        outputs.push(path);
    }

    let mut m = Manifest::new("calculus");
    m.seed = Some(run.seed);
    m.config_digest = Some(io::sha256_hex(run.config_text.as_bytes()));
    m.set("focal", focal.0);
    m.set("partition", label);
    m.set("sigma", a.sigma);
    m.set("prospective_ate", prospective);
    m.record_outputs(&outputs)?;
    m.write(&out.join(format!("calculus_{stem}.json")))?;
    println!("campaign {focal}, partition {label}: prospective ATE {prospective:.6}; {} files", outputs.len());
    Ok(0)
}

fn diagnose(a: DiagnoseArgs) -> Result<u8> {
    let run = pipeline::load_run(&a.input)?;
    let out = a.out.clone().unwrap_or_else(|| a.input.clone());
    let roster = &run.config.roster;
    let pop = &run.population;
    let mut outputs = Vec::new();
    let mut m = Manifest::new("diagnose");
    m.seed = Some(run.seed);
    m.config_digest = Some(io::sha256_hex(run.config_text.as_bytes()));
    m.record_input("exposure_log", &run.log_path)?;

    // randomization and balance, one row per campaign
    let covariates: Vec<Vec<f64>> = pop.users().iter().map(|&u| simulate_covariates(u, run.seed).to_vec()).collect();
    let mut rows = Vec::new();
    let mut balance_p = Vec::new();
    for (pos, c) in roster.campaigns().iter().enumerate() {
        let members: Vec<usize> = (0..pop.len()).filter(|&i| pop.targeting(i).get(pos)).collect();
        let arms: Vec<bool> = members.iter().map(|&i| pop.assignment(i).is_test(pos)).collect();
        let n_test = arms.iter().filter(|&&t| t).count();
        let share = if members.is_empty() { f64::NAN } else { n_test as f64 / members.len() as f64 };
        let prop = proportion_test(arms.iter().map(|&t| if t { Arm::Test } else { Arm::Control }), c.treatment_share)
            .map(|p| p.to_string())
            .unwrap_or_default();
        let x: Vec<Vec<f64>> = members.iter().map(|&i| covariates[i].clone()).collect();
        let bal = balance_test(&x, &arms).ok();
        balance_p.extend(bal);
        rows.push(vec![
            c.index.to_string(),
            members.len().to_string(),
            share.to_string(),
            prop,
            bal.map(|p| p.to_string()).unwrap_or_default(),
        ]);
    }
    let path = out.join("randomization.csv");
    io::write_table(&path, &["campaign", "users", "test_share", "proportion_p", "balance_p"], rows)?;
    outputs.push(path);
    let path = out.join("balance_qq.csv");
    io::write_table(
        &path,
        &["uniform_quantile", "empirical_quantile"],
        quantile_pairs(&balance_p).into_iter().map(|(u, q)| vec![u.to_string(), q.to_string()]),
    )?;
    outputs.push(path);
    match ks_uniformity(&balance_p) {
        Ok(ks) => {
            m.set("balance_ks_statistic", ks.statistic);
            m.set("balance_ks_p", ks.p_value);
        }
        Err(e) => m.set("balance_ks_skipped", e.to_string()),
    }

    // overlap and full support per partition
    let mut rows = Vec::new();
    for parts in &run.partitions {
        for c in check_assumptions(pop, parts, a.min_cell) {
            let join = |v: Vec<String>| v.join("|");
            rows.push(vec![
                c.focal.to_string(),
                c.label.to_string(),
                c.members.to_string(),
                c.is_clean().to_string(),
                join(c.overlap_violations.iter().map(|x| x.to_string()).collect()),
                c.support_a_violations.len().to_string(),
                c.support_b_violations.len().to_string(),
                c.too_many_cells.to_string(),
            ]);
        }
    }
    let path = out.join("assumptions.csv");
    io::write_table(
        &path,
        &["focal", "partition", "members", "clean", "overlap_violations", "support_a_cells", "support_b_cells", "too_many_cells"],
        rows,
    )?;
    outputs.push(path);

    // log invariants and the per-user exposure distribution
    let sessions = pipeline::sessions_from_records(pop, run.records.clone())?;
    let audit = audit_logs(roster, pop, &sessions, run.config.market.slots);
    m.set("audit_records", audit.records);
    m.set("audit_exposure_violations", audit.exposure_violations);
    m.set("audit_counterfactual_violations", audit.counterfactual_violations);
    m.set("audit_repeat_violations", audit.repeat_violations);
    let mut hist = vec![0usize; roster.len() + 1];
    for c in exposure_counts(roster, &sessions) {
        hist[c] += 1;
    }
    let path = out.join("overlap.csv");
    io::write_table(
        &path,
        &["campaigns_served", "users"],
        hist.iter().enumerate().map(|(k, u)| vec![k.to_string(), u.to_string()]),
    )?;
    outputs.push(path);

    if let Some(f) = a.focal {
        let focal = CampaignId(f);
        let (label, table) = degenerate_table(&run, focal, a.table.clone(), &a.input, None)?;
        let data = EstimationData::<f64>::assemble(pop, pipeline::find_partitions(&run.partitions, focal)?, &run.outcomes, None)?;
        let pooled = pooled_ols(&data).ok().map(|fit| fit.tau);
        let summary = heterogeneity_summary(&table, pooled);
        let comp_ids = roster.competitor_ids(roster.require_position(focal)?);
        let stem = format!("{focal}_s{label}");
        let path = out.join(format!("het_cdf_{stem}.csv"));
        io::write_table(&path, &["x", "value"], summary.cdf.iter().map(|(x, v)| vec![x.to_string(), v.to_string()]))?;
        outputs.push(path);
        let path = out.join(format!("het_split_{stem}.csv"));
        let split_rows = summary.split.iter().flat_map(|s| {
            let id = comp_ids[s.competitor];
            let side = |omega: u8, v: &Vec<(f64, f64)>| {
                v.iter().map(move |(x, p)| vec![id.to_string(), omega.to_string(), x.to_string(), p.to_string()]).collect::<Vec<_>>()
            };
            side(0, &s.absent).into_iter().chain(side(1, &s.present))
        });
        io::write_table(&path, &["competitor", "omega", "x", "value"], split_rows)?;
        outputs.push(path);
        let path = out.join(format!("het_box_{stem}.csv"));
        io::write_table(
            &path,
            &["count", "min", "q1", "median", "q3", "max", "n"],
            summary.by_count.iter().map(|(k, b)| {
                [k.to_string(), b.min.to_string(), b.q1.to_string(), b.median.to_string(), b.q3.to_string(), b.max.to_string(), b.n.to_string()]
                    .to_vec()
            }),
        )?;
        outputs.push(path);
        if let Some((p, frac)) = summary.pooled {
            m.set("pooled_ate", p);
            m.set("pooled_ate_percentile", frac);
        }
    }

    m.record_outputs(&outputs)?;
    m.write(&out.join("diagnose.json"))?;
    let violations = audit.exposure_violations + audit.counterfactual_violations + audit.repeat_violations;
    println!(
        "{} campaigns checked; {} auction records, {violations} log violations",
        roster.len(),
        audit.records
    );
    Ok(0)
}

fn replicate(a: ReplicateArgs) -> Result<u8> {
    let report = run_scenario(&a.scenario, a.seed)?;
    for c in &report.checks {
        println!("{} {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    if let Some(out) = &a.out {
        let mut outputs = Vec::new();
        for t in &report.tables {
            let path = out.join(format!("{}.csv", t.name));
            let header: Vec<&str> = t.header.iter().map(String::as_str).collect();
            io::write_table(&path, &header, t.rows.clone())?;
            outputs.push(path);
        }
        let path = out.join(format!("report_{}.csv", report.scenario));
        io::write_table(
            &path,
            &["check", "pass", "detail"],
            report.checks.iter().map(|c| vec![c.name.clone(), c.pass.to_string(), c.detail.clone()]),
        )?;
        outputs.push(path);
        let mut m = Manifest::new("replicate");
        m.seed = Some(a.seed);
        m.set("scenario", &report.scenario);
        m.set("passed", report.passed());
        m.set(
            "checks",
            report.checks.iter().map(|c| (c.name.clone(), c.pass)).collect::<BTreeMap<_, _>>(),
        );
        m.record_outputs(&outputs)?;
        m.write(&out.join(format!("replicate_{}.json", report.scenario)))?;
    }
    Ok(if report.passed() { 0 } else { 1 })
}
