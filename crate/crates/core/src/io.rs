//! Tidy CSV readers and writers for logs, outcomes and result tables, plus
//! run manifests.
//!
//! Every writer goes through [`write_atomic`], which writes a sibling temp
//! file and renames it into place. Paths ending in `.gz` are gzip-compressed
//! on write and transparently decompressed on read.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bits::Bits;
use crate::design::CampaignId;
use crate::error::{Error, Result};
use crate::estimators::{AteRow, AteTable, CellFlag, CellKey};
use crate::marketplace::AuctionRecord;
use crate::oracle::{OracleEstimate, OracleRow, OutcomeRecord};
use crate::randomize::Arm;

pub const EXPOSURE_HEADER: [&str; 6] = ["user_id", "auction_id", "slot", "queue", "served", "counterfactual"];
pub const OUTCOME_HEADER: [&str; 4] = ["user_id", "focal", "campaign_arm", "y"];
pub const ORACLE_HEADER: [&str; 6] = ["focal", "partition", "state", "tau", "mc_se", "R"];
pub const ATE_HEADER: [&str; 9] = ["focal", "partition", "d_bits", "alpha", "tau", "se_tau", "n_test", "n_control", "flag"];

fn is_gz(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "gz")
}

/// Writes `path` by filling a temp file next to it and renaming it over the
/// target, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let mut buf = BufWriter::new(file);
        if is_gz(path) {
            let mut gz = GzEncoder::new(&mut buf, Compression::default());
            fill(&mut gz)?;
            gz.finish().map_err(|e| Error::io(&tmp, e))?;
        } else {
            fill(&mut buf)?;
        }
        let file = buf.into_inner().map_err(|e| Error::io(&tmp, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn open(path: &Path) -> Result<Box<dyn Read>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let r = BufReader::new(file);
    Ok(if is_gz(path) { Box::new(MultiGzDecoder::new(r)) } else { Box::new(r) })
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Format { path: path.to_path_buf(), message: format!("{kind:?}") },
    }
}

fn format_err(path: &Path, line: u64, message: impl std::fmt::Display) -> Error {
    Error::Format { path: path.to_path_buf(), message: format!("line {line}: {message}") }
}

fn write_csv<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    write_atomic(path, |w| {
        let mut out = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        out.write_record(header).map_err(|e| csv_err(path, e))?;
        for r in rows {
            out.write_record(r).map_err(|e| csv_err(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    })
}

/// Reads a CSV with the expected header, handing each record and its line
/// number to `parse`.
fn read_csv<T, F>(path: &Path, header: &[&str], mut parse: F) -> Result<Vec<T>>
where
    F: FnMut(&csv::StringRecord, u64) -> Result<T>,
{
    let mut rdr = csv::ReaderBuilder::new().from_reader(open(path)?);
    let got = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(format_err(path, 1, format!("expected header {}, found {}", header.join(","), got.iter().collect::<Vec<_>>().join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        out.push(parse(&rec, line)?);
    }
    Ok(out)
}

fn field<T: std::str::FromStr>(path: &Path, rec: &csv::StringRecord, line: u64, i: usize, name: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).ok_or_else(|| format_err(path, line, format!("missing column {name}")))?;
    raw.trim().parse().map_err(|e| format_err(path, line, format!("bad {name} {raw:?}: {e}")))
}

fn join_queue(q: &[CampaignId]) -> String {
    q.iter().map(|c| c.0.to_string()).collect::<Vec<_>>().join("|")
}

pub fn write_exposure_log<'a>(path: &Path, records: impl IntoIterator<Item = &'a AuctionRecord>) -> Result<()> {
    write_csv(
        path,
        &EXPOSURE_HEADER,
        records.into_iter().map(|r| {
            [
                r.user_id.to_string(),
                r.auction_id.to_string(),
                r.slot.to_string(),
                join_queue(&r.queue),
                r.served.0.to_string(),
                r.counterfactual.0.to_string(),
            ]
        }),
    )
}

pub fn read_exposure_log(path: &Path) -> Result<Vec<AuctionRecord>> {
    read_csv(path, &EXPOSURE_HEADER, |rec, line| {
        let raw_queue = rec.get(3).unwrap_or("");
        let queue = if raw_queue.is_empty() {
            Vec::new()
        } else {
            raw_queue
                .split('|')
                .map(|s| s.parse().map(CampaignId).map_err(|e| format_err(path, line, format!("bad queue {raw_queue:?}: {e}"))))
                .collect::<Result<_>>()?
        };
        Ok(AuctionRecord {
            user_id: field(path, rec, line, 0, "user_id")?,
            auction_id: field(path, rec, line, 1, "auction_id")?,
            slot: field(path, rec, line, 2, "slot")?,
            queue,
            served: CampaignId(field(path, rec, line, 4, "served")?),
            counterfactual: CampaignId(field(path, rec, line, 5, "counterfactual")?),
        })
    })
}

pub fn write_outcomes(path: &Path, records: &[OutcomeRecord]) -> Result<()> {
    write_csv(
        path,
        &OUTCOME_HEADER,
        records.iter().map(|r| [r.user_id.to_string(), r.focal.0.to_string(), r.arm.as_str().to_string(), r.y.to_string()]),
    )
}

pub fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRecord>> {
    read_csv(path, &OUTCOME_HEADER, |rec, line| {
        let arm = match rec.get(2) {
            Some("test") => Arm::Test,
            Some("control") => Arm::Control,
            other => return Err(format_err(path, line, format!("bad campaign_arm {other:?}"))),
        };
        Ok(OutcomeRecord {
            user_id: field(path, rec, line, 0, "user_id")?,
            focal: CampaignId(field(path, rec, line, 1, "focal")?),
            arm,
            y: field(path, rec, line, 3, "y")?,
        })
    })
}

pub fn write_oracle(path: &Path, rows: &[OracleRow]) -> Result<()> {
    write_csv(
        path,
        &ORACLE_HEADER,
        rows.iter().map(|r| {
            [
                r.focal.0.to_string(),
                r.partition.to_string(),
                r.state.to_string(),
                r.estimate.tau.to_string(),
                r.estimate.mc_se.to_string(),
                r.estimate.replications.to_string(),
            ]
        }),
    )
}

pub fn read_oracle(path: &Path) -> Result<Vec<OracleRow>> {
    read_csv(path, &ORACLE_HEADER, |rec, line| {
        Ok(OracleRow {
            focal: CampaignId(field(path, rec, line, 0, "focal")?),
            partition: field(path, rec, line, 1, "partition")?,
            state: field::<Bits>(path, rec, line, 2, "state")?,
            estimate: OracleEstimate {
                tau: field(path, rec, line, 3, "tau")?,
                mc_se: field(path, rec, line, 4, "mc_se")?,
                replications: field(path, rec, line, 5, "R")?,
            },
        })
    })
}

/// Identified rows first, then one row per unidentified cell with empty
/// estimates and the `NOT_IDENTIFIED` flag; each block in cell order.
pub fn write_ate_table(path: &Path, table: &AteTable<f64>) -> Result<()> {
    let focal = table.focal.0.to_string();
    let ok = table.rows.iter().map(|r| {
        vec![
            focal.clone(),
            r.key.partition.to_string(),
            r.key.d.to_string(),
            r.alpha.to_string(),
            r.tau.to_string(),
            r.se_tau.to_string(),
            r.n_test.to_string(),
            r.n_control.to_string(),
            r.flag.as_str().to_string(),
        ]
    });
    let ni = table.not_identified.iter().map(|(k, nt, nc)| {
        vec![
            focal.clone(),
            k.partition.to_string(),
            k.d.to_string(),
            String::new(),
            String::new(),
            String::new(),
            nt.to_string(),
            nc.to_string(),
            CellFlag::NotIdentified.as_str().to_string(),
        ]
    });
    write_csv(path, &ATE_HEADER, ok.chain(ni))
}

/// Reads a table written by [`write_ate_table`]. `se_alpha` is not stored
/// and comes back as NaN.
pub fn read_ate_table(path: &Path) -> Result<AteTable<f64>> {
    let mut focal = None;
    let mut n_comp = None;
    let mut rows = Vec::new();
    let mut ni = Vec::new();
    read_csv(path, &ATE_HEADER, |rec, line| {
        let f = CampaignId(field(path, rec, line, 0, "focal")?);
        if *focal.get_or_insert(f) != f {
            return Err(format_err(path, line, "table mixes focal campaigns"));
        }
        let key = CellKey { partition: field(path, rec, line, 1, "partition")?, d: field(path, rec, line, 2, "d_bits")? };
        if *n_comp.get_or_insert(key.d.len()) != key.d.len() {
            return Err(format_err(path, line, "d_bits length changes between rows"));
        }
        let n_test = field(path, rec, line, 6, "n_test")?;
        let n_control = field(path, rec, line, 7, "n_control")?;
        let flag = match rec.get(8) {
            Some("OK") => CellFlag::Ok,
            Some("LOW_SUPPORT") => CellFlag::LowSupport,
            Some("NOT_IDENTIFIED") => CellFlag::NotIdentified,
            other => return Err(format_err(path, line, format!("bad flag {other:?}"))),
        };
        if flag == CellFlag::NotIdentified {
            ni.push((key, n_test, n_control));
        } else {
            rows.push(AteRow {
                key,
                alpha: field(path, rec, line, 3, "alpha")?,
                tau: field(path, rec, line, 4, "tau")?,
                se_alpha: f64::NAN,
                se_tau: field(path, rec, line, 5, "se_tau")?,
                n_test,
                n_control,
                flag,
            });
        }
        Ok(())
    })?;
    let focal = focal.ok_or_else(|| format_err(path, 1, "empty table"))?;
    rows.sort_by_key(|r| r.key);
    ni.sort_by_key(|c| c.0);
    Ok(AteTable { focal, n_competitors: n_comp.unwrap_or(0), rows, not_identified: ni })
}

/// Generic tidy table with a caller-chosen header.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    write_csv(path, header, rows)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Run manifest: what ran, on which inputs, and digests of what it wrote.
/// Contains nothing environment-dependent (no timestamps or thread counts)
/// so that identical runs produce identical manifests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub values: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest { command: command.into(), version: env!("CARGO_PKG_VERSION").into(), ..Default::default() }
    }

    pub fn record_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.into(), file_digest(path)?);
        Ok(())
    }

    /// Digests every listed output file, keyed by file name.
    pub fn record_outputs(&mut self, paths: &[PathBuf]) -> Result<()> {
        for p in paths {
            let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            self.outputs.insert(name, file_digest(p)?);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        self.values.insert(key.into(), serde_json::to_value(value).unwrap_or(serde_json::Value::Null));
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))?;
        write_atomic(path, |w| {
            w.write_all(text.as_bytes()).and_then(|_| w.write_all(b"\n")).map_err(|e| Error::io(path, e))
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut text = String::new();
        open(path)?.read_to_string(&mut text).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Format { path: path.into(), message: e.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<AuctionRecord> {
        vec![
            AuctionRecord {
                auction_id: 0,
                user_id: 4,
                slot: 1,
                queue: vec![CampaignId(2), CampaignId(1)],
                served: CampaignId(1),
                counterfactual: CampaignId(2),
            },
            AuctionRecord { auction_id: 1, user_id: 4, slot: 2, queue: vec![], served: CampaignId::NO_AD, counterfactual: CampaignId::NO_AD },
        ]
    }

    #[test]
    fn exposure_round_trip_plain_and_gz() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["log.csv", "log.csv.gz"] {
            let p = dir.path().join(name);
            write_exposure_log(&p, &records()).unwrap();
            assert_eq!(read_exposure_log(&p).unwrap(), records());
        }
        let text = fs::read_to_string(dir.path().join("log.csv")).unwrap();
        assert_eq!(text, "user_id,auction_id,slot,queue,served,counterfactual\n4,0,1,2|1,1,2\n4,1,2,,0,0\n");
    }

    #[test]
    fn gzip_output_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv.gz"), dir.path().join("b.csv.gz"));
        write_exposure_log(&a, &records()).unwrap();
        write_exposure_log(&b, &records()).unwrap();
        assert_eq!(file_digest(&a).unwrap(), file_digest(&b).unwrap());
    }

    #[test]
    fn outcomes_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        let recs = vec![
            OutcomeRecord { user_id: 1, focal: CampaignId(3), arm: Arm::Test, y: 0.1 + 0.2 },
            OutcomeRecord { user_id: 2, focal: CampaignId(3), arm: Arm::Control, y: -1e-300 },
        ];
        write_outcomes(&p, &recs).unwrap();
        assert_eq!(read_outcomes(&p).unwrap(), recs);
    }

    #[test]
    fn ate_round_trip_keeps_unidentified() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ate.csv");
        let key = |s, d: &str| CellKey { partition: s, d: d.parse().unwrap() };
        let table = AteTable {
            focal: CampaignId(1),
            n_competitors: 2,
            rows: vec![AteRow {
                key: key(1, "01"),
                alpha: 1.5,
                tau: 0.25,
                se_alpha: f64::NAN,
                se_tau: 0.1,
                n_test: 7,
                n_control: 3,
                flag: CellFlag::Ok,
            }],
            not_identified: vec![(key(1, "11"), 2, 0)],
        };
        write_ate_table(&p, &table).unwrap();
        let back = read_ate_table(&p).unwrap();
        assert_eq!(back.not_identified, table.not_identified);
        assert_eq!(back.rows[0].tau, 0.25);
        assert_eq!(back.rows[0].key, key(1, "01"));
    }

    #[test]
    fn wrong_header_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_outcomes(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_value_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.csv");
        fs::write(&p, "user_id,focal,campaign_arm,y\n1,1,test,0.5\n2,1,test,abc\n").unwrap();
        match read_outcomes(&p) {
            Err(Error::Format { message, .. }) => assert!(message.starts_with("line 3"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("manifest.json");
        let mut m = Manifest::new("simulate");
        m.seed = Some(9);
        m.set("users", 10);
        m.write(&p).unwrap();
        assert_eq!(Manifest::read(&p).unwrap(), m);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
