//! File names and readers/writers for the intermediate pipeline files.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use memos_core::data::{load_cases, CaseTable, CsvSchema};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, Method};
use crate::error::{io, CliError, Result};

pub const CASES: &str = "cases.csv";
pub const TRUTH: &str = "truth.json";
pub const MESH: &str = "mesh.json";
pub const MEMOS_DRAWS_DIR: &str = "draws_memos";
pub const SCORES: &str = "scores.csv";
pub const HISTOGRAMS: &str = "histograms.csv";
pub const SUMMARY: &str = "summary.json";

pub fn fit_file(method: Method) -> String {
    format!("fit_{method}.json")
}

pub fn predictive_file(method: Method) -> String {
    format!("predictive_{method}.csv")
}

pub fn ecc_file(method: Method) -> String {
    format!("ecc_{method}.csv")
}

pub fn independence_file(method: Method) -> String {
    format!("independence_{method}.csv")
}

pub fn draws_file(date: NaiveDate) -> String {
    format!("{MEMOS_DRAWS_DIR}/{date}.csv")
}

/// Fails with the command that produces `path` when it does not exist.
pub fn require(path: &Path, producer: &'static str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingInput {
            path: path.to_path_buf(),
            producer,
        })
    }
}

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let file = File::create(&tmp).map_err(|e| io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    fill(&mut w)?;
    w.flush().map_err(|e| io(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n").map_err(|e| io(path, e))
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, producer: &'static str) -> Result<T> {
    require(path, producer)?;
    let file = File::open(path).map_err(|e| io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| CliError::BadInput {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| io(path, e))?;
    let mut h = Sha256::new();
    std::io::copy(&mut file, &mut h).map_err(|e| io(path, e))?;
    Ok(hex(&h.finalize()))
}

pub fn load_table(path: &Path) -> Result<CaseTable> {
    require(path, "simulate")?;
    Ok(load_cases(path, &CsvSchema::default())?)
}

fn bad(path: &Path, line: usize, message: impl std::fmt::Display) -> CliError {
    CliError::BadInput {
        path: path.to_path_buf(),
        message: format!("line {line}: {message}"),
    }
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, rec: &csv::StringRecord, k: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(k).ok_or_else(|| bad(path, line, format!("missing column {}", k + 1)))?;
    raw.parse().map_err(|e| bad(path, line, format!("{raw:?}: {e}")))
}

fn check_header(path: &Path, reader: &mut csv::Reader<File>, expected: &[&str]) -> Result<()> {
    let header = reader.headers()?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(bad(path, 1, format!("expected header {}", expected.join(","))));
    }
    Ok(())
}

fn open_csv(path: &Path, producer: &'static str, header: &[&str]) -> Result<csv::Reader<File>> {
    require(path, producer)?;
    let file = File::open(path).map_err(|e| io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    check_header(path, &mut r, header)?;
    Ok(r)
}

/// Predictive mixture components keyed by `(date, site)`; EMOS has one
/// component, MEMOS one per posterior draw.
pub type Predictive = BTreeMap<(NaiveDate, String), Vec<(f64, f64)>>;

const PREDICTIVE_HEADER: [&str; 5] = ["date", "site", "draw", "mu", "sigma"];

pub fn write_predictive(path: &Path, pred: &Predictive) -> Result<()> {
    write_atomic(path, |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(PREDICTIVE_HEADER)?;
        for ((date, site), comps) in pred {
            let date = date.to_string();
            for (i, (mu, sigma)) in comps.iter().enumerate() {
                c.write_record([date.as_str(), site, &i.to_string(), &mu.to_string(), &sigma.to_string()])?;
            }
        }
        c.flush().map_err(|e| io(path, e))
    })
}

pub fn read_predictive(path: &Path) -> Result<Predictive> {
    let mut r = open_csv(path, "predict", &PREDICTIVE_HEADER)?;
    let mut out = Predictive::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let date: NaiveDate = field(path, line, &rec, 0)?;
        let mu: f64 = field(path, line, &rec, 3)?;
        let sigma: f64 = field(path, line, &rec, 4)?;
        out.entry((date, rec[1].to_string())).or_default().push((mu, sigma));
    }
    Ok(out)
}

/// Posterior coefficient draws `(a, b, σ)` per site, as written by the
/// sampler.
pub type SiteDraws = BTreeMap<String, Vec<(f64, f64, f64)>>;

pub fn read_draws(path: &Path) -> Result<SiteDraws> {
    let mut r = open_csv(path, "fit --method memos", &["draw", "site", "a", "b", "sigma"])?;
    let mut out = SiteDraws::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let a: f64 = field(path, line, &rec, 2)?;
        let b: f64 = field(path, line, &rec, 3)?;
        let sigma: f64 = field(path, line, &rec, 4)?;
        out.entry(rec[1].to_string()).or_default().push((a, b, sigma));
    }
    Ok(out)
}

/// Joint samples keyed by date, then site, as `values[member]`.
pub type Ensembles = BTreeMap<NaiveDate, BTreeMap<String, Vec<f64>>>;

pub fn read_ensembles(path: &Path) -> Result<Ensembles> {
    let mut r = open_csv(path, "ecc", &["date", "site", "member", "value"])?;
    let mut out = Ensembles::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let date: NaiveDate = field(path, line, &rec, 0)?;
        let member: usize = field(path, line, &rec, 2)?;
        let value: f64 = field(path, line, &rec, 3)?;
        let slot = out.entry(date).or_default().entry(rec[1].to_string()).or_default();
        if member != slot.len() + 1 {
            return Err(bad(path, line, format!("member {member} out of order")));
        }
        slot.push(value);
    }
    Ok(out)
}

/// Path relative to `base` when it lies inside it.
pub fn display_path(base: &Path, path: &Path) -> PathBuf {
    path.strip_prefix(base).map(Path::to_path_buf).unwrap_or_else(|_| path.to_path_buf())
}
