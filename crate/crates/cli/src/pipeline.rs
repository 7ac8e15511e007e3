//! The six batch commands. Each reads its inputs from the output directory
//! (or the configured data file), writes its artifacts atomically and
//! finishes with a manifest.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use chrono::{Datelike, NaiveDate};
use memos_core::data::{self, rolling_window, CaseTable, ForecastCase, Location, TrainingSet, WindowMode};
use memos_core::ecc::{self, MultivariateEnsemble};
use memos_core::emos::{self, FittedEmos, Gaussian};
use memos_core::mesh::{build_mesh, Mesh, Point};
use memos_core::stats::{centered_quantiles, keyed_rng};
use memos_core::verify::{self, DmResult, ScoreSeries};
use memos_core::{memos, Error};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::*;
use crate::config::{Method, RunConfig};
use crate::error::{CliError, Result};
use crate::manifest::Manifest;

// stream tags for keyed generators
const TAG_MEMOS_FIT: u64 = 1;
const TAG_ECC_RANK: u64 = 2;
const TAG_INDEPENDENCE: u64 = 3;
const TAG_RANK: u64 = 4;
const TAG_MV_RANK: u64 = 5;

/// A configured run rooted at an output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Report {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    /// Human-readable result lines for stdout.
    pub lines: Vec<String>,
}

fn day_key(d: NaiveDate) -> u64 {
    d.num_days_from_ce() as u64
}

fn method_key(m: Method) -> u64 {
    Method::ALL.iter().position(|&x| x == m).unwrap() as u64
}

fn station_key(table: &CaseTable, site: &str) -> u64 {
    table.station_index(site).map_or(u64::MAX, |i| i as u64)
}

impl Run {
    pub fn new(config: RunConfig, out: impl Into<PathBuf>) -> Self {
        Run {
            config,
            out: out.into(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn data_path(&self) -> PathBuf {
        self.config.data.clone().unwrap_or_else(|| self.path(CASES))
    }

    fn finish(&self, manifest: Manifest, mut lines: Vec<String>) -> Result<Report> {
        let manifest_path = manifest.write(&self.out)?;
        lines.push(format!("manifest: {}", manifest_path.display()));
        Ok(Report {
            manifest,
            manifest_path,
            lines,
        })
    }

    /// Dates scored and fitted: the configured range, or every date after
    /// the first `window_length` dates of the table.
    pub fn eval_dates(&self, table: &CaseTable) -> Result<Vec<NaiveDate>> {
        let all = table.dates();
        let c = &self.config;
        let dates: Vec<NaiveDate> = if c.eval_start.is_some() || c.eval_end.is_some() {
            all.into_iter()
                .filter(|d| c.eval_start.is_none_or(|s| *d >= s) && c.eval_end.is_none_or(|e| *d <= e))
                .collect()
        } else {
            all.into_iter().skip(c.window.length).collect()
        };
        if dates.is_empty() {
            return Err(CliError::Usage(
                "no evaluation dates: the data covers no more than window_length days or eval_start/eval_end select nothing".into(),
            ));
        }
        Ok(dates)
    }
}

fn case_index(table: &CaseTable) -> HashMap<(NaiveDate, usize), &ForecastCase> {
    table.cases.iter().map(|c| ((c.date, c.station), c)).collect()
}

fn lookup<'a>(
    table: &CaseTable,
    index: &HashMap<(NaiveDate, usize), &'a ForecastCase>,
    date: NaiveDate,
    site: &str,
) -> Option<&'a ForecastCase> {
    table.station_index(site).and_then(|s| index.get(&(date, s)).copied())
}

/// Generates a synthetic dataset into `<out>/cases.csv` with its truth record.
pub fn simulate(run: &Run) -> Result<Report> {
    let (table, truth) = data::simulate(&run.config.sim, run.config.seed)?;
    let cases = run.path(CASES);
    write_atomic(&cases, |w| Ok(table.write_csv(w)?))?;
    let truth_path = run.path(TRUTH);
    write_json(&truth_path, &truth)?;

    let mut manifest = Manifest::new("simulate", None, &run.config);
    manifest.output(&run.out, &cases)?;
    manifest.output(&run.out, &truth_path)?;
    let line = format!(
        "simulated {} stations over {} days ({} cases)",
        table.stations.len(),
        table.dates().len(),
        table.cases.len()
    );
    manifest.note(line.clone());
    run.finish(manifest, vec![line])
}

/// Triangulates all stations of the dataset into `<out>/mesh.json`.
pub fn mesh(run: &Run) -> Result<Report> {
    let data = run.data_path();
    let table = load_table(&data)?;
    let points: Vec<Point> = table.stations.iter().map(Location::point).collect();
    let mesh = build_mesh(&points, &run.config.mesh)?;
    let path = run.path(MESH);
    write_atomic(&path, |w| Ok(mesh.write_json(w)?))?;

    let mut manifest = Manifest::new("mesh", None, &run.config);
    manifest.input(&run.out, &data)?;
    manifest.output(&run.out, &path)?;
    let line = format!(
        "mesh: {} vertices, {} triangles, minimum angle {:.1}°",
        mesh.n_vertices(),
        mesh.triangles.len(),
        mesh.min_angle()
    );
    manifest.note(line.clone());
    run.finish(manifest, vec![line])
}

/// One MEMOS evaluation day as recorded in `fit_memos.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemosDay {
    pub date: NaiveDate,
    pub seed: u64,
    pub training_cases: usize,
    pub sites: usize,
    pub mesh_vertices: usize,
    pub acceptance_rate: f64,
    pub proposal_scale: f64,
    pub draws: String,
}

/// Fits the method for every evaluation day from the rolling window before it.
pub fn fit(run: &Run, method: Method) -> Result<Report> {
    let data = run.data_path();
    let table = load_table(&data)?;
    let dates = run.eval_dates(&table)?;
    let mut manifest = Manifest::new("fit", Some(method.name()), &run.config);
    manifest.input(&run.out, &data)?;
    let lines = match method {
        Method::Raw => return Err(CliError::Usage("the raw ensemble has no parameters to fit".into())),
        Method::Global | Method::Local => fit_emos(run, method, &table, &dates, &mut manifest)?,
        Method::Memos => fit_memos(run, &table, &dates, &mut manifest)?,
    };
    run.finish(manifest, lines)
}

/// Keeps a fit, or records a skipped window when there is too little data.
fn keep_or_skip<T>(result: memos_core::Result<T>, what: &str, manifest: &mut Manifest) -> Result<Option<T>> {
    match result {
        Ok(v) => Ok(Some(v)),
        Err(e @ Error::InsufficientTrainingData { .. }) => {
            let note = format!("skipped {what}: {e}");
            eprintln!("warning: {note}");
            manifest.note(note);
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

fn fit_emos(
    run: &Run,
    method: Method,
    table: &CaseTable,
    dates: &[NaiveDate],
    manifest: &mut Manifest,
) -> Result<Vec<String>> {
    let c = &run.config;
    let mut fits: Vec<FittedEmos> = Vec::new();
    for &d in dates {
        if method == Method::Global {
            let r = emos::fit_global(table, d, &c.window, &c.emos);
            fits.extend(keep_or_skip(r, &d.to_string(), manifest)?);
        } else {
            for case in table.cases_on(d) {
                let id = &table.stations[case.station].id;
                let r = emos::fit_local(table, d, id, &c.window, &c.emos);
                fits.extend(keep_or_skip(r, &format!("{d} {id}"), manifest)?);
            }
        }
    }
    let path = run.path(&fit_file(method));
    write_json(&path, &fits)?;
    manifest.output(&run.out, &path)?;
    Ok(vec![format!("{method}: {} fits over {} days", fits.len(), dates.len())])
}

struct MemosJob {
    date: NaiveDate,
    training: TrainingSet,
    sites: Vec<Location>,
    mesh: Arc<Mesh>,
    seed: u64,
}

fn fit_memos(run: &Run, table: &CaseTable, dates: &[NaiveDate], manifest: &mut Manifest) -> Result<Vec<String>> {
    let c = &run.config;
    // meshes are shared between days with the same station set
    let mut meshes: HashMap<Vec<usize>, Arc<Mesh>> = HashMap::new();
    let mut jobs = Vec::new();
    for &d in dates {
        let Some(training) = keep_or_skip(
            rolling_window(table, d, &c.window, &WindowMode::Global),
            &d.to_string(),
            manifest,
        )?
        else {
            continue;
        };
        let site_idx: Vec<usize> = table.cases_on(d).map(|c| c.station).collect();
        let mut key = training.stations();
        key.extend(&site_idx);
        let mesh = match meshes.get(&key) {
            Some(m) => Arc::clone(m),
            None => {
                let points: Vec<Point> = key.iter().map(|&s| table.stations[s].point()).collect();
                let m = Arc::new(build_mesh(&points, &c.mesh)?);
                meshes.insert(key, Arc::clone(&m));
                m
            }
        };
        jobs.push(MemosJob {
            date: d,
            training,
            sites: site_idx.iter().map(|&s| table.stations[s].clone()).collect(),
            mesh,
            seed: keyed_rng(c.seed, &[TAG_MEMOS_FIT, day_key(d)]).random(),
        });
    }

    let results: Vec<Result<MemosDay>> = jobs
        .par_iter()
        .map(|job| {
            let draws = memos::fit_on_mesh(&job.mesh, &table.stations, &job.training, &job.sites, &c.memos, job.seed)?;
            let name = draws_file(job.date);
            write_atomic(&run.path(&name), |w| Ok(draws.write_csv(w)?))?;
            Ok(MemosDay {
                date: job.date,
                seed: job.seed,
                training_cases: job.training.len(),
                sites: job.sites.len(),
                mesh_vertices: job.mesh.n_vertices(),
                acceptance_rate: draws.acceptance_rate,
                proposal_scale: draws.proposal_scale,
                draws: name,
            })
        })
        .collect();
    let days = results.into_iter().collect::<Result<Vec<_>>>()?;

    for day in &days {
        manifest.output(&run.out, &run.path(&day.draws))?;
    }
    let path = run.path(&fit_file(Method::Memos));
    write_json(&path, &days)?;
    manifest.output(&run.out, &path)?;
    let mean_rate = days.iter().map(|d| d.acceptance_rate).sum::<f64>() / days.len().max(1) as f64;
    Ok(vec![format!(
        "memos: {} days, {} distinct meshes, mean acceptance rate {mean_rate:.3}",
        days.len(),
        meshes.len()
    )])
}

/// Writes the predictive distribution for every fitted (date, site).
pub fn predict(run: &Run, method: Method) -> Result<Report> {
    let data = run.data_path();
    let table = load_table(&data)?;
    let index = case_index(&table);
    let mut manifest = Manifest::new("predict", Some(method.name()), &run.config);
    manifest.input(&run.out, &data)?;
    let fit_path = run.path(&fit_file(method));
    let mut pred = Predictive::new();
    match method {
        Method::Raw => {
            return Err(CliError::Usage(
                "the raw ensemble is its own predictive sample; run `verify` directly".into(),
            ))
        }
        Method::Global | Method::Local => {
            let producer = if method == Method::Global {
                "fit --method global"
            } else {
                "fit --method local"
            };
            let fits: Vec<FittedEmos> = read_json(&fit_path, producer)?;
            manifest.input(&run.out, &fit_path)?;
            for f in &fits {
                let cases: Vec<&ForecastCase> = match &f.mode {
                    WindowMode::Global => table.cases_on(f.valid_date).collect(),
                    WindowMode::Local(id) => lookup(&table, &index, f.valid_date, id).into_iter().collect(),
                };
                for case in cases {
                    let g = emos::predict(&f.params(), case.fbar());
                    let site = table.stations[case.station].id.clone();
                    pred.insert((f.valid_date, site), vec![(g.mu, g.sigma)]);
                }
            }
        }
        Method::Memos => {
            let days: Vec<MemosDay> = read_json(&fit_path, "fit --method memos")?;
            manifest.input(&run.out, &fit_path)?;
            for day in &days {
                let path = run.path(&day.draws);
                let draws = read_draws(&path)?;
                manifest.input(&run.out, &path)?;
                for (site, coefs) in draws {
                    let Some(case) = lookup(&table, &index, day.date, &site) else {
                        continue;
                    };
                    let f = case.fbar();
                    let comps = coefs.iter().map(|&(a, b, s)| (a + b * f, s)).collect();
                    pred.insert((day.date, site), comps);
                }
            }
        }
    }
    let path = run.path(&predictive_file(method));
    write_predictive(&path, &pred)?;
    manifest.output(&run.out, &path)?;
    run.finish(manifest, vec![format!("{method}: {} predictive distributions", pred.len())])
}

/// Ascending quantile sample of a predictive mixture, `m` values per component.
fn mixture_sample(comps: &[(f64, f64)], m: usize) -> Vec<f64> {
    let z = centered_quantiles(m);
    comps
        .iter()
        .flat_map(|&(mu, s)| z.iter().map(move |zj| mu + s * zj))
        .collect()
}

/// Reorders the predictive samples with the raw ensemble ranks (ECC) and
/// builds the independence baseline.
pub fn ecc(run: &Run, method: Method) -> Result<Report> {
    if method == Method::Raw {
        return Err(CliError::Usage("the raw ensemble already carries its dependence structure".into()));
    }
    let data = run.data_path();
    let table = load_table(&data)?;
    let c = &run.config;
    if table.m != c.m {
        return Err(CliError::InvalidValue {
            key: "m".into(),
            message: format!("ECC needs m equal to the raw ensemble size {}, got {}", table.m, c.m),
        });
    }
    let index = case_index(&table);
    let pred_path = run.path(&predictive_file(method));
    let pred = read_predictive(&pred_path)?;

    let mut by_date: BTreeMap<NaiveDate, Vec<(&String, &Vec<(f64, f64)>)>> = BTreeMap::new();
    for ((d, site), comps) in &pred {
        by_date.entry(*d).or_default().push((site, comps));
    }
    let mk = method_key(method);
    let built: Vec<Result<(MultivariateEnsemble, MultivariateEnsemble)>> = by_date
        .par_iter()
        .map(|(&d, entries)| {
            let mut sites = Vec::new();
            let mut coupled = Vec::new();
            let mut independent = Vec::new();
            for &(site, comps) in entries {
                let case = lookup(&table, &index, d, site).ok_or_else(|| CliError::BadInput {
                    path: pred_path.clone(),
                    message: format!("no forecast case for {site} on {d}"),
                })?;
                let sk = station_key(&table, site);
                let sample = mixture_sample(comps, c.m);
                let perm = ecc::rank_permutation(&case.members, &mut keyed_rng(c.seed, &[TAG_ECC_RANK, mk, day_key(d), sk]))?;
                coupled.push(ecc::ecc_memos(&perm, &sample)?);
                let mut shuffled = [sample];
                ecc::independence_shuffle(&mut shuffled, &mut keyed_rng(c.seed, &[TAG_INDEPENDENCE, mk, day_key(d), sk]));
                let [sample] = shuffled;
                independent.push(sample);
                sites.push(site.clone());
            }
            let ens = |values| MultivariateEnsemble {
                date: d,
                sites: sites.clone(),
                values,
            };
            Ok((ens(coupled), ens(independent)))
        })
        .collect();
    let (coupled, independent): (Vec<_>, Vec<_>) = built.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();

    let mut manifest = Manifest::new("ecc", Some(method.name()), &run.config);
    manifest.input(&run.out, &data)?;
    manifest.input(&run.out, &pred_path)?;
    for (name, ens) in [(ecc_file(method), &coupled), (independence_file(method), &independent)] {
        let path = run.path(&name);
        write_atomic(&path, |w| Ok(ecc::write_ensembles_csv(w, ens)?))?;
        manifest.output(&run.out, &path)?;
    }
    let size = coupled.first().map_or(0, MultivariateEnsemble::size);
    run.finish(
        manifest,
        vec![format!("{method}: {} days of {size}-member ECC and independence ensembles", coupled.len())],
    )
}

/// Two-method comparison requested from `verify`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub score: String,
    pub daily_mean: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanScore {
    pub method: String,
    pub score: String,
    pub mean: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uniformity {
    pub histogram: String,
    pub count: usize,
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifySummary {
    pub means: Vec<MeanScore>,
    pub uniformity: Vec<Uniformity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmReport {
    pub a: String,
    pub b: String,
    pub score: String,
    pub daily_mean: bool,
    #[serde(flatten)]
    pub result: DmResult,
}

/// Histogram frequencies plus the raw counts used for the uniformity test.
struct Histogram {
    name: String,
    counts: Vec<usize>,
}

impl Histogram {
    fn from_ranks(name: String, ranks: &[usize], n_ranks: usize, bins: usize) -> Self {
        let mut counts = vec![0; bins];
        for &r in ranks {
            counts[verify::rank_bin(r, n_ranks, bins)] += 1;
        }
        Histogram { name, counts }
    }

    fn from_unit(name: String, values: &[f64], bins: usize) -> Self {
        Histogram {
            name,
            counts: verify::unit_counts(values, bins),
        }
    }
}

struct UnivariateRow {
    date: NaiveDate,
    site: String,
    crps: f64,
    ae: f64,
    pit: f64,
}

struct MultivariateRow {
    date: NaiveDate,
    es: f64,
    rank: usize,
    size: usize,
}

/// Energy score and multivariate rank of one joint sample against the
/// observed vector, over the sites observed that day.
fn score_joint(
    run: &Run,
    table: &CaseTable,
    index: &HashMap<(NaiveDate, usize), &ForecastCase>,
    date: NaiveDate,
    by_site: &BTreeMap<String, Vec<f64>>,
    variant: u64,
) -> Result<Option<MultivariateRow>> {
    let mut cols: Vec<(usize, &Vec<f64>, f64)> = Vec::new();
    for (site, values) in by_site {
        if let Some(y) = lookup(table, index, date, site).and_then(|c| c.observation) {
            cols.push((station_key(table, site) as usize, values, y));
        }
    }
    if cols.is_empty() {
        return Ok(None);
    }
    cols.sort_by_key(|c| c.0);
    let size = cols[0].1.len();
    let members: Vec<Vec<f64>> = (0..size).map(|k| cols.iter().map(|c| c.1[k]).collect()).collect();
    let y: Vec<f64> = cols.iter().map(|c| c.2).collect();
    let es = verify::energy_score(&members, &y)?;
    let mut rng = keyed_rng(run.config.seed, &[TAG_MV_RANK, variant, day_key(date)]);
    let rank = verify::multivariate_rank(&members, &y, &mut rng)?;
    Ok(Some(MultivariateRow { date, es, rank, size }))
}

/// Scores every available method, writes score and histogram tables and,
/// when asked, a Diebold-Mariano comparison.
pub fn verify(run: &Run, compare: Option<&Comparison>) -> Result<Report> {
    let c = &run.config;
    let data = run.data_path();
    let table = load_table(&data)?;
    let index = case_index(&table);
    let dates = run.eval_dates(&table)?;
    let bins = c.histogram_bins;
    let mut manifest = Manifest::new("verify", None, &run.config);
    manifest.input(&run.out, &data)?;

    let mut scores = ScoreSeries::default();
    let mut histograms: Vec<Histogram> = Vec::new();
    let mut lines = Vec::new();

    // raw ensemble, univariate
    let raw_cases: Vec<&ForecastCase> = dates
        .iter()
        .flat_map(|&d| table.cases_on(d))
        .filter(|c| c.observation.is_some())
        .collect();
    let raw_key = method_key(Method::Raw);
    let mut ranks = Vec::with_capacity(raw_cases.len());
    for case in &raw_cases {
        let y = case.observation.unwrap_or_default();
        let site = &table.stations[case.station].id;
        scores.push(case.date, site, "raw", "crps", verify::crps_empirical(&case.members, y)?)?;
        scores.push(case.date, site, "raw", "ae", verify::abs_error_sample(&case.members, y)?)?;
        let mut rng = keyed_rng(c.seed, &[TAG_RANK, raw_key, day_key(case.date), case.station as u64]);
        ranks.push(verify::verification_rank(&case.members, y, &mut rng));
    }
    if !ranks.is_empty() {
        histograms.push(Histogram::from_ranks("raw".into(), &ranks, table.m + 1, bins));
    }

    // postprocessed, univariate
    let eval: std::collections::BTreeSet<NaiveDate> = dates.iter().copied().collect();
    for method in [Method::Global, Method::Local, Method::Memos] {
        let path = run.path(&predictive_file(method));
        if !path.is_file() {
            continue;
        }
        let pred = read_predictive(&path)?;
        manifest.input(&run.out, &path)?;
        let mk = method_key(method);
        let entries: Vec<(&(NaiveDate, String), &Vec<(f64, f64)>)> =
            pred.iter().filter(|((d, _), _)| eval.contains(d)).collect();
        let rows: Vec<Result<Option<UnivariateRow>>> = entries
            .par_iter()
            .map(|&((d, site), comps)| {
                let Some(y) = lookup(&table, &index, *d, site).and_then(|c| c.observation) else {
                    return Ok(None);
                };
                let (crps, ae, pit) = if method == Method::Memos {
                    let mut sample = mixture_sample(comps, c.m);
                    sample.sort_by(f64::total_cmp);
                    let mut rng = keyed_rng(c.seed, &[TAG_RANK, mk, day_key(*d), station_key(&table, site)]);
                    (
                        verify::crps_sorted(&sample, y),
                        verify::abs_error(sample[(sample.len() - 1) / 2], y),
                        verify::normalized_rank(&sample, y, &mut rng)?,
                    )
                } else {
                    let (mu, sigma) = comps[0];
                    let g = Gaussian { mu, sigma };
                    (g.crps(y)?, verify::abs_error(g.median(), y), verify::pit_gaussian(mu, sigma, y))
                };
                Ok(Some(UnivariateRow {
                    date: *d,
                    site: site.clone(),
                    crps,
                    ae,
                    pit,
                }))
            })
            .collect();
        let mut pits = Vec::new();
        for row in rows {
            let Some(r) = row? else { continue };
            scores.push(r.date, &r.site, method.name(), "crps", r.crps)?;
            scores.push(r.date, &r.site, method.name(), "ae", r.ae)?;
            pits.push(r.pit);
        }
        if !pits.is_empty() {
            histograms.push(Histogram::from_unit(method.name().into(), &pits, bins));
        }
    }

    // multivariate: the raw ensemble, then ECC and independence samples
    let mut joint: Vec<(String, u64, Ensembles)> = Vec::new();
    let mut raw_joint = Ensembles::new();
    for case in table.cases.iter().filter(|c| eval.contains(&c.date)) {
        raw_joint
            .entry(case.date)
            .or_default()
            .insert(table.stations[case.station].id.clone(), case.members.clone());
    }
    joint.push(("raw".into(), 0, raw_joint));
    for method in [Method::Global, Method::Local, Method::Memos] {
        for (kind, name) in [("ecc", ecc_file(method)), ("independence", independence_file(method))] {
            let path = run.path(&name);
            if !path.is_file() {
                continue;
            }
            let mut ens = read_ensembles(&path)?;
            manifest.input(&run.out, &path)?;
            ens.retain(|d, _| eval.contains(d));
            let variant = 1 + 2 * method_key(method) + u64::from(kind == "independence");
            joint.push((format!("{method}_{kind}"), variant, ens));
        }
    }
    for (name, variant, ens) in &joint {
        let rows: Vec<Result<Option<MultivariateRow>>> = ens
            .par_iter()
            .map(|(&d, by_site)| score_joint(run, &table, &index, d, by_site, *variant))
            .collect();
        let mut mv_ranks = Vec::new();
        let mut size = 0;
        for row in rows {
            let Some(r) = row? else { continue };
            scores.push(r.date, "all", name, "es", r.es)?;
            mv_ranks.push(r.rank);
            size = r.size;
        }
        if !mv_ranks.is_empty() {
            histograms.push(Histogram::from_ranks(format!("{name}_mvrank"), &mv_ranks, size + 1, bins));
        }
    }

    let scores_path = run.path(SCORES);
    write_atomic(&scores_path, |w| Ok(scores.write_csv(w)?))?;
    manifest.output(&run.out, &scores_path)?;

    let freqs: Vec<(String, Vec<f64>)> = histograms
        .iter()
        .map(|h| {
            let total: usize = h.counts.iter().sum();
            (h.name.clone(), h.counts.iter().map(|&k| k as f64 / total as f64).collect())
        })
        .collect();
    let hist_path = run.path(HISTOGRAMS);
    write_atomic(&hist_path, |w| Ok(verify::write_histograms_csv(w, &freqs)?))?;
    manifest.output(&run.out, &hist_path)?;

    let mut means = Vec::new();
    for method in scores.methods() {
        for score in ["crps", "ae", "es"] {
            let count = scores.entries.iter().filter(|e| e.method == method && e.score == score).count();
            if let Some(mean) = scores.mean(&method, score) {
                lines.push(format!("{method:<20} {score:<5} {mean:.4} ({count} cases)"));
                means.push(MeanScore {
                    method: method.clone(),
                    score: score.to_string(),
                    mean,
                    count,
                });
            }
        }
    }
    let mut uniformity = Vec::new();
    for h in &histograms {
        if h.counts.len() < 2 {
            continue;
        }
        let (chi_square, p_value) = verify::chi_square_uniformity(&h.counts)?;
        uniformity.push(Uniformity {
            histogram: h.name.clone(),
            count: h.counts.iter().sum(),
            chi_square,
            p_value,
        });
    }
    let summary_path = run.path(SUMMARY);
    write_json(&summary_path, &VerifySummary { means, uniformity })?;
    manifest.output(&run.out, &summary_path)?;

    if let Some(cmp) = compare {
        let dm = compare_methods(&scores, cmp, c.dm_lag)?;
        let path = run.path(&format!("dm_{}_{}_{}.json", cmp.a, cmp.b, cmp.score));
        lines.push(format!(
            "DM {} vs {} ({}{}): statistic {:.4}, p-value {:.4}, n {}{}",
            cmp.a,
            cmp.b,
            cmp.score,
            if cmp.daily_mean { ", daily means" } else { "" },
            dm.result.statistic,
            dm.result.p_value,
            dm.result.n,
            if dm.result.degenerate_variance {
                " (degenerate variance)"
            } else {
                ""
            }
        ));
        write_json(&path, &dm)?;
        manifest.output(&run.out, &path)?;
    }
    run.finish(manifest, lines)
}

/// Diebold-Mariano test on the paired scores of two methods.
pub fn compare_methods(scores: &ScoreSeries, cmp: &Comparison, lag: usize) -> Result<DmReport> {
    let (a, b): (Vec<f64>, Vec<f64>) = if cmp.daily_mean {
        let b: BTreeMap<NaiveDate, f64> = scores.daily_means(&cmp.b, &cmp.score).into_iter().collect();
        scores
            .daily_means(&cmp.a, &cmp.score)
            .into_iter()
            .filter_map(|(d, v)| b.get(&d).map(|w| (v, *w)))
            .unzip()
    } else {
        let b: BTreeMap<(NaiveDate, String), f64> = scores.values(&cmp.b, &cmp.score).into_iter().collect();
        scores
            .values(&cmp.a, &cmp.score)
            .into_iter()
            .filter_map(|(k, v)| b.get(&k).map(|w| (v, *w)))
            .unzip()
    };
    if a.is_empty() {
        return Err(CliError::Usage(format!(
            "no paired {} scores for {} and {}; run the upstream commands for both methods",
            cmp.score, cmp.a, cmp.b
        )));
    }
    Ok(DmReport {
        a: cmp.a.clone(),
        b: cmp.b.clone(),
        score: cmp.score.clone(),
        daily_mean: cmp.daily_mean,
        result: verify::dm_test(&a, &b, lag)?,
    })
}

/// Simulates, then fits, predicts and couples each method, then verifies.
pub fn run_all(run: &Run, methods: &[Method]) -> Result<Vec<Report>> {
    let mut reports = vec![simulate(run)?];
    for &m in methods {
        reports.push(fit(run, m)?);
        reports.push(predict(run, m)?);
        reports.push(ecc(run, m)?);
    }
    reports.push(verify(run, None)?);
    Ok(reports)
}
