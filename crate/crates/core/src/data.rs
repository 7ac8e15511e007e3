//! Forecast/observation cases, rolling training windows and the synthetic
//! data generator used to test the estimators against known truth.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{self, MeshConfig, Point};
use crate::spde::{self, FemOperators};

const EARTH_RADIUS_KM: f64 = 6371.0;

/// A station with geographic and projected planar coordinates (km).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Equirectangular projection about a reference point, in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
}

impl Projection {
    pub fn forward(&self, lon: f64, lat: f64) -> (f64, f64) {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        (
            k * (lon - self.lon0) * self.lat0.to_radians().cos(),
            k * (lat - self.lat0),
        )
    }

    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        let k = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
        (
            self.lon0 + x / (k * self.lat0.to_radians().cos()),
            self.lat0 + y / k,
        )
    }

    /// Projection about the centroid of the given lon/lat pairs.
    pub fn centroid(coords: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let (mut slon, mut slat, mut n) = (0.0, 0.0, 0usize);
        for (lon, lat) in coords {
            slon += lon;
            slat += lat;
            n += 1;
        }
        let n = n.max(1) as f64;
        Projection {
            lon0: slon / n,
            lat0: slat / n,
        }
    }
}

/// One ensemble forecast with its (possibly missing) verifying observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastCase {
    pub date: NaiveDate,
    /// Index into [`CaseTable::stations`].
    pub station: usize,
    pub members: Vec<f64>,
    pub observation: Option<f64>,
}

impl ForecastCase {
    pub fn fbar(&self) -> f64 {
        mean_unchecked(&self.members)
    }
}

/// All cases of a dataset, sorted by date and station index.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseTable {
    pub stations: Vec<Location>,
    pub cases: Vec<ForecastCase>,
    /// Ensemble size, constant across the table.
    pub m: usize,
    pub projection: Projection,
}

impl CaseTable {
    pub fn station_index(&self, id: &str) -> Option<usize> {
        self.stations.iter().position(|s| s.id == id)
    }

    /// Distinct dates in ascending order.
    pub fn dates(&self) -> Vec<NaiveDate> {
        let mut d: Vec<_> = self.cases.iter().map(|c| c.date).collect();
        d.dedup();
        d
    }

    pub fn cases_on(&self, date: NaiveDate) -> impl Iterator<Item = &ForecastCase> {
        let start = self.cases.partition_point(|c| c.date < date);
        self.cases[start..].iter().take_while(move |c| c.date == date)
    }

    /// Writes the table in the `date,station,lon,lat,obs,m1..mK` layout.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["date", "station", "lon", "lat", "obs"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=self.m).map(|k| format!("m{k}")));
        w.write_record(&header)?;
        for case in &self.cases {
            let st = &self.stations[case.station];
            let mut rec = vec![
                case.date.to_string(),
                st.id.clone(),
                st.lon.to_string(),
                st.lat.to_string(),
                case.observation.map(|v| v.to_string()).unwrap_or_default(),
            ];
            rec.extend(case.members.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }
}

/// Column names of the case CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvSchema {
    pub date: String,
    pub station: String,
    pub lon: String,
    pub lat: String,
    pub obs: String,
    /// Member columns are `<prefix>1`, `<prefix>2`, ...
    pub member_prefix: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            date: "date".into(),
            station: "station".into(),
            lon: "lon".into(),
            lat: "lat".into(),
            obs: "obs".into(),
            member_prefix: "m".into(),
        }
    }
}

pub fn load_cases(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<CaseTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_cases(file, schema)
}

/// Parses cases from CSV. The ensemble size is inferred from the member
/// columns; rows with fewer member values are rejected.
pub fn read_cases<R: Read>(reader: R, schema: &CsvSchema) -> Result<CaseTable> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h.trim() == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (c_date, c_station, c_lon, c_lat, c_obs) = (
        col(&schema.date)?,
        col(&schema.station)?,
        col(&schema.lon)?,
        col(&schema.lat)?,
        col(&schema.obs)?,
    );
    let mut member_cols = Vec::new();
    while let Some(c) = headers
        .iter()
        .position(|h| h.trim() == format!("{}{}", schema.member_prefix, member_cols.len() + 1))
    {
        member_cols.push(c);
    }
    let m = member_cols.len();
    if m == 0 {
        return Err(Error::Parse {
            line: 1,
            message: format!("no member columns `{}1..`", schema.member_prefix),
        });
    }

    struct Raw {
        date: NaiveDate,
        station: usize,
        members: Vec<f64>,
        obs: Option<f64>,
    }
    let mut ids: Vec<String> = Vec::new();
    let mut geo: Vec<(f64, f64)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut rows = Vec::new();

    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let parse_err = |message: String| Error::Parse { line, message };
        let field = |c: usize| record.get(c).map(str::trim).unwrap_or("");
        let num = |c: usize, what: &str| -> Result<f64> {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| parse_err(format!("invalid {what} `{}`", field(c))))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite {what}")));
            }
            Ok(v)
        };

        let date = NaiveDate::parse_from_str(field(c_date), "%Y-%m-%d")
            .map_err(|_| parse_err(format!("invalid date `{}`", field(c_date))))?;
        let id = field(c_station);
        if id.is_empty() {
            return Err(parse_err("empty station id".into()));
        }
        let lon = num(c_lon, "lon")?;
        let lat = num(c_lat, "lat")?;
        let obs = if field(c_obs).is_empty() {
            None
        } else {
            Some(num(c_obs, "observation")?)
        };
        let present: Vec<usize> = member_cols
            .iter()
            .copied()
            .filter(|&c| !field(c).is_empty())
            .collect();
        if present.len() != m {
            return Err(Error::InconsistentEnsembleSize {
                line,
                expected: m,
                found: present.len(),
            });
        }
        let members = present
            .iter()
            .map(|&c| num(c, "member value"))
            .collect::<Result<Vec<_>>>()?;

        let station = match index.get(id) {
            Some(&s) => {
                if geo[s] != (lon, lat) {
                    return Err(parse_err(format!("station `{id}` has inconsistent coordinates")));
                }
                s
            }
            None => {
                let s = ids.len();
                ids.push(id.to_string());
                geo.push((lon, lat));
                index.insert(id.to_string(), s);
                s
            }
        };
        rows.push((line, Raw { date, station, members, obs }));
    }

    rows.sort_by_key(|(_, r)| (r.date, r.station));
    for pair in rows.windows(2) {
        if (pair[0].1.date, pair[0].1.station) == (pair[1].1.date, pair[1].1.station) {
            return Err(Error::Parse {
                line: pair[1].0,
                message: format!(
                    "duplicate case for station `{}` on {}",
                    ids[pair[1].1.station], pair[1].1.date
                ),
            });
        }
    }

    let projection = Projection::centroid(geo.iter().copied());
    let stations = ids
        .into_iter()
        .zip(&geo)
        .map(|(id, &(lon, lat))| {
            let (x, y) = projection.forward(lon, lat);
            Location { id, lon, lat, x, y }
        })
        .collect();
    let cases = rows
        .into_iter()
        .map(|(_, r)| ForecastCase {
            date: r.date,
            station: r.station,
            members: r.members,
            observation: r.obs,
        })
        .collect();
    Ok(CaseTable {
        stations,
        cases,
        m,
        projection,
    })
}

pub fn ensemble_mean(members: &[f64]) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Empty("ensemble has no members"));
    }
    Ok(mean_unchecked(members))
}

fn mean_unchecked(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Which cases feed a rolling training window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindowMode {
    /// All stations, the `length` calendar days before the valid date.
    Global,
    /// One station, its `length` most recent dates with an observation.
    Local(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub length: usize,
    pub min_cases: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length: 25,
            min_cases: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingCase {
    pub station: usize,
    pub date: NaiveDate,
    pub fbar: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub cases: Vec<TrainingCase>,
    /// Distinct dates covered, ascending.
    pub dates: Vec<NaiveDate>,
    pub mode: WindowMode,
    pub valid_date: NaiveDate,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    /// Station indices present in the window, ascending.
    pub fn stations(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.cases.iter().map(|c| c.station).collect();
        s.sort_unstable();
        s.dedup();
        s
    }
}

/// Training cases preceding `valid_date`; never includes the valid date itself.
pub fn rolling_window(
    table: &CaseTable,
    valid_date: NaiveDate,
    config: &WindowConfig,
    mode: &WindowMode,
) -> Result<TrainingSet> {
    if config.length == 0 {
        return Err(Error::InvalidArgument("window length must be at least 1".into()));
    }
    let to_training = |c: &ForecastCase| TrainingCase {
        station: c.station,
        date: c.date,
        fbar: c.fbar(),
        y: c.observation.unwrap(),
    };
    let cases: Vec<TrainingCase> = match mode {
        WindowMode::Global => {
            let first = valid_date - Duration::days(config.length as i64);
            let lo = table.cases.partition_point(|c| c.date < first);
            let hi = table.cases.partition_point(|c| c.date < valid_date);
            table.cases[lo..hi]
                .iter()
                .filter(|c| c.observation.is_some())
                .map(to_training)
                .collect()
        }
        WindowMode::Local(id) => {
            let station = table
                .station_index(id)
                .ok_or_else(|| Error::UnknownStation(id.clone()))?;
            let hi = table.cases.partition_point(|c| c.date < valid_date);
            let mut picked: Vec<TrainingCase> = table.cases[..hi]
                .iter()
                .rev()
                .filter(|c| c.station == station && c.observation.is_some())
                .take(config.length)
                .map(to_training)
                .collect();
            picked.reverse();
            picked
        }
    };
    if cases.len() < config.min_cases {
        return Err(Error::InsufficientTrainingData {
            valid_date,
            found: cases.len(),
            required: config.min_cases,
        });
    }
    let mut dates: Vec<NaiveDate> = cases.iter().map(|c| c.date).collect();
    dates.dedup();
    Ok(TrainingSet {
        cases,
        dates,
        mode: mode.clone(),
        valid_date,
    })
}

/// How a true coefficient field is generated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldSpec {
    Constant { value: f64 },
    /// Fixed mean plus a zero-mean SPDE field with the given parameters.
    Gmrf { mean: f64, kappa: f64, tau: f64 },
}

impl FieldSpec {
    fn validate(&self, name: &str) -> Result<()> {
        match *self {
            FieldSpec::Constant { value } if !value.is_finite() => Err(Error::InvalidArgument(
                format!("{name}: constant must be finite"),
            )),
            FieldSpec::Gmrf { mean, kappa, tau } => {
                if !mean.is_finite() || !(kappa > 0.0) || !(tau > 0.0) {
                    Err(Error::InvalidArgument(format!(
                        "{name}: kappa and tau must be positive and the mean finite"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

/// Parameters of the synthetic data generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_stations: usize,
    pub n_days: usize,
    pub start_date: NaiveDate,
    pub m: usize,
    /// Stations are uniform on a square of this side length (km).
    pub domain_km: f64,
    pub center_lon: f64,
    pub center_lat: f64,
    pub a_field: FieldSpec,
    pub b_field: FieldSpec,
    /// Observation noise sd; zero gives a noise-free identity.
    pub sigma: f64,
    pub mesh: MeshConfig,
    /// Climatological mean temperature (°C).
    pub climate_mean: f64,
    pub seasonal_amplitude: f64,
    /// Stationary sd of the AR(1) regional daily anomaly.
    pub anomaly_sd: f64,
    pub anomaly_ar: f64,
    /// West-east temperature gradient across the domain (°C).
    pub gradient: f64,
    /// Independent station-day perturbation of the ensemble mean.
    pub local_sd: f64,
    /// Spread of the members about their mean.
    pub ensemble_spread: f64,
    /// Fraction of observations deleted at random.
    pub missing_fraction: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_stations: 50,
            n_days: 85,
            start_date: NaiveDate::from_ymd_opt(2010, 9, 1).unwrap(),
            m: 50,
            domain_km: 10.0,
            center_lon: 10.0,
            center_lat: 51.0,
            a_field: FieldSpec::Gmrf {
                mean: 0.5,
                kappa: 0.6,
                tau: 0.25,
            },
            b_field: FieldSpec::Gmrf {
                mean: 0.95,
                kappa: 0.6,
                tau: 2.5,
            },
            sigma: 1.0,
            mesh: MeshConfig::default(),
            climate_mean: 10.0,
            seasonal_amplitude: 8.0,
            anomaly_sd: 4.0,
            anomaly_ar: 0.7,
            gradient: 2.0,
            local_sd: 1.0,
            ensemble_spread: 1.0,
            missing_fraction: 0.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stations < 3 {
            return Err(Error::InvalidArgument("need at least 3 stations".into()));
        }
        if self.m == 0 {
            return Err(Error::InvalidArgument("ensemble size must be positive".into()));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::InvalidArgument("sigma must be non-negative".into()));
        }
        if !(self.domain_km > 0.0) {
            return Err(Error::InvalidArgument("domain_km must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::InvalidArgument("missing_fraction must lie in [0, 1)".into()));
        }
        if !(-1.0 < self.anomaly_ar && self.anomaly_ar < 1.0) {
            return Err(Error::InvalidArgument("anomaly_ar must lie in (-1, 1)".into()));
        }
        self.a_field.validate("a_field")?;
        self.b_field.validate("b_field")?;
        Ok(())
    }
}

/// Latent values behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub seed: u64,
    pub config: SimConfig,
    /// Station ids in table order.
    pub stations: Vec<String>,
    /// Planar coordinates used by the generator (km).
    pub coords: Vec<[f64; 2]>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub sigma: f64,
    /// Per case in table order: ensemble mean and the noise term.
    pub fbar: Vec<f64>,
    pub noise: Vec<f64>,
}

impl TruthRecord {
    /// Conditional distribution of the observation given the truth: (mean, sd).
    pub fn conditional(&self, station: usize, fbar: f64) -> (f64, f64) {
        (self.a[station] + self.b[station] * fbar, self.sigma)
    }
}

/// Generates a dataset from known coefficient fields. Pure function of
/// `(config, seed)`.
pub fn simulate(config: &SimConfig, seed: u64) -> Result<(CaseTable, TruthRecord)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let half = config.domain_km / 2.0;
    let coords: Vec<Point> = (0..config.n_stations)
        .map(|_| {
            Point::new(
                rng.random_range(-half..half),
                rng.random_range(-half..half),
            )
        })
        .collect();

    let needs_mesh = matches!(config.a_field, FieldSpec::Gmrf { .. })
        || matches!(config.b_field, FieldSpec::Gmrf { .. });
    let (a, b) = if needs_mesh {
        let mesh = mesh::build_mesh(&coords, &config.mesh)?;
        let proj = mesh::projector(&mesh, &coords)?;
        let ops = spde::assemble_fem(&mesh)?;
        let a = draw_field(&config.a_field, &ops, &proj, config.n_stations, &mut rng)?;
        let b = draw_field(&config.b_field, &ops, &proj, config.n_stations, &mut rng)?;
        (a, b)
    } else {
        let constant = |f: &FieldSpec| match *f {
            FieldSpec::Constant { value } => vec![value; config.n_stations],
            FieldSpec::Gmrf { .. } => unreachable!(),
        };
        (constant(&config.a_field), constant(&config.b_field))
    };

    let projection = Projection {
        lon0: config.center_lon,
        lat0: config.center_lat,
    };
    let width = (config.n_stations as f64).log10().floor() as usize + 1;
    let stations: Vec<Location> = coords
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (lon, lat) = projection.inverse(p.x, p.y);
            Location {
                id: format!("S{:0width$}", i + 1, width = width.max(3)),
                lon,
                lat,
                x: p.x,
                y: p.y,
            }
        })
        .collect();

    let innovation_sd = config.anomaly_sd * (1.0 - config.anomaly_ar.powi(2)).sqrt();
    let mut anomaly = config.anomaly_sd * rng.sample::<f64, _>(StandardNormal);
    let mut cases = Vec::with_capacity(config.n_days * config.n_stations);
    let mut fbar_truth = Vec::with_capacity(cases.capacity());
    let mut noise = Vec::with_capacity(cases.capacity());
    for day in 0..config.n_days {
        let date = config.start_date + Duration::days(day as i64);
        if day > 0 {
            anomaly = config.anomaly_ar * anomaly + innovation_sd * rng.sample::<f64, _>(StandardNormal);
        }
        let phase = 2.0 * std::f64::consts::PI * (date.ordinal() as f64 - 200.0) / 365.25;
        let regional = config.climate_mean + config.seasonal_amplitude * phase.cos() + anomaly;
        for (s, p) in coords.iter().enumerate() {
            let center = regional
                + config.gradient * p.x / config.domain_km
                + config.local_sd * rng.sample::<f64, _>(StandardNormal);
            let mut perturb: Vec<f64> = (0..config.m)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect();
            let pm = mean_unchecked(&perturb);
            perturb.iter_mut().for_each(|e| *e -= pm);
            let members: Vec<f64> = perturb
                .iter()
                .map(|e| center + config.ensemble_spread * e)
                .collect();
            let fbar = mean_unchecked(&members);
            let eps: f64 = rng.sample(StandardNormal);
            let y = a[s] + b[s] * fbar + config.sigma * eps;
            let keep = config.missing_fraction == 0.0 || rng.random::<f64>() >= config.missing_fraction;
            cases.push(ForecastCase {
                date,
                station: s,
                members,
                observation: keep.then_some(y),
            });
            fbar_truth.push(fbar);
            noise.push(config.sigma * eps);
        }
    }

    let truth = TruthRecord {
        seed,
        config: config.clone(),
        stations: stations.iter().map(|s| s.id.clone()).collect(),
        coords: coords.iter().map(|p| [p.x, p.y]).collect(),
        a,
        b,
        sigma: config.sigma,
        fbar: fbar_truth,
        noise,
    };
    let table = CaseTable {
        stations,
        cases,
        m: config.m,
        projection,
    };
    Ok((table, truth))
}

fn draw_field<R: Rng>(
    spec: &FieldSpec,
    ops: &FemOperators,
    proj: &mesh::Projector,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match *spec {
        FieldSpec::Constant { value } => Ok(vec![value; n]),
        FieldSpec::Gmrf { mean, kappa, tau } => {
            let q = spde::precision(ops, kappa, tau)?;
            let w = spde::sample_gmrf(&q, 1, rng)?.pop().unwrap();
            Ok(proj.apply(&w).into_iter().map(|v| mean + v).collect())
        }
    }
}
