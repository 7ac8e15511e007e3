//! Flat `key = value` run configuration.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Every key has a default; `memos <cmd> --config run.conf` only needs the
//! keys that differ. `none` clears optional values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDate;
use memos_core::data::{FieldSpec, SimConfig, WindowConfig};
use memos_core::emos::FitConfig;
use memos_core::memos::MemosConfig;
use memos_core::mesh::MeshConfig;
use memos_core::spde::SpdeOrder;
use sha2::{Digest, Sha256};

use crate::error::{io, CliError, Result};

/// Postprocessing method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Raw,
    Global,
    Local,
    Memos,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Raw, Method::Global, Method::Local, Method::Memos];

    pub fn name(self) -> &'static str {
        match self {
            Method::Raw => "raw",
            Method::Global => "global",
            Method::Local => "local",
            Method::Memos => "memos",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "raw" => Ok(Method::Raw),
            "global" => Ok(Method::Global),
            "local" => Ok(Method::Local),
            "memos" => Ok(Method::Memos),
            other => Err(format!("unknown method {other:?} (expected raw, global, local or memos)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Case CSV; defaults to `cases.csv` in the output directory.
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub window: WindowConfig,
    /// Quantile sample size per draw, and simulated ensemble size.
    pub m: usize,
    pub emos: FitConfig,
    pub memos: MemosConfig,
    pub mesh: MeshConfig,
    pub eval_start: Option<NaiveDate>,
    pub eval_end: Option<NaiveDate>,
    pub histogram_bins: usize,
    pub dm_lag: usize,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            seed: 0,
            window: WindowConfig::default(),
            m: 50,
            emos: FitConfig::default(),
            memos: MemosConfig::default(),
            mesh: MeshConfig::default(),
            eval_start: None,
            eval_end: None,
            histogram_bins: 17,
            dm_lag: 0,
            sim: SimConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| CliError::InvalidValue {
        key: key.to_string(),
        message: format!("{value:?}: {e}"),
    })
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn opt_text<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn field_parts(spec: &FieldSpec) -> (&'static str, f64, f64, f64) {
    match *spec {
        FieldSpec::Constant { value } => ("constant", value, 1.0, 1.0),
        FieldSpec::Gmrf { mean, kappa, tau } => ("gmrf", mean, kappa, tau),
    }
}

fn set_field(spec: &mut FieldSpec, part: &str, key: &str, value: &str) -> Result<()> {
    let (kind, mut mean, mut kappa, mut tau) = field_parts(spec);
    let mut kind = kind.to_string();
    match part {
        "field" => {
            if value != "gmrf" && value != "constant" {
                return Err(CliError::InvalidValue {
                    key: key.into(),
                    message: format!("{value:?}: expected gmrf or constant"),
                });
            }
            kind = value.to_string();
        }
        "mean" => mean = parse(key, value)?,
        "kappa" => kappa = parse(key, value)?,
        "tau" => tau = parse(key, value)?,
        _ => return Err(CliError::UnknownKey(key.into())),
    }
    *spec = if kind == "constant" {
        FieldSpec::Constant { value: mean }
    } else {
        FieldSpec::Gmrf { mean, kappa, tau }
    };
    Ok(())
}

impl RunConfig {
    /// Reads a config file on top of the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io(path, e))?;
        Self::parse_text(&text, path)
    }

    pub fn parse_text(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Config {
                path: origin.to_path_buf(),
                line: k + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key = value, found {line:?}")))?;
            cfg.set(key.trim(), value.trim()).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let p = &mut self.memos.priors;
        let s = &mut self.memos.sampler;
        match key {
            "data" => self.data = parse_opt(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "window_length" => self.window.length = parse(key, value)?,
            "min_cases" => self.window.min_cases = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "n" => s.n = parse(key, value)?,
            "burn_in" => s.burn_in = parse(key, value)?,
            "thin" => s.thin = parse(key, value)?,
            "proposal_scale" => s.initial_scale = parse(key, value)?,
            "adapt_interval" => s.adapt_interval = parse(key, value)?,
            "min_acceptance" => s.min_acceptance = parse(key, value)?,
            "logkappa_mean" => p.logkappa_mean = parse(key, value)?,
            "logkappa_var" => p.logkappa_var = parse(key, value)?,
            "logtau_mean" => p.logtau_mean = parse(key, value)?,
            "logtau_var" => p.logtau_var = parse(key, value)?,
            "precision_shape" => p.precision_shape = parse(key, value)?,
            "precision_rate" => p.precision_rate = parse(key, value)?,
            "v_fix" => p.v_fix = parse(key, value)?,
            "spde_alpha" => {
                self.memos.order = match value {
                    "1" => SpdeOrder::Alpha1,
                    "2" => SpdeOrder::Alpha2,
                    _ => {
                        return Err(CliError::InvalidValue {
                            key: key.into(),
                            message: format!("{value:?}: expected 1 or 2"),
                        })
                    }
                }
            }
            "sigma_floor" => self.emos.sigma_floor = parse(key, value)?,
            "min_angle" => self.mesh.min_angle = parse(key, value)?,
            "max_edge" => self.mesh.max_edge = parse_opt(key, value)?,
            "node_budget_factor" => self.mesh.node_budget_factor = parse(key, value)?,
            "eval_start" => self.eval_start = parse_opt(key, value)?,
            "eval_end" => self.eval_end = parse_opt(key, value)?,
            "histogram_bins" => self.histogram_bins = parse(key, value)?,
            "dm_lag" => self.dm_lag = parse(key, value)?,
            "n_stations" => self.sim.n_stations = parse(key, value)?,
            "n_days" => self.sim.n_days = parse(key, value)?,
            "start_date" => self.sim.start_date = parse(key, value)?,
            "domain_km" => self.sim.domain_km = parse(key, value)?,
            "center_lon" => self.sim.center_lon = parse(key, value)?,
            "center_lat" => self.sim.center_lat = parse(key, value)?,
            "sigma" => self.sim.sigma = parse(key, value)?,
            "climate_mean" => self.sim.climate_mean = parse(key, value)?,
            "seasonal_amplitude" => self.sim.seasonal_amplitude = parse(key, value)?,
            "anomaly_sd" => self.sim.anomaly_sd = parse(key, value)?,
            "anomaly_ar" => self.sim.anomaly_ar = parse(key, value)?,
            "gradient" => self.sim.gradient = parse(key, value)?,
            "local_sd" => self.sim.local_sd = parse(key, value)?,
            "ensemble_spread" => self.sim.ensemble_spread = parse(key, value)?,
            "missing_fraction" => self.sim.missing_fraction = parse(key, value)?,
            _ => {
                if let Some(part) = key.strip_prefix("a_") {
                    set_field(&mut self.sim.a_field, part, key, value)?;
                } else if let Some(part) = key.strip_prefix("b_") {
                    set_field(&mut self.sim.b_field, part, key, value)?;
                } else {
                    return Err(CliError::UnknownKey(key.into()));
                }
            }
        }
        // the simulator shares the ensemble size and mesh settings
        self.sim.m = self.m;
        self.sim.mesh = self.mesh;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| {
            Err(CliError::InvalidValue {
                key: key.into(),
                message: message.into(),
            })
        };
        if self.m == 0 {
            return bad("m", "must be positive");
        }
        if self.histogram_bins == 0 {
            return bad("histogram_bins", "must be positive");
        }
        if let (Some(a), Some(b)) = (self.eval_start, self.eval_end) {
            if a > b {
                return bad("eval_end", "precedes eval_start");
            }
        }
        self.memos.priors.validate()?;
        self.memos.sampler.validate()?;
        self.sim.validate()?;
        Ok(())
    }

    /// Every key with its effective value, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let p = &self.memos.priors;
        let s = &self.memos.sampler;
        let (a_kind, a_mean, a_kappa, a_tau) = field_parts(&self.sim.a_field);
        let (b_kind, b_mean, b_kappa, b_tau) = field_parts(&self.sim.b_field);
        let mut e = vec![
            ("a_field", a_kind.to_string()),
            ("a_kappa", a_kappa.to_string()),
            ("a_mean", a_mean.to_string()),
            ("a_tau", a_tau.to_string()),
            ("adapt_interval", s.adapt_interval.to_string()),
            ("anomaly_ar", self.sim.anomaly_ar.to_string()),
            ("anomaly_sd", self.sim.anomaly_sd.to_string()),
            ("b_field", b_kind.to_string()),
            ("b_kappa", b_kappa.to_string()),
            ("b_mean", b_mean.to_string()),
            ("b_tau", b_tau.to_string()),
            ("burn_in", s.burn_in.to_string()),
            ("center_lat", self.sim.center_lat.to_string()),
            ("center_lon", self.sim.center_lon.to_string()),
            ("climate_mean", self.sim.climate_mean.to_string()),
            ("data", opt_text(&self.data.as_ref().map(|p| p.display().to_string()))),
            ("dm_lag", self.dm_lag.to_string()),
            ("domain_km", self.sim.domain_km.to_string()),
            ("ensemble_spread", self.sim.ensemble_spread.to_string()),
            ("eval_end", opt_text(&self.eval_end)),
            ("eval_start", opt_text(&self.eval_start)),
            ("gradient", self.sim.gradient.to_string()),
            ("histogram_bins", self.histogram_bins.to_string()),
            ("local_sd", self.sim.local_sd.to_string()),
            ("logkappa_mean", p.logkappa_mean.to_string()),
            ("logkappa_var", p.logkappa_var.to_string()),
            ("logtau_mean", p.logtau_mean.to_string()),
            ("logtau_var", p.logtau_var.to_string()),
            ("m", self.m.to_string()),
            ("max_edge", opt_text(&self.mesh.max_edge)),
            ("min_acceptance", s.min_acceptance.to_string()),
            ("min_angle", self.mesh.min_angle.to_string()),
            ("min_cases", self.window.min_cases.to_string()),
            ("missing_fraction", self.sim.missing_fraction.to_string()),
            ("n", s.n.to_string()),
            ("n_days", self.sim.n_days.to_string()),
            ("n_stations", self.sim.n_stations.to_string()),
            ("node_budget_factor", self.mesh.node_budget_factor.to_string()),
            ("precision_rate", p.precision_rate.to_string()),
            ("precision_shape", p.precision_shape.to_string()),
            ("proposal_scale", s.initial_scale.to_string()),
            ("seasonal_amplitude", self.sim.seasonal_amplitude.to_string()),
            ("seed", self.seed.to_string()),
            ("sigma", self.sim.sigma.to_string()),
            ("sigma_floor", self.emos.sigma_floor.to_string()),
            (
                "spde_alpha",
                match self.memos.order {
                    SpdeOrder::Alpha1 => "1",
                    SpdeOrder::Alpha2 => "2",
                }
                .to_string(),
            ),
            ("start_date", self.sim.start_date.to_string()),
            ("thin", s.thin.to_string()),
            ("v_fix", p.v_fix.to_string()),
            ("window_length", self.window.length.to_string()),
        ];
        e.sort_by_key(|(k, _)| *k);
        e
    }

    /// Canonical `key = value` text of the effective configuration.
    pub fn canonical_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 of [`RunConfig::canonical_text`], hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_text().as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.window.length, 25);
        assert_eq!((c.m, c.memos.sampler.n), (50, 100));
        assert_eq!(c.histogram_bins, 17);
    }

    #[test]
    fn parses_comments_and_overrides() {
        let text = "# run\nwindow_length = 20\n\nn = 10 # fewer draws\nmax_edge = 2.5\na_field = constant\na_mean = 0\n";
        let c = RunConfig::parse_text(text, Path::new("run.conf")).unwrap();
        assert_eq!(c.window.length, 20);
        assert_eq!(c.memos.sampler.n, 10);
        assert_eq!(c.mesh.max_edge, Some(2.5));
        assert_eq!(c.sim.a_field, FieldSpec::Constant { value: 0.0 });
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut c = RunConfig::default();
        c.set("eval_start", "2010-10-01").unwrap();
        c.set("b_tau", "1.5").unwrap();
        let again = RunConfig::parse_text(&c.canonical_text(), Path::new("x")).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        assert_ne!(RunConfig::default().hash(), c.hash());
    }

    #[test]
    fn errors_name_the_line() {
        let e = RunConfig::parse_text("n = 5\nwindow_lenght = 3\n", Path::new("run.conf")).unwrap_err();
        assert!(e.to_string().contains("line 2"), "{e}");
        let e = RunConfig::parse_text("n = five\n", Path::new("run.conf")).unwrap_err();
        assert!(e.to_string().contains("line 1") && e.to_string().contains("n"));
        assert!(RunConfig::parse_text("just text\n", Path::new("run.conf")).is_err());
        assert!(RunConfig::parse_text("m = 0\n", Path::new("run.conf")).is_err());
    }
}
