//! Gaussian EMOS: `Y | f̄ ~ N(a + b·f̄, σ²)` with parameters estimated by
//! minimizing the mean CRPS over a rolling training window, either pooled
//! over all stations (Global) or per station (Local).

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::data::{rolling_window, CaseTable, TrainingSet, WindowConfig, WindowMode};
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::stats::{std_normal_cdf, std_normal_pdf, std_normal_quantile, FRAC_1_SQRT_PI};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmosParams {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
}

/// A normal predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mu: f64,
    pub sigma: f64,
}

impl Gaussian {
    pub fn cdf(&self, x: f64) -> f64 {
        std_normal_cdf((x - self.mu) / self.sigma)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.mu + self.sigma * std_normal_quantile(p)
    }

    pub fn median(&self) -> f64 {
        self.mu
    }

    /// The `m` quantiles at levels (2j-1)/(2m), ascending.
    pub fn equispaced_quantiles(&self, m: usize) -> Vec<f64> {
        crate::stats::centered_quantiles(m)
            .into_iter()
            .map(|z| self.mu + self.sigma * z)
            .collect()
    }

    pub fn crps(&self, y: f64) -> Result<f64> {
        crps_gaussian(self.mu, self.sigma, y)
    }
}

/// Closed-form CRPS of `N(mu, sigma²)` at `y`.
pub fn crps_gaussian(mu: f64, sigma: f64, y: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(crps_gaussian_unchecked(mu, sigma, y))
}

fn crps_gaussian_unchecked(mu: f64, sigma: f64, y: f64) -> f64 {
    let z = (y - mu) / sigma;
    let v = sigma * (z * (2.0 * std_normal_cdf(z) - 1.0) + 2.0 * std_normal_pdf(z) - FRAC_1_SQRT_PI);
    v.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub sigma_floor: f64,
    pub optimizer: NelderMeadSettings,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadSettings {
    pub x_tol: f64,
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        let d = NelderMeadOptions::default();
        FitConfig {
            sigma_floor: 1e-4,
            optimizer: NelderMeadSettings {
                x_tol: d.x_tol,
                f_tol: d.f_tol,
                max_iter: d.max_iter,
            },
        }
    }
}

/// Mean CRPS of `N(a + b·f̄, σ²)` over `(f̄, y)` pairs.
pub fn mean_crps(params: &EmosParams, pairs: &[(f64, f64)]) -> f64 {
    pairs
        .iter()
        .map(|&(f, y)| crps_gaussian_unchecked(params.a + params.b * f, params.sigma, y))
        .sum::<f64>()
        / pairs.len() as f64
}

/// Ordinary least squares `(a, b)` and residual sd, the optimizer's start.
pub fn ols_start(pairs: &[(f64, f64)]) -> EmosParams {
    let n = pairs.len() as f64;
    let fm = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sff: f64 = pairs.iter().map(|p| (p.0 - fm).powi(2)).sum();
    let sfy: f64 = pairs.iter().map(|p| (p.0 - fm) * (p.1 - ym)).sum();
    let b = if sff > 0.0 { sfy / sff } else { 0.0 };
    let a = ym - b * fm;
    let dof = (pairs.len() as f64 - if sff > 0.0 { 2.0 } else { 1.0 }).max(1.0);
    let sigma = (pairs.iter().map(|p| (p.1 - a - b * p.0).powi(2)).sum::<f64>() / dof).sqrt();
    EmosParams { a, b, sigma }
}

/// Minimum-CRPS estimate from a training window.
pub fn fit(training: &TrainingSet, config: &FitConfig) -> Result<EmosParams> {
    let pairs: Vec<(f64, f64)> = training.cases.iter().map(|c| (c.fbar, c.y)).collect();
    fit_pairs(&pairs, config)
}

/// Minimum-CRPS estimate from `(f̄, y)` pairs. The optimizer works in
/// `(a, b, log σ)`; σ is held at or above the configured floor. When f̄ is
/// constant the slope is fixed at zero.
pub fn fit_pairs(pairs: &[(f64, f64)], config: &FitConfig) -> Result<EmosParams> {
    if pairs.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if pairs.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
        return Err(Error::InvalidArgument("non-finite training values".into()));
    }
    let floor = config.sigma_floor;
    let log_floor = floor.ln();
    let start = ols_start(pairs);
    let constant_predictor = pairs.iter().all(|p| p.0 == pairs[0].0);
    let sigma_of = |s: f64| s.max(log_floor).exp();
    let opts = NelderMeadOptions {
        x_tol: config.optimizer.x_tol,
        f_tol: config.optimizer.f_tol,
        max_iter: config.optimizer.max_iter,
    };
    let scale = (start.sigma.max(floor)).max(1e-3);
    let log_sigma0 = start.sigma.max(floor).ln();

    let run = |x0: &[f64], step: &[f64]| {
        if constant_predictor {
            nelder_mead(
                |x| mean_crps(&EmosParams { a: x[0], b: 0.0, sigma: sigma_of(x[1]) }, pairs),
                x0,
                step,
                &opts,
            )
        } else {
            nelder_mead(
                |x| mean_crps(&EmosParams { a: x[0], b: x[1], sigma: sigma_of(x[2]) }, pairs),
                x0,
                step,
                &opts,
            )
        }
    };
    let (x0, step) = if constant_predictor {
        (vec![start.a, log_sigma0], vec![scale, 0.5])
    } else {
        let fsd = {
            let fm = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
            (pairs.iter().map(|p| (p.0 - fm).powi(2)).sum::<f64>() / pairs.len() as f64).sqrt()
        };
        (vec![start.a, start.b, log_sigma0], vec![scale, scale / fsd.max(1e-6), 0.5])
    };
    let first = run(&x0, &step);
    // restart from the optimum to guard against premature simplex collapse
    let step2: Vec<f64> = step.iter().map(|s| s * 0.1).collect();
    let second = run(&first.x, &step2);
    let best = if second.value <= first.value { second.clone() } else { first.clone() };

    let params = if constant_predictor {
        EmosParams { a: best.x[0], b: 0.0, sigma: sigma_of(best.x[1]) }
    } else {
        EmosParams { a: best.x[0], b: best.x[1], sigma: sigma_of(best.x[2]) }
    };
    if !(first.converged && second.converged) {
        return Err(Error::NoConvergence {
            iterations: first.iterations + second.iterations,
            best: [params.a, params.b, params.sigma],
            best_value: best.value,
        });
    }
    Ok(params)
}

/// Fitted parameters with the window they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEmos {
    pub a: f64,
    pub b: f64,
    pub sigma: f64,
    pub valid_date: NaiveDate,
    pub mode: WindowMode,
    pub n_cases: usize,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

impl FittedEmos {
    pub fn new(params: EmosParams, training: &TrainingSet) -> Self {
        FittedEmos {
            a: params.a,
            b: params.b,
            sigma: params.sigma,
            valid_date: training.valid_date,
            mode: training.mode.clone(),
            n_cases: training.len(),
            first_date: training.dates[0],
            last_date: *training.dates.last().unwrap(),
        }
    }

    pub fn params(&self) -> EmosParams {
        EmosParams { a: self.a, b: self.b, sigma: self.sigma }
    }
}

/// Global EMOS: one parameter set pooled over all stations.
pub fn fit_global(
    table: &CaseTable,
    valid_date: NaiveDate,
    window: &WindowConfig,
    config: &FitConfig,
) -> Result<FittedEmos> {
    let training = rolling_window(table, valid_date, window, &WindowMode::Global)?;
    Ok(FittedEmos::new(fit(&training, config)?, &training))
}

/// Local EMOS: parameters from the station's own window.
pub fn fit_local(
    table: &CaseTable,
    valid_date: NaiveDate,
    station: &str,
    window: &WindowConfig,
    config: &FitConfig,
) -> Result<FittedEmos> {
    let training = rolling_window(table, valid_date, window, &WindowMode::Local(station.to_string()))?;
    Ok(FittedEmos::new(fit(&training, config)?, &training))
}

pub fn predict(params: &EmosParams, fbar: f64) -> Gaussian {
    Gaussian {
        mu: params.a + params.b * fbar,
        sigma: params.sigma,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{ForecastCase, Location, Projection};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn reference_values() {
        assert!((crps_gaussian(0.0, 1.0, 0.0).unwrap() - 0.233_695).abs() < 1e-6);
        assert!((crps_gaussian(0.0, 1.0, 10.0).unwrap() - 9.435_81).abs() < 1e-5);
        assert!(crps_gaussian(0.0, 0.0, 1.0).is_err());
        assert!(crps_gaussian(0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn translation_invariance() {
        for c in [-3.0, 0.5, 100.0] {
            let a = crps_gaussian(1.0 + c, 2.0, -0.3 + c).unwrap();
            let b = crps_gaussian(1.0, 2.0, -0.3).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn predict_mean() {
        let p = |a, b| EmosParams { a, b, sigma: 1.0 };
        assert_eq!(predict(&p(0.0, 1.0), 3.0).mu, 3.0);
        assert_eq!(predict(&p(2.0, 0.0), -7.0).mu, 2.0);
        assert_eq!(predict(&p(1.0, -0.5), 4.0).mu, -1.0);
    }

    #[test]
    fn noise_free_fit() {
        let pairs: Vec<(f64, f64)> = (0..30).map(|i| {
            let f = -5.0 + 0.7 * i as f64;
            (f, 2.0 + 0.9 * f)
        }).collect();
        let p = fit_pairs(&pairs, &FitConfig::default()).unwrap();
        assert!((p.a - 2.0).abs() < 1e-4 && (p.b - 0.9).abs() < 1e-4, "{p:?}");
        assert!((p.sigma - 1e-4).abs() < 1e-10);
    }

    #[test]
    fn constant_predictor_fixes_slope() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pairs: Vec<(f64, f64)> = (0..40).map(|_| (3.0, 1.0 + rng.sample::<f64, _>(StandardNormal))).collect();
        let p = fit_pairs(&pairs, &FitConfig::default()).unwrap();
        assert_eq!(p.b, 0.0);
        // the optimum is a stationary point of the mean CRPS in (a, σ)
        let h = 1e-4;
        let g = |da: f64, ds: f64| mean_crps(&EmosParams { a: p.a + da, b: 0.0, sigma: p.sigma + ds }, &pairs);
        let f0 = g(0.0, 0.0);
        for (da, ds) in [(h, 0.0), (-h, 0.0), (0.0, h), (0.0, -h)] {
            assert!(g(da, ds) >= f0 - 1e-12);
        }
    }

    #[test]
    fn fit_improves_on_ols_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs: Vec<(f64, f64)> = (0..60)
            .map(|_| {
                let f: f64 = rng.random_range(-5.0..15.0);
                let e: f64 = rng.sample(StandardNormal);
                (f, 0.5 + 1.05 * f + 1.2 * e * e.abs())
            })
            .collect();
        let p = fit_pairs(&pairs, &FitConfig::default()).unwrap();
        assert!(mean_crps(&p, &pairs) <= mean_crps(&ols_start(&pairs), &pairs));
    }

    #[test]
    fn consistency_against_generator() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pairs: Vec<(f64, f64)> = (0..5000)
            .map(|_| {
                let f: f64 = 10.0 + 5.0 * rng.sample::<f64, _>(StandardNormal);
                (f, 1.0 + 1.1 * f + 1.5 * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let p = fit_pairs(&pairs, &FitConfig::default()).unwrap();
        assert!((p.a - 1.0).abs() < 0.05, "{p:?}");
        assert!((p.b / 1.1 - 1.0).abs() < 0.05);
        assert!((p.sigma / 1.5 - 1.0).abs() < 0.05);
    }

    #[test]
    fn non_convergence_reports_best_iterate() {
        let cfg = FitConfig {
            optimizer: NelderMeadSettings { x_tol: 1e-8, f_tol: 1e-10, max_iter: 2 },
            ..FitConfig::default()
        };
        let pairs: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, (i * i) as f64 * 0.1)).collect();
        match fit_pairs(&pairs, &cfg) {
            Err(Error::NoConvergence { best, best_value, .. }) => {
                assert!(best_value.is_finite());
                assert!(best[2] > 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    fn two_station_table() -> CaseTable {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let stations = ["P", "M"]
            .iter()
            .enumerate()
            .map(|(i, id)| Location { id: id.to_string(), lon: 10.0 + i as f64, lat: 50.0, x: 70.0 * i as f64, y: 0.0 })
            .collect();
        let mut cases = Vec::new();
        for d in 0..40 {
            let date = NaiveDate::from_ymd_opt(2010, 9, 1).unwrap() + chrono::Duration::days(d);
            for (s, bias) in [(0usize, 2.0), (1, -2.0)] {
                let f: f64 = 10.0 + 4.0 * rng.sample::<f64, _>(StandardNormal);
                let y = bias + f + 0.5 * rng.sample::<f64, _>(StandardNormal);
                cases.push(ForecastCase { date, station: s, members: vec![f], observation: Some(y) });
            }
        }
        CaseTable { stations, cases, m: 1, projection: Projection { lon0: 10.5, lat0: 50.0 } }
    }

    #[test]
    fn global_and_local_biases() {
        let t = two_station_table();
        let valid = NaiveDate::from_ymd_opt(2010, 10, 8).unwrap();
        let w = WindowConfig::default();
        let cfg = FitConfig::default();
        let g = fit_global(&t, valid, &w, &cfg).unwrap();
        assert!(g.a.abs() < 0.6, "{g:?}");
        assert_eq!(g.n_cases, 50);
        let p = fit_local(&t, valid, "P", &w, &cfg).unwrap();
        let m = fit_local(&t, valid, "M", &w, &cfg).unwrap();
        assert!((p.a - 2.0).abs() < 0.6 && (m.a + 2.0).abs() < 0.6, "{p:?} {m:?}");
        assert!(fit_local(&t, valid, "Q", &w, &cfg).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"a\":") && json.contains("\"sigma\":") && json.contains("valid_date"));
    }

    #[test]
    fn single_station_global_equals_local() {
        let mut t = two_station_table();
        t.cases.retain(|c| c.station == 0);
        t.stations.truncate(1);
        let valid = NaiveDate::from_ymd_opt(2010, 10, 8).unwrap();
        let w = WindowConfig::default();
        let g = fit_global(&t, valid, &w, &FitConfig::default()).unwrap();
        let l = fit_local(&t, valid, "P", &w, &FitConfig::default()).unwrap();
        assert_eq!(g.params(), l.params());
    }
}
