//! Proper scores, rank and PIT histograms, and the Diebold-Mariano test.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::stats::{sort_f64, std_normal_cdf};

/// CRPS of the empirical distribution of `sample` at `y`.
pub fn crps_empirical(sample: &[f64], y: f64) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let mut sorted = sample.to_vec();
    sort_f64(&mut sorted);
    Ok(crps_sorted(&sorted, y))
}

/// As [`crps_empirical`] for a sample already sorted ascending.
///
/// Uses `ΣΣ|x_i − x_j| = 2 Σ_i (2i − N − 1) x_(i)` over the order statistics.
pub fn crps_sorted(sorted: &[f64], y: f64) -> f64 {
    let n = sorted.len() as f64;
    let mut abs = 0.0;
    let mut spread = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        abs += (x - y).abs();
        spread += (2.0 * (i as f64 + 1.0) - n - 1.0) * x;
    }
    (abs / n - spread / (n * n)).max(0.0)
}

/// Median with the lower-middle convention for even sizes.
pub fn sample_median(sample: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let mut s = sample.to_vec();
    sort_f64(&mut s);
    Ok(s[(s.len() - 1) / 2])
}

/// Absolute error of the predictive median.
pub fn abs_error(median: f64, y: f64) -> f64 {
    (median - y).abs()
}

pub fn abs_error_sample(sample: &[f64], y: f64) -> Result<f64> {
    Ok(abs_error(sample_median(sample)?, y))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Energy score of a sample of `d`-vectors at `y`.
pub fn energy_score(sample: &[Vec<f64>], y: &[f64]) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let d = y.len();
    if let Some(bad) = sample.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let n = sample.len() as f64;
    let first = sample.iter().map(|x| euclid(x, y)).sum::<f64>() / n;
    let mut pairs = 0.0;
    for (i, xi) in sample.iter().enumerate() {
        for xj in &sample[i + 1..] {
            pairs += euclid(xi, xj);
        }
    }
    // each unordered pair appears twice in the double sum
    Ok((first - pairs / (n * n)).max(0.0))
}

/// Rank of `y` among the pooled ensemble and observation, in `1..=m+1`,
/// with ties resolved at random.
pub fn verification_rank<R: Rng + ?Sized>(ensemble: &[f64], y: f64, rng: &mut R) -> usize {
    let below = ensemble.iter().filter(|&&x| x < y).count();
    let ties = ensemble.iter().filter(|&&x| x == y).count();
    below + 1 + rng.random_range(0..=ties)
}

pub fn pit_gaussian(mu: f64, sigma: f64, y: f64) -> f64 {
    std_normal_cdf((y - mu) / sigma)
}

/// `(rank − 1) / N` for a sample of size `N`.
pub fn normalized_rank<R: Rng + ?Sized>(sample: &[f64], y: f64, rng: &mut R) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("sample"));
    }
    Ok((verification_rank(sample, y, rng) - 1) as f64 / sample.len() as f64)
}

/// Multivariate rank of `y` among `ensemble`, in `1..=N+1`. Each pooled
/// vector gets a pre-rank counting the pooled vectors it weakly dominates in
/// every coordinate; the observation's rank is its position among the
/// pre-ranks, ties resolved at random.
pub fn multivariate_rank<R: Rng + ?Sized>(ensemble: &[Vec<f64>], y: &[f64], rng: &mut R) -> Result<usize> {
    let d = y.len();
    if let Some(bad) = ensemble.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    let mut pooled: Vec<&[f64]> = ensemble.iter().map(Vec::as_slice).collect();
    pooled.push(y);
    let dominates = |v: &[f64], u: &[f64]| u.iter().zip(v).all(|(a, b)| a <= b);
    let pre: Vec<usize> = pooled
        .iter()
        .map(|v| pooled.iter().filter(|u| dominates(v, u)).count())
        .collect();
    let obs = *pre.last().unwrap();
    let members = &pre[..pre.len() - 1];
    let below = members.iter().filter(|&&p| p < obs).count();
    let ties = members.iter().filter(|&&p| p == obs).count();
    Ok(below + 1 + rng.random_range(0..=ties))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramSpec {
    pub bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        HistogramSpec { bins: 17 }
    }
}

/// Bin of `rank` (1-based, out of `n_ranks`) when consecutive ranks are
/// grouped. If the ranks do not split evenly, the last bins take one extra
/// rank each.
pub fn rank_bin(rank: usize, n_ranks: usize, bins: usize) -> usize {
    let base = n_ranks / bins;
    let rem = n_ranks % bins;
    let plain = bins - rem;
    let r = rank - 1;
    if base == 0 {
        // fewer ranks than bins: the ranks occupy the last bins
        return plain + r;
    }
    if r < plain * base {
        r / base
    } else {
        plain + (r - plain * base) / (base + 1)
    }
}

/// Normalized histogram of ranks in `1..=n_ranks`.
pub fn rank_histogram(ranks: &[usize], n_ranks: usize, spec: &HistogramSpec) -> Result<Vec<f64>> {
    if spec.bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if ranks.is_empty() {
        return Err(Error::Empty("ranks"));
    }
    if let Some(&r) = ranks.iter().find(|&&r| r == 0 || r > n_ranks) {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n_ranks}")));
    }
    let mut counts = vec![0.0; spec.bins];
    for &r in ranks {
        counts[rank_bin(r, n_ranks, spec.bins)] += 1.0;
    }
    Ok(normalize(counts))
}

/// Normalized histogram of values in `[0, 1]` on equal-width bins; 1 falls
/// in the last bin.
pub fn unit_histogram(values: &[f64], spec: &HistogramSpec) -> Result<Vec<f64>> {
    if spec.bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::Empty("values"));
    }
    let mut counts = vec![0.0; spec.bins];
    for &v in values {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!("value {v} outside [0, 1]")));
        }
        let b = ((v * spec.bins as f64) as usize).min(spec.bins - 1);
        counts[b] += 1.0;
    }
    Ok(normalize(counts))
}

fn normalize(mut counts: Vec<f64>) -> Vec<f64> {
    let total: f64 = counts.iter().sum();
    counts.iter_mut().for_each(|c| *c /= total);
    counts
}

/// Pearson chi-square test of equal bin probabilities; returns
/// `(statistic, p-value)` for raw counts.
pub fn chi_square_uniformity(counts: &[usize]) -> Result<(f64, f64)> {
    if counts.len() < 2 {
        return Err(Error::InvalidArgument("need at least two bins".into()));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::Empty("counts"));
    }
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((stat, dist.sf(stat)))
}

/// Raw counts of ranks or unit values per bin, for the chi-square test.
pub fn unit_counts(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        counts[((v * bins as f64) as usize).min(bins - 1)] += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DmResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_difference: f64,
    pub n: usize,
    pub lag: usize,
    /// The differential has zero variance but a nonzero mean.
    pub degenerate_variance: bool,
}

/// Diebold-Mariano test of equal mean score, `d_t = a_t − b_t`, with a
/// rectangular-kernel long-run variance truncated at `lag`.
///
/// If the truncated estimate is not positive, the lag-0 variance is used.
pub fn dm_test(a: &[f64], b: &[f64], lag: usize) -> Result<DmResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 5 {
        return Err(Error::InvalidArgument(format!("need at least 5 paired scores, got {n}")));
    }
    if lag >= n {
        return Err(Error::InvalidArgument(format!("lag {lag} must be below {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let autocov = |k: usize| (k..n).map(|t| (d[t] - mean) * (d[t - k] - mean)).sum::<f64>() / nf;
    let gamma0 = autocov(0);
    let mut var = gamma0 + 2.0 * (1..=lag).map(autocov).sum::<f64>();
    if !(var > 0.0) {
        var = gamma0;
    }
    let result = |statistic: f64, p_value: f64, degenerate_variance: bool| DmResult {
        statistic,
        p_value,
        mean_difference: mean,
        n,
        lag,
        degenerate_variance,
    };
    if !(var > 0.0) {
        return Ok(if mean == 0.0 {
            result(0.0, 1.0, false)
        } else {
            result(mean.signum() * f64::INFINITY, 0.0, true)
        });
    }
    let statistic = mean / (var / nf).sqrt();
    let p_value = 2.0 * std_normal_cdf(-statistic.abs());
    Ok(result(statistic, p_value, false))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub date: NaiveDate,
    pub site: String,
    pub method: String,
    pub score: String,
    pub value: f64,
}

/// Long-format score table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSeries {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSeries {
    pub fn push(&mut self, date: NaiveDate, site: &str, method: &str, score: &str, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "{score} for {method} at {site} on {date} is not finite"
            )));
        }
        self.entries.push(ScoreEntry {
            date,
            site: site.to_string(),
            method: method.to_string(),
            score: score.to_string(),
            value,
        });
        Ok(())
    }

    pub fn extend(&mut self, other: ScoreSeries) {
        self.entries.extend(other.entries);
    }

    fn select<'a>(&'a self, method: &'a str, score: &'a str) -> impl Iterator<Item = &'a ScoreEntry> + 'a {
        self.entries
            .iter()
            .filter(move |e| e.method == method && e.score == score)
    }

    pub fn mean(&self, method: &str, score: &str) -> Option<f64> {
        let (sum, n) = self.select(method, score).fold((0.0, 0usize), |(s, n), e| (s + e.value, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    /// Mean over sites for every date, in date order.
    pub fn daily_means(&self, method: &str, score: &str) -> Vec<(NaiveDate, f64)> {
        let mut by_date: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
        for e in self.select(method, score) {
            let slot = by_date.entry(e.date).or_insert((0.0, 0));
            slot.0 += e.value;
            slot.1 += 1;
        }
        by_date.into_iter().map(|(d, (s, n))| (d, s / n as f64)).collect()
    }

    /// Values in `(date, site)` order.
    pub fn values(&self, method: &str, score: &str) -> Vec<((NaiveDate, String), f64)> {
        let mut v: Vec<((NaiveDate, String), f64)> = self
            .select(method, score)
            .map(|e| ((e.date, e.site.clone()), e.value))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }

    pub fn methods(&self) -> Vec<String> {
        let mut m: Vec<String> = self.entries.iter().map(|e| e.method.clone()).collect();
        m.sort();
        m.dedup();
        m
    }

    /// `date,site,method,score,value`
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["date", "site", "method", "score", "value"])?;
        for e in &self.entries {
            w.write_record([
                e.date.to_string(),
                e.site.clone(),
                e.method.clone(),
                e.score.clone(),
                e.value.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<scores>", e))?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut out = ScoreSeries::default();
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let parse_err = |message: String| Error::Parse { line: k as u64 + 2, message };
            if rec.len() != 5 {
                return Err(parse_err(format!("expected 5 fields, found {}", rec.len())));
            }
            let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
                .map_err(|e| parse_err(format!("date {:?}: {e}", &rec[0])))?;
            let value: f64 = rec[4]
                .parse()
                .map_err(|e| parse_err(format!("value {:?}: {e}", &rec[4])))?;
            out.push(date, &rec[1], &rec[2], &rec[3], value)?;
        }
        Ok(out)
    }
}

/// `method,bin,frequency` with 1-based bins.
pub fn write_histograms_csv<W: Write>(writer: W, histograms: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "bin", "frequency"])?;
    for (method, h) in histograms {
        for (b, f) in h.iter().enumerate() {
            w.write_record([method.clone(), (b + 1).to_string(), f.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io("<histograms>", e))?;
    Ok(())
}
