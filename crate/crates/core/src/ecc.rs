//! Ensemble copula coupling: reorder postprocessed per-site samples so they
//! inherit the rank structure of the raw ensemble across sites.

use std::io::Write;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::stats::sort_f64;

/// Ranks of the raw members at one site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankPermutation {
    /// `positions[k]` is the 0-based rank of member `k` among the raw values.
    pub positions: Vec<usize>,
}

impl RankPermutation {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// 1-based ranks.
    pub fn ranks(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p + 1).collect()
    }
}

/// Ranks of `raw` with ties resolved at random.
pub fn rank_permutation<R: Rng + ?Sized>(raw: &[f64], rng: &mut R) -> Result<RankPermutation> {
    if raw.is_empty() {
        return Err(Error::Empty("raw ensemble"));
    }
    let keys: Vec<u64> = raw.iter().map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..raw.len()).collect();
    order.sort_by(|&i, &j| raw[i].total_cmp(&raw[j]).then(keys[i].cmp(&keys[j])));
    let mut positions = vec![0; raw.len()];
    for (rank, &k) in order.iter().enumerate() {
        positions[k] = rank;
    }
    Ok(RankPermutation { positions })
}

/// Member `k` of the output is the `π(k)`-th smallest value of `sample`.
pub fn apply_permutation(perm: &RankPermutation, sample: &[f64]) -> Result<Vec<f64>> {
    if sample.len() != perm.len() {
        return Err(Error::DimensionMismatch {
            expected: perm.len(),
            found: sample.len(),
        });
    }
    let mut sorted = sample.to_vec();
    sort_f64(&mut sorted);
    Ok(perm.positions.iter().map(|&p| sorted[p]).collect())
}

/// ECC-Q at one site: the quantile sample reordered by the ranks of `raw`.
pub fn ecc_q<R: Rng + ?Sized>(raw: &[f64], sample: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    if raw.len() != sample.len() {
        return Err(Error::DimensionMismatch {
            expected: raw.len(),
            found: sample.len(),
        });
    }
    apply_permutation(&rank_permutation(raw, rng)?, sample)
}

/// MEMOS ECC at one site: `sample` holds `n` consecutive groups of `m`
/// values; each group is reordered with the same raw-ensemble ranks.
pub fn ecc_memos(perm: &RankPermutation, sample: &[f64]) -> Result<Vec<f64>> {
    let m = perm.len();
    if m == 0 || sample.is_empty() || sample.len() % m != 0 {
        return Err(Error::InvalidArgument(format!(
            "sample of {} values cannot be split into subsamples of {m}",
            sample.len()
        )));
    }
    let mut out = Vec::with_capacity(sample.len());
    for group in sample.chunks(m) {
        out.extend(apply_permutation(perm, group)?);
    }
    Ok(out)
}

/// Independent uniform random permutation of the sample at every site.
pub fn independence_shuffle<R: Rng + ?Sized>(sites: &mut [Vec<f64>], rng: &mut R) {
    for s in sites.iter_mut() {
        s.shuffle(rng);
    }
}

/// Joint sample for one date: `values[site][member]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultivariateEnsemble {
    pub date: NaiveDate,
    pub sites: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl MultivariateEnsemble {
    pub fn size(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// Member `k` as a vector over sites.
    pub fn member(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[k]).collect()
    }

    pub fn members(&self) -> Vec<Vec<f64>> {
        (0..self.size()).map(|k| self.member(k)).collect()
    }
}

/// `date,site,member,value` with 1-based member indices.
pub fn write_ensembles_csv<W: Write>(writer: W, ensembles: &[MultivariateEnsemble]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["date", "site", "member", "value"])?;
    for e in ensembles {
        let date = e.date.to_string();
        for (site, vals) in e.sites.iter().zip(&e.values) {
            for (k, v) in vals.iter().enumerate() {
                w.write_record([date.as_str(), site, &(k + 1).to_string(), &v.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io("<ensembles>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn rank_examples() {
        let p = rank_permutation(&[3.0, 1.0, 2.0], &mut rng(0)).unwrap();
        assert_eq!(p.ranks(), vec![3, 1, 2]);
        let p = rank_permutation(&[-1.0, 0.0, 4.0, 9.0], &mut rng(0)).unwrap();
        assert_eq!(p.ranks(), vec![1, 2, 3, 4]);
        assert!(rank_permutation(&[], &mut rng(0)).is_err());
    }

    #[test]
    fn ties_are_uniform() {
        let mut counts = [0usize; 3];
        let mut r = rng(1);
        for _ in 0..6000 {
            let p = rank_permutation(&[5.0, 5.0, 5.0], &mut r).unwrap();
            counts[p.positions[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 6000.0 - 1.0 / 3.0).abs() < 0.03, "{counts:?}");
        }
    }

    #[test]
    fn ecc_q_examples() {
        let out = ecc_q(&[3.0, 1.0, 2.0], &[10.0, 20.0, 30.0], &mut rng(0)).unwrap();
        assert_eq!(out, vec![30.0, 10.0, 20.0]);
        assert_eq!(ecc_q(&[7.0], &[1.5], &mut rng(0)).unwrap(), vec![1.5]);
        assert!(ecc_q(&[1.0, 2.0], &[1.0], &mut rng(0)).is_err());
    }

    #[test]
    fn ecc_memos_groups() {
        let p = rank_permutation(&[3.0, 1.0, 2.0], &mut rng(0)).unwrap();
        let out = ecc_memos(&p, &[10.0, 20.0, 30.0, 10.0, 20.0, 30.0]).unwrap();
        assert_eq!(out, vec![30.0, 10.0, 20.0, 30.0, 10.0, 20.0]);
        assert_eq!(ecc_memos(&p, &[1.0, 2.0, 3.0]).unwrap(), apply_permutation(&p, &[1.0, 2.0, 3.0]).unwrap());
        assert!(ecc_memos(&p, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn shuffle_is_uniform_on_pairs() {
        let mut r = rng(2);
        let mut first_one = 0;
        for _ in 0..10_000 {
            let mut s = vec![vec![1.0, 2.0]];
            independence_shuffle(&mut s, &mut r);
            if s[0][0] == 1.0 {
                first_one += 1;
            }
        }
        assert!((first_one as f64 / 1e4 - 0.5).abs() < 0.02);
        let mut single = vec![vec![4.0]];
        independence_shuffle(&mut single, &mut r);
        assert_eq!(single, vec![vec![4.0]]);
    }

    #[test]
    fn csv_layout() {
        let e = MultivariateEnsemble {
            date: NaiveDate::from_ymd_opt(2010, 9, 1).unwrap(),
            sites: vec!["A".into(), "B".into()],
            values: vec![vec![1.0, 2.0], vec![3.5, 4.0]],
        };
        let mut buf = Vec::new();
        write_ensembles_csv(&mut buf, &[e]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "date,site,member,value");
        assert_eq!(lines[3], "2010-09-01,B,1,3.5");
        assert_eq!(lines.len(), 5);
    }

    fn sorted(v: &[f64]) -> Vec<f64> {
        let mut s = v.to_vec();
        sort_f64(&mut s);
        s
    }

    proptest! {
        #[test]
        fn raw_ensemble_is_invariant(raw in prop::collection::vec(-5i32..5, 1..30), seed in any::<u64>()) {
            let raw: Vec<f64> = raw.into_iter().map(f64::from).collect();
            let out = ecc_q(&raw, &sorted(&raw), &mut rng(seed)).unwrap();
            prop_assert_eq!(out, raw);
        }

        #[test]
        fn multisets_and_ranks_are_preserved(
            raw in prop::collection::vec(-50.0f64..50.0, 1..20),
            seed in any::<u64>(),
            groups in 1usize..4,
        ) {
            let m = raw.len();
            let mut r = rng(seed);
            let sample: Vec<f64> = (0..m * groups).map(|_| r.random_range(-10.0..10.0)).collect();
            let mut grouped = Vec::new();
            for g in sample.chunks(m) {
                grouped.extend(sorted(g));
            }
            let p = rank_permutation(&raw, &mut r).unwrap();
            let out = ecc_memos(&p, &grouped).unwrap();
            prop_assert_eq!(sorted(&out), sorted(&sample));
            for g in out.chunks(m) {
                for i in 0..m {
                    for j in 0..m {
                        if raw[i] < raw[j] {
                            prop_assert!(g[i] <= g[j]);
                        }
                    }
                }
                // reapplying the same permutation to the sorted group is idempotent
                prop_assert_eq!(apply_permutation(&p, &sorted(g)).unwrap(), g.to_vec());
            }
        }
    }
}
