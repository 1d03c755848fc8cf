//! Accuracy, ranking and bias metrics, the left-tail z-test and the
//! before/after percentage comparison.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bias::{histogram, HistogramBin, UserBiasScore};
use crate::error::{Error, Result};
use crate::stats::{mean, normal_cdf, sample_std};

fn clamp_prediction(v: f64, scale_max: f64) -> f64 {
    v.clamp(1.0, scale_max)
}

/// Root mean squared error over `(prediction, truth)` pairs, predictions
/// clamped to `[1, scale_max]` first.
pub fn rmse(pairs: &[(f64, f64)], scale_max: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("RMSE of an empty set".into()));
    }
    let se: f64 = pairs
        .iter()
        .map(|&(p, t)| (clamp_prediction(p, scale_max) - t).powi(2))
        .sum();
    Ok((se / pairs.len() as f64).sqrt())
}

/// Mean absolute error, same conventions as [`rmse`].
pub fn mae(pairs: &[(f64, f64)], scale_max: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Metric("MAE of an empty set".into()));
    }
    let ae: f64 = pairs
        .iter()
        .map(|&(p, t)| (clamp_prediction(p, scale_max) - t).abs())
        .sum();
    Ok(ae / pairs.len() as f64)
}

/// Smallest rating counted as relevant by default: `⌈0.8·R⌉`.
pub fn default_relevance_threshold(scale_max: f64) -> f64 {
    (0.8 * scale_max).ceil()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gain {
    /// Every relevant item has gain 1.
    #[default]
    Binary,
    /// A relevant item's gain is its held-out rating.
    Graded,
}

/// Relevant held-out items and their gains.
pub fn relevant_gains(held_out: &[(u32, f64)], threshold: f64, gain: Gain) -> BTreeMap<u32, f64> {
    held_out
        .iter()
        .filter(|e| e.1 >= threshold)
        .map(|&(i, r)| {
            let g = match gain {
                Gain::Binary => 1.0,
                Gain::Graded => r,
            };
            (i, g)
        })
        .collect()
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// NDCG of the first `n` entries of `ranked`. The ideal ranking fills
/// `min(n, |relevant|)` slots with the largest gains. `None` when nothing is
/// relevant.
pub fn ndcg_at_n(ranked: &[u32], relevant: &BTreeMap<u32, f64>, n: usize) -> Result<Option<f64>> {
    if n < 1 {
        return Err(Error::Config("NDCG list length must be >= 1".into()));
    }
    if relevant.is_empty() {
        return Ok(None);
    }
    let dcg: f64 = ranked
        .iter()
        .take(n)
        .enumerate()
        .map(|(k, i)| relevant.get(i).copied().unwrap_or(0.0) * discount(k + 1))
        .sum();
    let mut ideal: Vec<f64> = relevant.values().copied().collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg: f64 = ideal
        .iter()
        .take(n)
        .enumerate()
        .map(|(k, g)| g * discount(k + 1))
        .sum();
    Ok(Some(dcg / idcg))
}

/// Reciprocal rank of the first relevant entry, 0 when none is listed.
/// `None` when nothing is relevant.
pub fn mrr(ranked: &[u32], relevant: &BTreeMap<u32, f64>) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    Some(
        ranked
            .iter()
            .position(|i| relevant.contains_key(i))
            .map_or(0.0, |k| 1.0 / (k + 1) as f64),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct BiasAggregate {
    pub mean: f64,
    /// `None` with a single defined value.
    pub std: Option<f64>,
    pub n_defined: usize,
    pub n_undefined: usize,
    pub histogram: Vec<HistogramBin>,
}

/// Mean, sample standard deviation and histogram of the defined scores.
pub fn aggregate_bias<'a, I>(scores: I, bin_width: f64) -> Result<BiasAggregate>
where
    I: IntoIterator<Item = &'a UserBiasScore>,
{
    let mut values = Vec::new();
    let mut n_undefined = 0;
    for s in scores {
        if s.defined {
            values.push(s.theta);
        } else {
            n_undefined += 1;
        }
    }
    let mean =
        mean(&values).ok_or_else(|| Error::Metric("no user has a defined log-bias".into()))?;
    Ok(BiasAggregate {
        mean,
        std: sample_std(&values),
        n_defined: values.len(),
        n_undefined,
        histogram: histogram(&values, bin_width)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub x_bar: f64,
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    pub z: f64,
    pub p: f64,
}

/// Left-tail test of a treated mean `x_bar` against a baseline `(mu, sigma)`:
/// `z = (x̄ − μ)/(σ/√n)`, `p = Φ(z)`.
pub fn z_test_left(x_bar: f64, mu: f64, sigma: f64, n: usize) -> Result<SignificanceResult> {
    if n < 2 {
        return Err(Error::Metric(format!("z-test needs n >= 2, got {n}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Metric(format!(
            "z-test needs sigma > 0, got {sigma}"
        )));
    }
    if !x_bar.is_finite() || !mu.is_finite() {
        return Err(Error::Metric("z-test needs finite means".into()));
    }
    let z = (x_bar - mu) / (sigma / (n as f64).sqrt());
    Ok(SignificanceResult {
        x_bar,
        mu,
        sigma,
        n,
        z,
        p: normal_cdf(z),
    })
}

/// Paired left-tail test on per-user differences `after − before`, over
/// users whose score is defined in both. The null mean difference is 0.
pub fn paired_z_test(
    before: &[UserBiasScore],
    after: &[UserBiasScore],
) -> Result<SignificanceResult> {
    if before.len() != after.len() {
        return Err(Error::Metric(format!(
            "paired test needs aligned scores, got {} and {}",
            before.len(),
            after.len()
        )));
    }
    let diffs: Vec<f64> = before
        .iter()
        .zip(after)
        .filter(|(b, a)| b.defined && a.defined)
        .map(|(b, a)| a.theta - b.theta)
        .collect();
    let x_bar =
        mean(&diffs).ok_or_else(|| Error::Metric("no user is defined in both cells".into()))?;
    let sigma = sample_std(&diffs).unwrap_or(0.0);
    z_test_left(x_bar, 0.0, sigma, diffs.len())
}

/// Summary of one (algorithm, mode) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mean_log_bias: f64,
    /// Sample standard deviation of the per-user log-bias.
    pub std_log_bias: Option<f64>,
    /// Users with a defined log-bias.
    pub n_bias_users: usize,
    pub rmse: f64,
    pub mae: f64,
    pub ndcg: f64,
    pub mrr: f64,
    /// Test users evaluated.
    pub n_users: usize,
    /// Identifies dataset, split and algorithm; reports are comparable only
    /// when it matches.
    pub fingerprint: String,
}

impl MetricsReport {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.mean_log_bias, self.rmse, self.mae, self.ndcg, self.mrr]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.std_log_bias.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Metric("report contains a non-finite value".into()));
        }
        if self.n_users == 0 {
            return Err(Error::Metric("report covers no users".into()));
        }
        Ok(())
    }
}

/// `key=value` lines; floats use the shortest exact representation.
impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "fingerprint={}", self.fingerprint)?;
        writeln!(f, "n_users={}", self.n_users)?;
        writeln!(f, "n_bias_users={}", self.n_bias_users)?;
        writeln!(f, "mean_log_bias={}", self.mean_log_bias)?;
        match self.std_log_bias {
            Some(s) => writeln!(f, "std_log_bias={s}")?,
            None => writeln!(f, "std_log_bias=NA")?,
        }
        writeln!(f, "rmse={}", self.rmse)?;
        writeln!(f, "mae={}", self.mae)?;
        writeln!(f, "ndcg={}", self.ndcg)?;
        writeln!(f, "mrr={}", self.mrr)
    }
}

impl FromStr for MetricsReport {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for line in s
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("malformed report line {line:?}")))?;
            kv.insert(k.trim(), v.trim());
        }
        let get = |k: &str| {
            kv.get(k)
                .copied()
                .ok_or_else(|| Error::Input(format!("report lacks {k}")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| Error::Input(format!("report field {k} is not a number")))
        };
        let count = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Input(format!("report field {k} is not a count")))
        };
        let std_log_bias = match get("std_log_bias")? {
            "NA" => None,
            _ => Some(num("std_log_bias")?),
        };
        Ok(Self {
            mean_log_bias: num("mean_log_bias")?,
            std_log_bias,
            n_bias_users: count("n_bias_users")?,
            rmse: num("rmse")?,
            mae: num("mae")?,
            ndcg: num("ndcg")?,
            mrr: num("mrr")?,
            n_users: count("n_users")?,
            fingerprint: get("fingerprint")?.to_string(),
        })
    }
}

/// Percent changes from a before report to an after report. Bias is reported
/// as a reduction, the others as losses `(after − before)/before·100`, so a
/// drop in NDCG or MRR shows as a negative loss. `None` when `before` is 0
/// and the value changed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentComparison {
    pub bias_reduction_pct: Option<f64>,
    pub rmse_loss_pct: Option<f64>,
    pub mae_loss_pct: Option<f64>,
    pub ndcg_loss_pct: Option<f64>,
    pub mrr_loss_pct: Option<f64>,
}

pub fn reduction_pct(before: f64, after: f64) -> Option<f64> {
    loss_pct(before, after).map(|v| -v)
}

pub fn loss_pct(before: f64, after: f64) -> Option<f64> {
    if before == after {
        Some(0.0)
    } else if before == 0.0 {
        None
    } else {
        Some((after - before) / before * 100.0)
    }
}

pub fn compare(before: &MetricsReport, after: &MetricsReport) -> Result<ExperimentComparison> {
    if before.fingerprint != after.fingerprint {
        return Err(Error::FingerprintMismatch(
            before.fingerprint.clone(),
            after.fingerprint.clone(),
        ));
    }
    Ok(ExperimentComparison {
        bias_reduction_pct: reduction_pct(before.mean_log_bias, after.mean_log_bias),
        rmse_loss_pct: loss_pct(before.rmse, after.rmse),
        mae_loss_pct: loss_pct(before.mae, after.mae),
        ndcg_loss_pct: loss_pct(before.ndcg, after.ndcg),
        mrr_loss_pct: loss_pct(before.mrr, after.mrr),
    })
}

/// Two-decimal rendering used in reports; `NA` for undefined values.
pub fn format_pct(v: Option<f64>) -> String {
    match v {
        // avoids "-0.00"
        Some(v) if v.abs() < 0.005 => "0.00".into(),
        Some(v) => format!("{v:.2}"),
        None => "NA".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn paired_test_uses_jointly_defined_differences() {
        let before = [
            score(0.3, true),
            score(0.2, true),
            score(0.4, true),
            score(9.0, false),
        ];
        let after = [
            score(0.1, true),
            score(0.1, true),
            score(0.1, true),
            score(0.0, true),
        ];
        let r = paired_z_test(&before, &after).unwrap();
        let d = [-0.2, -0.1, -0.3];
        let m = -0.2;
        let sd = (d.iter().map(|x: &f64| (x - m) * (x - m)).sum::<f64>() / 2.0).sqrt();
        assert_eq!(r.n, 3);
        assert!((r.x_bar - m).abs() < 1e-12);
        assert!((r.z - m / (sd / 3f64.sqrt())).abs() < 1e-9);
        assert!(paired_z_test(&before[..1], &after).is_err());
    }

    fn set(items: &[u32]) -> BTreeMap<u32, f64> {
        items.iter().map(|&i| (i, 1.0)).collect()
    }

    #[test]
    fn rmse_mae_worked_examples() {
        let pairs = [(3.0, 1.0), (5.0, 5.0)];
        assert!((rmse(&pairs, 5.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((mae(&pairs, 5.0).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rmse(&[(4.0, 4.0), (2.0, 2.0)], 5.0).unwrap(), 0.0);
        assert_eq!(rmse(&[(1.0, 3.0)], 5.0).unwrap(), 2.0);
        assert_eq!(mae(&[(1.0, 3.0)], 5.0).unwrap(), 2.0);
        assert!(rmse(&[], 5.0).is_err() && mae(&[], 5.0).is_err());
    }

    #[test]
    fn predictions_are_clamped() {
        assert_eq!(mae(&[(7.0, 5.0), (-2.0, 1.0)], 5.0).unwrap(), 0.0);
    }

    #[test]
    fn ndcg_worked_example() {
        let v = ndcg_at_n(&[1, 2, 3], &set(&[1, 3]), 3).unwrap().unwrap();
        let expected = 1.5 / (1.0 + 1.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
        assert!((v - 0.919_720).abs() < 1e-6);
    }

    #[test]
    fn ndcg_edge_cases() {
        assert_eq!(ndcg_at_n(&[4, 5], &set(&[4, 5]), 10).unwrap(), Some(1.0));
        assert_eq!(ndcg_at_n(&[4, 5], &set(&[]), 10).unwrap(), None);
        assert!(ndcg_at_n(&[4], &set(&[4]), 0).is_err());
        // the cut-off limits both the list and the ideal slots
        assert_eq!(
            ndcg_at_n(&[4, 5, 6], &set(&[4, 6, 7]), 1).unwrap(),
            Some(1.0)
        );
    }

    #[test]
    fn graded_gains() {
        let g = relevant_gains(&[(1, 5.0), (2, 4.0), (3, 2.0)], 4.0, Gain::Graded);
        assert_eq!(g.len(), 2);
        let v = ndcg_at_n(&[2, 1], &g, 2).unwrap().unwrap();
        let expected = (4.0 + 5.0 / 3f64.log2()) / (5.0 + 4.0 / 3f64.log2());
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn mrr_definition() {
        assert_eq!(mrr(&[9, 3, 4], &set(&[3])), Some(0.5));
        assert_eq!(mrr(&[9, 8], &set(&[3])), Some(0.0));
        assert_eq!(mrr(&[9, 8], &set(&[])), None);
    }

    #[test]
    fn threshold_default() {
        assert_eq!(default_relevance_threshold(5.0), 4.0);
        assert_eq!(default_relevance_threshold(10.0), 8.0);
    }

    fn score(theta: f64, defined: bool) -> UserBiasScore {
        UserBiasScore {
            theta,
            defined,
            ..Default::default()
        }
    }

    #[test]
    fn aggregate_bias_cases() {
        let a = aggregate_bias(
            &[score(0.1, true), score(0.3, true), score(0.0, false)],
            0.05,
        )
        .unwrap();
        assert!((a.mean - 0.2).abs() < 1e-12);
        assert_eq!((a.n_defined, a.n_undefined), (2, 1));
        assert_eq!(a.histogram.iter().map(|b| b.count).sum::<usize>(), 2);
        let single = aggregate_bias(&[score(0.4, true)], 0.05).unwrap();
        assert_eq!(single.std, None);
        assert!(aggregate_bias(&[score(0.0, false)], 0.05).is_err());
    }

    #[test]
    fn z_test_reference_rows() {
        let r = z_test_left(0.079, 0.137, 0.307, 8958).unwrap();
        assert!((r.z - -17.8818).abs() < 1e-3, "{}", r.z);
        assert!(r.p < 1e-5);
        let r = z_test_left(0.076, 0.122, 0.343, 75).unwrap();
        assert!((r.z - -1.16139).abs() < 1e-4, "{}", r.z);
        assert!((r.p - 0.12274).abs() < 1e-4, "{}", r.p);
        let r = z_test_left(0.2, 0.2, 1.0, 10).unwrap();
        assert_eq!(r.z, 0.0);
        assert!((r.p - 0.5).abs() < 1e-7);
    }

    #[test]
    fn z_test_rejects_degenerate_input() {
        assert!(z_test_left(0.1, 0.2, 0.0, 10).is_err());
        assert!(z_test_left(0.1, 0.2, 0.3, 1).is_err());
    }

    fn report(bias: f64, rmse: f64) -> MetricsReport {
        MetricsReport {
            mean_log_bias: bias,
            std_log_bias: Some(0.3),
            n_bias_users: 10,
            rmse,
            mae: 0.5,
            ndcg: 0.2,
            mrr: 0.3,
            n_users: 10,
            fingerprint: "f".into(),
        }
    }

    #[test]
    fn compare_reference_pairs() {
        let c = compare(&report(0.137, 0.808), &report(0.079, 0.871)).unwrap();
        assert_eq!(format_pct(c.rmse_loss_pct), "7.80");
        assert_eq!(format_pct(c.bias_reduction_pct), "42.34");
        let same = compare(&report(0.1, 0.9), &report(0.1, 0.9)).unwrap();
        for v in [
            same.bias_reduction_pct,
            same.rmse_loss_pct,
            same.mae_loss_pct,
            same.ndcg_loss_pct,
            same.mrr_loss_pct,
        ] {
            assert_eq!(v, Some(0.0));
        }
        let mut other = report(0.1, 0.9);
        other.fingerprint = "g".into();
        assert!(matches!(
            compare(&report(0.1, 0.9), &other),
            Err(Error::FingerprintMismatch(..))
        ));
    }

    #[test]
    fn report_text_round_trip() {
        let r = report(0.123_456_789_012_345_67, 0.8);
        let back: MetricsReport = r.to_string().parse().unwrap();
        assert_eq!(back, r);
        let mut r = r;
        r.std_log_bias = None;
        assert_eq!(r.to_string().parse::<MetricsReport>().unwrap(), r);
    }

    /// Best DCG over every ordering of the relevant and listed items.
    fn brute_idcg(relevant: &BTreeMap<u32, f64>, n: usize) -> f64 {
        fn permute(items: &mut Vec<f64>, k: usize, n: usize, best: &mut f64) {
            if k == items.len() {
                let dcg: f64 = items
                    .iter()
                    .take(n)
                    .enumerate()
                    .map(|(r, g)| g / ((r + 2) as f64).log2())
                    .sum();
                *best = best.max(dcg);
                return;
            }
            for j in k..items.len() {
                items.swap(k, j);
                permute(items, k + 1, n, best);
                items.swap(k, j);
            }
        }
        let mut gains: Vec<f64> = relevant.values().copied().collect();
        let mut best = 0.0;
        permute(&mut gains, 0, n, &mut best);
        best
    }

    proptest! {
        #[test]
        fn ranking_metrics_match_brute_force(
            ranked in Just((0u32..5).collect::<Vec<_>>()).prop_shuffle(),
            ratings in prop::collection::vec(1u32..=5, 5),
            n in 1usize..6,
            graded: bool,
        ) {
            let held: Vec<(u32, f64)> = ratings.iter().enumerate().map(|(i, &r)| (i as u32, r as f64)).collect();
            let gain = if graded { Gain::Graded } else { Gain::Binary };
            let rel = relevant_gains(&held, 4.0, gain);
            let got = ndcg_at_n(&ranked, &rel, n).unwrap();
            if rel.is_empty() {
                prop_assert!(got.is_none());
            } else {
                let dcg: f64 = ranked.iter().take(n).enumerate()
                    .map(|(r, i)| rel.get(i).copied().unwrap_or(0.0) / ((r + 2) as f64).log2())
                    .sum();
                let v = got.unwrap();
                prop_assert!((v - dcg / brute_idcg(&rel, n)).abs() < 1e-12);
                prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
                let first = ranked.iter().position(|i| rel.contains_key(i)).unwrap();
                prop_assert_eq!(mrr(&ranked, &rel), Some(1.0 / (first + 1) as f64));
            }
        }

        #[test]
        fn rmse_at_least_mae(pairs in prop::collection::vec((1.0f64..5.0, 1.0f64..5.0), 1..25)) {
            let r = rmse(&pairs, 5.0).unwrap();
            let m = mae(&pairs, 5.0).unwrap();
            prop_assert!(r + 1e-12 >= m);
            let naive = (pairs.iter().map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pairs.len() as f64).sqrt();
            prop_assert!((r - naive).abs() < 1e-12);
        }

        #[test]
        fn z_test_is_antisymmetric(d in -1.0f64..1.0, sigma in 0.01f64..2.0, n in 2usize..10_000) {
            let a = z_test_left(0.5 + d, 0.5, sigma, n).unwrap();
            let b = z_test_left(0.5 - d, 0.5, sigma, n).unwrap();
            prop_assert!((a.z + b.z).abs() < 1e-9 * a.z.abs().max(1.0));
            prop_assert!((a.p - (1.0 - b.p)).abs() < 1e-7);
        }

        #[test]
        fn percentages_match_spreadsheet_formula(
            b in 0.01f64..2.0, a in 0.01f64..2.0,
        ) {
            let mut before = report(b, b);
            let mut after = report(a, a);
            before.ndcg = b;
            after.ndcg = a;
            let c = compare(&before, &after).unwrap();
            let loss = 100.0 * (a - b) / b;
            prop_assert!((c.rmse_loss_pct.unwrap() - loss).abs() < 1e-9);
            prop_assert!((c.ndcg_loss_pct.unwrap() - loss).abs() < 1e-9);
            prop_assert!((c.bias_reduction_pct.unwrap() + loss).abs() < 1e-9);
        }
    }
}
