//! Per-user log-bias estimation, debiasing and preference correction.
//!
//! For a user `u` with geometric-mean rating `r_ua` over advantaged items and
//! `r_ud` over disadvantaged items, the log-bias is `θ_u = ln(r_ua / r_ud)`.
//! Debiasing multiplies the user's disadvantaged ratings by `e^θ_u`; the
//! preference correction multiplies their predicted disadvantaged ratings by
//! `e^-θ_u`. Advantaged entries are never touched.

use std::path::Path;

use crate::dataset::{csv_writer, GroupLabel, RatingMatrix};
use crate::error::{Error, Result};

/// Geometric means of one user's ratings per group, with the group counts.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GroupMeans {
    pub advantaged: Option<f64>,
    pub disadvantaged: Option<f64>,
    /// Number of advantaged ratings.
    pub n: usize,
    /// Number of disadvantaged ratings.
    pub m: usize,
}

/// Geometric means computed as `exp(mean(ln r))`.
pub fn group_geometric_means<I>(ratings: I) -> GroupMeans
where
    I: IntoIterator<Item = (GroupLabel, f64)>,
{
    let (mut log_a, mut log_d) = (0.0, 0.0);
    let (mut n, mut m) = (0usize, 0usize);
    for (group, r) in ratings {
        match group {
            GroupLabel::Advantaged => {
                log_a += r.ln();
                n += 1;
            }
            GroupLabel::Disadvantaged => {
                log_d += r.ln();
                m += 1;
            }
        }
    }
    GroupMeans {
        advantaged: (n > 0).then(|| (log_a / n as f64).exp()),
        disadvantaged: (m > 0).then(|| (log_d / m as f64).exp()),
        n,
        m,
    }
}

/// Log-bias of one profile. `defined` is false (and `theta` is 0) when the
/// profile lacks one of the groups.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UserBiasScore {
    pub user: u32,
    pub theta: f64,
    pub defined: bool,
    pub m: usize,
    pub n: usize,
}

pub fn user_log_bias(user: u32, means: &GroupMeans) -> UserBiasScore {
    match (means.advantaged, means.disadvantaged) {
        (Some(a), Some(d)) => UserBiasScore {
            user,
            theta: a.ln() - d.ln(),
            defined: true,
            m: means.m,
            n: means.n,
        },
        _ => UserBiasScore {
            user,
            theta: 0.0,
            defined: false,
            m: means.m,
            n: means.n,
        },
    }
}

/// Log-bias of a rating row over item indices.
pub fn row_log_bias(user: u32, row: &[(u32, f64)], groups: &[GroupLabel]) -> UserBiasScore {
    user_log_bias(
        user,
        &group_geometric_means(row.iter().map(|&(i, r)| (groups[i as usize], r))),
    )
}

/// Per-user log-bias indexed by user. Users without an entry have no estimate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ThetaMap {
    scores: Vec<Option<UserBiasScore>>,
}

impl ThetaMap {
    pub fn new(n_users: usize) -> Self {
        Self {
            scores: vec![None; n_users],
        }
    }

    /// Estimates θ for every user from the rows of `matrix`.
    pub fn from_matrix(matrix: &RatingMatrix, groups: &[GroupLabel]) -> Self {
        Self {
            scores: matrix
                .rows()
                .iter()
                .enumerate()
                .map(|(u, row)| Some(row_log_bias(u as u32, row, groups)))
                .collect(),
        }
    }

    pub fn set(&mut self, score: UserBiasScore) {
        self.scores[score.user as usize] = Some(score);
    }

    pub fn get(&self, user: u32) -> Option<&UserBiasScore> {
        self.scores.get(user as usize).and_then(Option::as_ref)
    }

    /// θ used for transforms; undefined estimates contribute 0.
    pub fn theta(&self, user: u32) -> Option<f64> {
        self.get(user).map(|s| s.theta)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> impl Iterator<Item = &UserBiasScore> {
        self.scores.iter().flatten()
    }

    /// Same map with every θ forced to zero.
    pub fn zeroed(&self) -> Self {
        Self {
            scores: self
                .scores
                .iter()
                .map(|s| s.map(|s| UserBiasScore { theta: 0.0, ..s }))
                .collect(),
        }
    }

    /// Writes `user_id,theta,defined,m,n` for every user with an estimate.
    pub fn write(&self, path: impl AsRef<Path>, user_ids: &[String]) -> Result<()> {
        write_scores(path, self.scores(), user_ids)
    }
}

pub fn write_scores<'a, I>(path: impl AsRef<Path>, scores: I, user_ids: &[String]) -> Result<()>
where
    I: IntoIterator<Item = &'a UserBiasScore>,
{
    let path = path.as_ref();
    let mut w = csv_writer(path, b',')?;
    w.write_record(["user_id", "theta", "defined", "m", "n"])?;
    for s in scores {
        w.write_record([
            user_ids[s.user as usize].as_str(),
            &s.theta.to_string(),
            if s.defined { "true" } else { "false" },
            &s.m.to_string(),
            &s.n.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ratings after debiasing. Same shape as the source; disadvantaged entries
/// may exceed the rating scale and are deliberately left unclamped.
#[derive(Clone, Debug, PartialEq)]
pub struct DebiasedDataset {
    pub matrix: RatingMatrix,
    pub theta: ThetaMap,
}

/// `d_ui = r_ui · e^θ_u` on disadvantaged items, `d_ui = r_ui` otherwise.
pub fn debias_ratings(
    matrix: &RatingMatrix,
    groups: &[GroupLabel],
    theta: &ThetaMap,
    user_ids: &[String],
) -> Result<DebiasedDataset> {
    let mut rows = Vec::with_capacity(matrix.n_users());
    for (u, row) in matrix.rows().iter().enumerate() {
        if row.is_empty() {
            rows.push(Vec::new());
            continue;
        }
        let t = theta
            .theta(u as u32)
            .ok_or_else(|| Error::MissingTheta(user_ids[u].clone()))?;
        rows.push(debias_row(row, groups, t));
    }
    Ok(DebiasedDataset {
        matrix: RatingMatrix::new(matrix.n_items(), rows),
        theta: theta.clone(),
    })
}

pub fn debias_row(row: &[(u32, f64)], groups: &[GroupLabel], theta: f64) -> Vec<(u32, f64)> {
    let scale = theta.exp();
    row.iter()
        .map(|&(i, r)| match groups[i as usize] {
            GroupLabel::Advantaged => (i, r),
            GroupLabel::Disadvantaged => (i, r * scale),
        })
        .collect()
}

/// `r̃_ui = d̃_ui · e^-θ_u` on disadvantaged items, in place, for one user.
/// Re-ranking by the corrected values is left to the caller.
pub fn preference_correct_user(predictions: &mut [(u32, f64)], groups: &[GroupLabel], theta: f64) {
    let scale = (-theta).exp();
    for (i, v) in predictions.iter_mut() {
        if groups[*i as usize] == GroupLabel::Disadvantaged {
            *v *= scale;
        }
    }
}

/// Predicted ratings keyed by `(user, item)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionSet {
    pub entries: Vec<(u32, u32, f64)>,
}

pub fn preference_correct(
    predictions: &PredictionSet,
    theta: &ThetaMap,
    groups: &[GroupLabel],
    user_ids: &[String],
) -> Result<PredictionSet> {
    let entries = predictions
        .entries
        .iter()
        .map(|&(u, i, v)| {
            let t = theta
                .theta(u)
                .ok_or_else(|| Error::MissingTheta(user_ids[u as usize].clone()))?;
            let v = match groups[i as usize] {
                GroupLabel::Advantaged => v,
                GroupLabel::Disadvantaged => v * (-t).exp(),
            };
            Ok((u, i, v))
        })
        .collect::<Result<_>>()?;
    Ok(PredictionSet { entries })
}

/// Ordered recommendations for one user, with the predicted rating used to
/// rank each item.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecommendationProfile {
    pub user: u32,
    pub items: Vec<(u32, f64)>,
    /// Fewer candidates than requested.
    pub short: bool,
}

/// Log-bias of a recommendation profile over its predicted ratings.
///
/// Predictions must be positive; a profile containing a non-positive value is
/// reported as undefined.
pub fn recommendation_log_bias(
    profile: &RecommendationProfile,
    groups: &[GroupLabel],
) -> UserBiasScore {
    if profile.items.iter().any(|&(_, v)| !(v > 0.0)) {
        let means = group_geometric_means(
            profile
                .items
                .iter()
                .map(|&(i, _)| (groups[i as usize], 1.0)),
        );
        return UserBiasScore {
            user: profile.user,
            theta: 0.0,
            defined: false,
            m: means.m,
            n: means.n,
        };
    }
    row_log_bias(profile.user, &profile.items, groups)
}

/// Mean of the defined log-biases, the estimate of the population tendency.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalBias {
    pub gamma_hat: Option<f64>,
    pub count: usize,
}

pub fn global_bias<'a, I>(scores: I) -> GlobalBias
where
    I: IntoIterator<Item = &'a UserBiasScore>,
{
    let (mut sum, mut count) = (0.0, 0usize);
    for s in scores.into_iter().filter(|s| s.defined) {
        sum += s.theta;
        count += 1;
    }
    GlobalBias {
        gamma_hat: (count > 0).then(|| sum / count as f64),
        count,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

/// Fixed-width bins aligned at multiples of `width`, covering min..=max with
/// no gaps. Empty input gives no bins.
pub fn histogram(values: &[f64], width: f64) -> Result<Vec<HistogramBin>> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::Config(format!(
            "bin width must be positive, got {width}"
        )));
    }
    if values.is_empty() {
        return Ok(Vec::new());
    }
    let index = |v: f64| (v / width).floor() as i64;
    let lo = values.iter().map(|&v| index(v)).min().unwrap();
    let hi = values.iter().map(|&v| index(v)).max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for &v in values {
        counts[(index(v) - lo) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(k, count)| {
            let b = lo + k as i64;
            HistogramBin {
                lo: b as f64 * width,
                hi: (b + 1) as f64 * width,
                count,
            }
        })
        .collect())
}

pub fn write_histogram(path: impl AsRef<Path>, bins: &[HistogramBin]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path, b',')?;
    w.write_record(["bin_lo", "bin_hi", "count"])?;
    for b in bins {
        w.write_record([
            format!("{:.6}", b.lo),
            format!("{:.6}", b.hi),
            b.count.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
