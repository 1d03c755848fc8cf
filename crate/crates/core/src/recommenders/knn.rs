use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Similarity {
    Pearson,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
    pub similarity: Similarity,
    /// Pairs with fewer co-ratings get similarity 0.
    pub min_overlap: usize,
    /// Significance weighting: similarities are scaled by
    /// `min(co-ratings, shrinkage) / shrinkage`. `None` disables it.
    pub shrinkage: Option<f64>,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 40,
            similarity: Similarity::Pearson,
            min_overlap: 3,
            shrinkage: Some(50.0),
        }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if let Some(s) = self.shrinkage {
            if !(s > 0.0) {
                return Err(Error::Config("shrinkage must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Similarity of two sparse vectors over their common keys, rounded to 12
/// decimals. Both inputs are sorted by key. Returns 0 below `min_overlap`
/// co-ratings or when either side has no variation.
pub fn similarity(a: &[(u32, f64)], b: &[(u32, f64)], config: &KnnConfig) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let (mut p, mut q) = (0, 0);
    while p < a.len() && q < b.len() {
        match a[p].0.cmp(&b[q].0) {
            std::cmp::Ordering::Less => p += 1,
            std::cmp::Ordering::Greater => q += 1,
            std::cmp::Ordering::Equal => {
                xs.push(a[p].1);
                ys.push(b[q].1);
                p += 1;
                q += 1;
            }
        }
    }
    let n = xs.len();
    if n == 0 || n < config.min_overlap {
        return 0.0;
    }
    let (num, dx, dy) = match config.similarity {
        Similarity::Pearson => {
            let mx = xs.iter().sum::<f64>() / n as f64;
            let my = ys.iter().sum::<f64>() / n as f64;
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                num += (x - mx) * (y - my);
                dx += (x - mx) * (x - mx);
                dy += (y - my) * (y - my);
            }
            (num, dx, dy)
        }
        Similarity::Cosine => {
            let mut num = 0.0;
            let mut dx = 0.0;
            let mut dy = 0.0;
            for (x, y) in xs.iter().zip(&ys) {
                num += x * y;
                dx += x * x;
                dy += y * y;
            }
            (num, dx, dy)
        }
    };
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    let s = num / (dx * dy).sqrt();
    let s = match config.shrinkage {
        Some(shrink) => s * (n as f64).min(shrink) / shrink,
        None => s,
    };
    quantize(s)
}

/// Rounds to 12 decimals so that mathematically tied neighbours compare
/// equal and fall back to the index tie-break.
pub(crate) fn quantize(s: f64) -> f64 {
    (s * 1e12).round() / 1e12
}

/// Weighted deviation from a baseline over the `k` most similar candidates,
/// ties broken by ascending index. Non-positive similarities are ignored.
fn aggregate(mut candidates: Vec<(u32, f64, f64)>, k: usize) -> Option<f64> {
    candidates.retain(|c| c.1 > 0.0);
    if candidates.is_empty() {
        return None;
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    candidates.truncate(k);
    let mut num = 0.0;
    let mut den = 0.0;
    for (_, s, dev) in &candidates {
        num += s * dev;
        den += s;
    }
    Some(num / den)
}

fn mean_of(row: &[(u32, f64)]) -> Option<f64> {
    (!row.is_empty()).then(|| row.iter().map(|e| e.1).sum::<f64>() / row.len() as f64)
}

/// User-based neighborhood model: `μ_u + Σ s_uv (r_vi − μ_v) / Σ s_uv` over
/// the `k` most similar users who rated the item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserKnn {
    pub config: KnnConfig,
    pub(super) rows: Vec<Vec<(u32, f64)>>,
    means: Vec<Option<f64>>,
    /// Per item: raters and their ratings, sorted by user.
    raters: Vec<Vec<(u32, f64)>>,
}

impl UserKnn {
    pub fn train(matrix: &RatingMatrix, config: &KnnConfig) -> Self {
        Self {
            config: config.clone(),
            rows: matrix.rows().to_vec(),
            means: matrix.rows().iter().map(|r| mean_of(r)).collect(),
            raters: matrix.columns(),
        }
    }

    /// Similarity of `ratings` to every training user. `skip` excludes the
    /// user themself when `ratings` is a training row.
    pub fn similarities(&self, ratings: &[(u32, f64)], skip: Option<u32>) -> Vec<f64> {
        self.rows
            .par_iter()
            .enumerate()
            .map(|(v, row)| {
                if Some(v as u32) == skip || row.is_empty() {
                    0.0
                } else {
                    similarity(ratings, row, &self.config)
                }
            })
            .collect()
    }

    pub(super) fn predict(&self, sims: &[f64], user_mean: Option<f64>, item: u32) -> Option<f64> {
        let mu = user_mean?;
        let candidates = self.raters[item as usize]
            .iter()
            .filter_map(|&(v, r)| {
                let s = sims[v as usize];
                (s > 0.0).then(|| (v, s, r - self.means[v as usize].unwrap()))
            })
            .collect();
        aggregate(candidates, self.config.k).map(|dev| mu + dev)
    }
}

/// Item-based neighborhood model: `μ_i + Σ s_ij (r_uj − μ_j) / Σ s_ij` over
/// the `k` items most similar to `i` that the user rated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemKnn {
    pub config: KnnConfig,
    pub(super) rows: Vec<Vec<(u32, f64)>>,
    item_means: Vec<Option<f64>>,
    /// Per item: positively similar items, most similar first.
    neighbors: Vec<Vec<(u32, f64)>>,
}

impl ItemKnn {
    pub fn train(matrix: &RatingMatrix, config: &KnnConfig) -> Self {
        let cols = matrix.columns();
        let neighbors = (0..cols.len())
            .into_par_iter()
            .map(|i| {
                if cols[i].is_empty() {
                    return Vec::new();
                }
                let mut list: Vec<(u32, f64)> = cols
                    .iter()
                    .enumerate()
                    .filter(|(j, c)| *j != i && !c.is_empty())
                    .map(|(j, c)| (j as u32, similarity(&cols[i], c, config)))
                    .filter(|e| e.1 > 0.0)
                    .collect();
                list.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                list
            })
            .collect();
        Self {
            config: config.clone(),
            rows: matrix.rows().to_vec(),
            item_means: cols.iter().map(|c| mean_of(c)).collect(),
            neighbors,
        }
    }

    pub fn neighbors(&self, item: u32) -> &[(u32, f64)] {
        &self.neighbors[item as usize]
    }

    pub(super) fn predict(&self, ratings: &[(u32, f64)], item: u32) -> Option<f64> {
        let mu = self.item_means[item as usize]?;
        let candidates = self.neighbors[item as usize]
            .iter()
            .filter_map(|&(j, s)| {
                let k = ratings.binary_search_by_key(&j, |e| e.0).ok()?;
                Some((j, s, ratings[k].1 - self.item_means[j as usize].unwrap()))
            })
            .take(self.config.k)
            .collect();
        aggregate(candidates, self.config.k).map(|dev| mu + dev)
    }
}
