//! Reference implementations shared by integration tests. They work on
//! dense `Option<f64>` grids and are written for clarity, not speed.
#![allow(dead_code)]

use recbias::dataset::RatingMatrix;
use recbias::recommenders::{KnnConfig, Similarity};

pub type Grid = Vec<Vec<Option<f64>>>;

pub fn to_matrix(grid: &Grid) -> RatingMatrix {
    let n_items = grid.first().map_or(0, Vec::len);
    let rows = grid
        .iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .filter_map(|(i, r)| r.map(|r| (i as u32, r)))
                .collect()
        })
        .collect();
    RatingMatrix::new(n_items, rows)
}

pub fn transpose(grid: &Grid) -> Grid {
    let n_items = grid.first().map_or(0, Vec::len);
    (0..n_items)
        .map(|i| grid.iter().map(|row| row[i]).collect())
        .collect()
}

fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

fn present(v: &[Option<f64>]) -> Vec<f64> {
    v.iter().flatten().copied().collect()
}

/// Similarity of two dense vectors over positions set in both, rounded to
/// 12 decimals.
pub fn ref_similarity(a: &[Option<f64>], b: &[Option<f64>], cfg: &KnnConfig) -> f64 {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .collect();
    let n = pairs.len();
    if n == 0 || n < cfg.min_overlap {
        return 0.0;
    }
    let (cx, cy) = match cfg.similarity {
        Similarity::Pearson => (
            pairs.iter().map(|p| p.0).sum::<f64>() / n as f64,
            pairs.iter().map(|p| p.1).sum::<f64>() / n as f64,
        ),
        Similarity::Cosine => (0.0, 0.0),
    };
    let num: f64 = pairs.iter().map(|(x, y)| (x - cx) * (y - cy)).sum();
    let dx: f64 = pairs.iter().map(|(x, _)| (x - cx).powi(2)).sum();
    let dy: f64 = pairs.iter().map(|(_, y)| (y - cy).powi(2)).sum();
    if dx == 0.0 || dy == 0.0 {
        return 0.0;
    }
    let s = num / (dx.sqrt() * dy.sqrt());
    let s = match cfg.shrinkage {
        Some(h) => s * (n as f64).min(h) / h,
        None => s,
    };
    (s * 1e12).round() / 1e12
}

/// Mean-centred weighted average over the `k` best positive neighbours,
/// ties broken by smaller index.
fn neighbourhood(mut cands: Vec<(usize, f64, f64)>, k: usize) -> Option<f64> {
    cands.retain(|c| c.1 > 0.0);
    cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    cands.truncate(k);
    if cands.is_empty() {
        return None;
    }
    let w: f64 = cands.iter().map(|c| c.1).sum();
    Some(cands.iter().map(|c| c.1 * c.2).sum::<f64>() / w)
}

fn fallback(grid: &Grid, u: usize, i: usize) -> f64 {
    let all: Vec<f64> = grid.iter().flat_map(|r| present(r)).collect();
    mean(&present(&grid[u]))
        .or_else(|| mean(&present(&transpose(grid)[i])))
        .or_else(|| mean(&all))
        .unwrap()
}

/// User-based prediction for training user `u`, leaving `u` out of its own
/// neighbourhood.
pub fn ref_user_knn(grid: &Grid, cfg: &KnnConfig, u: usize, i: usize) -> f64 {
    let item_rated = grid.iter().any(|row| row[i].is_some());
    let mu = mean(&present(&grid[u]));
    if !item_rated || mu.is_none() {
        return fallback(grid, u, i);
    }
    let cands = (0..grid.len())
        .filter(|&v| v != u)
        .filter_map(|v| {
            let r = grid[v][i]?;
            let s = ref_similarity(&grid[u], &grid[v], cfg);
            Some((v, s, r - mean(&present(&grid[v])).unwrap()))
        })
        .collect();
    match neighbourhood(cands, cfg.k) {
        Some(dev) => mu.unwrap() + dev,
        None => fallback(grid, u, i),
    }
}

/// Item-based prediction for training user `u`.
pub fn ref_item_knn(grid: &Grid, cfg: &KnnConfig, u: usize, i: usize) -> f64 {
    let cols = transpose(grid);
    let Some(mu) = mean(&present(&cols[i])) else {
        return fallback(grid, u, i);
    };
    let cands = (0..cols.len())
        .filter(|&j| j != i)
        .filter_map(|j| {
            let r = grid[u][j]?;
            let s = ref_similarity(&cols[i], &cols[j], cfg);
            Some((j, s, r - mean(&present(&cols[j])).unwrap()))
        })
        .collect();
    match neighbourhood(cands, cfg.k) {
        Some(dev) => mu + dev,
        None => fallback(grid, u, i),
    }
}
