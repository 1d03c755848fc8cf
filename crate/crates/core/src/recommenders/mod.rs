//! Explicit-feedback rating predictors behind one contract.
//!
//! [`train`] fits a model on a [`RatingMatrix`]. Predictions go through a
//! [`UserState`]: either a training user ([`TrainedModel::user_state`]) or a
//! held-out user folded in from their visible ratings
//! ([`TrainedModel::fold_in`]). KNN models use the visible ratings directly;
//! the factor models solve a one-shot ridge problem for the user's factors
//! with item factors fixed.
//!
//! When a model has no evidence for a pair (no usable neighbors, or an item
//! that never appeared in training), the prediction falls back to the user's
//! mean, then the item's mean, then the global mean.

mod als;
mod knn;
mod svd;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bias::RecommendationProfile;
use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};

pub use als::{Als, AlsConfig};
pub use knn::{similarity, ItemKnn, KnnConfig, Similarity, UserKnn};
pub use svd::{gradient as svd_gradient, objective as svd_objective, Svd, SvdConfig, SvdParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "kebab-case")]
pub enum ModelConfig {
    UserKnn(KnnConfig),
    ItemKnn(KnnConfig),
    Als(AlsConfig),
    Svd(SvdConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::UserKnn(_) => "user-knn",
            ModelConfig::ItemKnn(_) => "item-knn",
            ModelConfig::Als(_) => "als",
            ModelConfig::Svd(_) => "svd",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelConfig::UserKnn(c) | ModelConfig::ItemKnn(c) => c.validate(),
            ModelConfig::Als(c) => c.validate(),
            ModelConfig::Svd(c) => c.validate(),
        }
    }

    /// The four algorithms with default hyperparameters.
    pub fn all_defaults() -> Vec<ModelConfig> {
        vec![
            ModelConfig::UserKnn(KnnConfig::default()),
            ModelConfig::ItemKnn(KnnConfig::default()),
            ModelConfig::Als(AlsConfig::default()),
            ModelConfig::Svd(SvdConfig::default()),
        ]
    }
}

/// Means used by the fallback chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baselines {
    pub global_mean: f64,
    pub item_means: Vec<Option<f64>>,
}

impl Baselines {
    fn from_matrix(m: &RatingMatrix) -> Result<Self> {
        let global_mean = m.global_mean().ok_or(Error::EmptyDataset)?;
        let (mut sums, mut counts) = (vec![0.0; m.n_items()], vec![0usize; m.n_items()]);
        for (_, i, r) in m.triples() {
            sums[i as usize] += r;
            counts[i as usize] += 1;
        }
        let item_means = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
            .collect();
        Ok(Self {
            global_mean,
            item_means,
        })
    }

    pub fn item_seen(&self, item: u32) -> bool {
        self.item_means
            .get(item as usize)
            .is_some_and(Option::is_some)
    }

    /// User mean, then item mean, then global mean.
    pub fn fallback(&self, user_mean: Option<f64>, item: u32) -> f64 {
        user_mean
            .or_else(|| self.item_means.get(item as usize).copied().flatten())
            .unwrap_or(self.global_mean)
    }
}

fn row_mean(row: &[(u32, f64)]) -> Option<f64> {
    (!row.is_empty()).then(|| row.iter().map(|e| e.1).sum::<f64>() / row.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum ModelKind {
    UserKnn(UserKnn),
    ItemKnn(ItemKnn),
    Als(Als),
    Svd(Svd),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub baselines: Baselines,
    kind: ModelKind,
}

/// Everything a model needs to score items for one user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    /// Ratings the state was built from, sorted by item.
    pub ratings: Vec<(u32, f64)>,
    pub mean: Option<f64>,
    kind: StateKind,
}

#[derive(Clone, Debug, PartialEq)]
enum StateKind {
    Plain,
    /// Similarity to every training user (0 when unusable).
    Neighbors(Vec<f64>),
    Latent {
        bias: f64,
        factors: Vec<f64>,
    },
}

pub fn train(matrix: &RatingMatrix, config: &ModelConfig, seed: u64) -> Result<TrainedModel> {
    config.validate()?;
    if matrix.nnz() == 0 {
        return Err(Error::EmptyDataset);
    }
    let baselines = Baselines::from_matrix(matrix)?;
    let kind = match config {
        ModelConfig::UserKnn(c) => ModelKind::UserKnn(UserKnn::train(matrix, c)),
        ModelConfig::ItemKnn(c) => ModelKind::ItemKnn(ItemKnn::train(matrix, c)),
        ModelConfig::Als(c) => ModelKind::Als(Als::train(matrix, c, seed)?),
        ModelConfig::Svd(c) => ModelKind::Svd(Svd::train(matrix, c, seed)?),
    };
    Ok(TrainedModel {
        config: config.clone(),
        baselines,
        kind,
    })
}

const MODEL_FORMAT: &str = "recbias-model";
const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    /// Informational; the layout may change between versions.
    note: String,
    model: TrainedModel,
}

impl TrainedModel {
    pub fn algorithm(&self) -> &'static str {
        self.config.name()
    }

    pub fn n_items(&self) -> usize {
        self.baselines.item_means.len()
    }

    /// Objective after each ALS half-step, or loss after each SVD epoch.
    pub fn training_trace(&self) -> &[f64] {
        match &self.kind {
            ModelKind::Als(m) => &m.objective_trace,
            ModelKind::Svd(m) => &m.loss_trace,
            _ => &[],
        }
    }

    pub fn als(&self) -> Option<&Als> {
        match &self.kind {
            ModelKind::Als(m) => Some(m),
            _ => None,
        }
    }

    pub fn svd(&self) -> Option<&Svd> {
        match &self.kind {
            ModelKind::Svd(m) => Some(m),
            _ => None,
        }
    }

    pub fn user_knn(&self) -> Option<&UserKnn> {
        match &self.kind {
            ModelKind::UserKnn(m) => Some(m),
            _ => None,
        }
    }

    pub fn item_knn(&self) -> Option<&ItemKnn> {
        match &self.kind {
            ModelKind::ItemKnn(m) => Some(m),
            _ => None,
        }
    }

    /// State for a user from ratings outside training (fold-in).
    pub fn fold_in(&self, ratings: &[(u32, f64)]) -> Result<UserState> {
        let mut ratings = ratings.to_vec();
        ratings.sort_by_key(|e| e.0);
        let mean = row_mean(&ratings);
        let kind = match &self.kind {
            ModelKind::UserKnn(m) => StateKind::Neighbors(m.similarities(&ratings, None)),
            ModelKind::ItemKnn(_) => StateKind::Plain,
            ModelKind::Als(m) => StateKind::Latent {
                bias: 0.0,
                factors: m.fold_in(&ratings)?,
            },
            ModelKind::Svd(m) => {
                let (bias, factors) = m.fold_in(&ratings)?;
                StateKind::Latent { bias, factors }
            }
        };
        Ok(UserState {
            ratings,
            mean,
            kind,
        })
    }

    /// State for a training user, using what the model learned for them.
    pub fn user_state(&self, user: u32) -> UserState {
        let ratings: Vec<(u32, f64)> = match &self.kind {
            ModelKind::UserKnn(m) => m.rows[user as usize].clone(),
            ModelKind::ItemKnn(m) => m.rows[user as usize].clone(),
            ModelKind::Als(m) => m.rows[user as usize].clone(),
            ModelKind::Svd(m) => m.rows[user as usize].clone(),
        };
        let mean = row_mean(&ratings);
        let kind = match &self.kind {
            ModelKind::UserKnn(m) => StateKind::Neighbors(m.similarities(&ratings, Some(user))),
            ModelKind::ItemKnn(_) => StateKind::Plain,
            ModelKind::Als(m) => StateKind::Latent {
                bias: 0.0,
                factors: m.user_factors(user).to_vec(),
            },
            ModelKind::Svd(m) => StateKind::Latent {
                bias: m.params.user_bias[user as usize],
                factors: m.params.user_factor(user).to_vec(),
            },
        };
        UserState {
            ratings,
            mean,
            kind,
        }
    }

    /// Predicted rating. Total: every `(state, item)` gets a finite value.
    pub fn predict(&self, state: &UserState, item: u32) -> f64 {
        let fallback = || self.baselines.fallback(state.mean, item);
        if !self.baselines.item_seen(item) {
            return fallback();
        }
        let estimate = match (&self.kind, &state.kind) {
            (ModelKind::UserKnn(m), StateKind::Neighbors(sims)) => {
                m.predict(sims, state.mean, item)
            }
            (ModelKind::ItemKnn(m), _) => m.predict(&state.ratings, item),
            (ModelKind::Als(m), StateKind::Latent { factors, .. }) => {
                (!state.ratings.is_empty()).then(|| m.score(factors, item))
            }
            (ModelKind::Svd(m), StateKind::Latent { bias, factors }) => {
                (!state.ratings.is_empty()).then(|| m.score(*bias, factors, item))
            }
            _ => None,
        };
        match estimate {
            Some(v) if v.is_finite() => v,
            _ => fallback(),
        }
    }

    /// Prediction for a training user.
    pub fn predict_user(&self, user: u32, item: u32) -> f64 {
        self.predict(&self.user_state(user), item)
    }

    /// Scores every item not in `exclusions` (sorted item indices).
    pub fn score_candidates(&self, state: &UserState, exclusions: &[u32]) -> Vec<(u32, f64)> {
        (0..self.n_items() as u32)
            .filter(|i| exclusions.binary_search(i).is_err())
            .map(|i| (i, self.predict(state, i)))
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            note: "layout is not stable across versions".into(),
            model: self.clone(),
        };
        let body = serde_json::to_vec(&file)?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_slice(&body)?;
        if file.format != MODEL_FORMAT || file.version != MODEL_FORMAT_VERSION {
            return Err(Error::Input(format!(
                "unsupported model file {} v{}",
                file.format, file.version
            )));
        }
        Ok(file.model)
    }
}

/// Sorts by score descending, ties by ascending item index (item ids are
/// interned in ascending order), and keeps the first `n`.
pub fn rank_top_n(user: u32, mut scored: Vec<(u32, f64)>, n: usize) -> RecommendationProfile {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let short = scored.len() < n;
    scored.truncate(n);
    RecommendationProfile {
        user,
        items: scored,
        short,
    }
}

pub fn recommend_top_n(
    model: &TrainedModel,
    user: u32,
    state: &UserState,
    n: usize,
    exclusions: &[u32],
) -> Result<RecommendationProfile> {
    if n == 0 {
        return Err(Error::Config("list length must be >= 1".into()));
    }
    Ok(rank_top_n(
        user,
        model.score_candidates(state, exclusions),
        n,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank1() -> RatingMatrix {
        RatingMatrix::new(2, vec![vec![(0, 2.0), (1, 4.0)], vec![(0, 3.0), (1, 6.0)]])
    }

    #[test]
    fn top_n_sorting_and_ties() {
        let p = rank_top_n(0, vec![(0, 4.0), (1, 6.0), (2, 5.0)], 2);
        assert_eq!(p.items.iter().map(|e| e.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!(!p.short);
        let p = rank_top_n(0, vec![(1, 5.0), (0, 5.0)], 1);
        assert_eq!(p.items, vec![(0, 5.0)]);
        let p = rank_top_n(0, vec![], 3);
        assert!(p.items.is_empty() && p.short);
    }

    #[test]
    fn recommend_excludes_items() {
        let m = train(&rank1(), &ModelConfig::Als(AlsConfig::default()), 1).unwrap();
        let st = m.user_state(0);
        let p = recommend_top_n(&m, 0, &st, 5, &[0, 1]).unwrap();
        assert!(p.items.is_empty() && p.short);
        let p = recommend_top_n(&m, 0, &st, 5, &[0]).unwrap();
        assert_eq!(p.items.len(), 1);
        assert!(p.short);
        assert!(recommend_top_n(&m, 0, &st, 0, &[]).is_err());
    }

    #[test]
    fn unseen_item_falls_back_to_user_mean() {
        let m = RatingMatrix::new(3, vec![vec![(0, 2.0), (1, 4.0)], vec![(0, 3.0), (1, 5.0)]]);
        for cfg in ModelConfig::all_defaults() {
            let model = train(&m, &cfg, 3).unwrap();
            assert_eq!(model.predict_user(0, 2), 3.0, "{}", cfg.name());
            let st = model.fold_in(&[(0, 1.0)]).unwrap();
            assert_eq!(model.predict(&st, 2), 1.0);
            // no ratings at all: item mean, then global mean
            let st = model.fold_in(&[]).unwrap();
            assert_eq!(model.predict(&st, 1), 4.5);
            assert_eq!(model.predict(&st, 2), 3.5);
        }
    }

    #[test]
    fn empty_training_is_error() {
        let m = RatingMatrix::new(2, vec![vec![]]);
        assert!(matches!(
            train(&m, &ModelConfig::Als(AlsConfig::default()), 0),
            Err(Error::EmptyDataset)
        ));
    }

    #[test]
    fn model_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for cfg in ModelConfig::all_defaults() {
            let model = train(&rank1(), &cfg, 5).unwrap();
            let path = dir.path().join(format!("{}.json", cfg.name()));
            model.save(&path).unwrap();
            let back = TrainedModel::load(&path).unwrap();
            assert_eq!(back.predict_user(1, 1), model.predict_user(1, 1));
        }
    }

    #[test]
    fn config_parses_from_toml() {
        let cfg: ModelConfig =
            toml::from_str("algorithm = \"user-knn\"\nk = 5\nsimilarity = \"cosine\"").unwrap();
        match cfg {
            ModelConfig::UserKnn(c) => {
                assert_eq!(c.k, 5);
                assert_eq!(c.similarity, Similarity::Cosine);
                assert_eq!(c.min_overlap, 3);
            }
            other => panic!("{other:?}"),
        }
    }
}
