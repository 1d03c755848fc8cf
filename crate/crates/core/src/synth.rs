//! Synthetic ratings from the multiplicative bias model with known ground truth.
//!
//! Each user scales the top rating `R` down by `e^p` (log-preference `p`,
//! drawn around the user's mean `α_u`); on disadvantaged items they scale it
//! down further by `e^q` (log-bias `q`, drawn around `β_u`, where `β_u` itself
//! comes from a population distribution Ω with mean γ):
//!
//! ```text
//! r = R·e^-p          advantaged item
//! r = R·e^-p·e^-q     disadvantaged item
//! ```
//!
//! Every `(user, item)` draw uses its own RNG derived from `(seed, user,
//! item)`, so generation order never changes the output.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{csv_writer, GroupLabel, ItemCatalog, RatingsDataset};
use crate::error::{Error, Result};
use crate::stats::{normal_cdf, normal_pdf};

/// A distribution on `[0, ∞)` with an analytic mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Distribution {
    PointMass {
        value: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    /// Normal truncated to `[0, ∞)` by rejection.
    Normal {
        mean: f64,
        sd: f64,
    },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Distribution::PointMass { value } => value >= 0.0 && value.is_finite(),
            Distribution::Uniform { lo, hi } => lo >= 0.0 && hi >= lo && hi.is_finite(),
            Distribution::Normal { mean, sd } => {
                sd > 0.0 && sd.is_finite() && mean.is_finite() && mean > -5.0 * sd
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid distribution {self:?}")))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Distribution::PointMass { value } => value,
            Distribution::Uniform { lo, hi } => {
                if hi > lo {
                    rng.random_range(lo..hi)
                } else {
                    lo
                }
            }
            Distribution::Normal { mean, sd } => {
                let normal = Normal::new(mean, sd).expect("validated sd");
                loop {
                    let x = normal.sample(rng);
                    if x >= 0.0 {
                        return x;
                    }
                }
            }
        }
    }

    /// Mean of the (possibly truncated) distribution.
    pub fn mean(&self) -> f64 {
        match *self {
            Distribution::PointMass { value } => value,
            Distribution::Uniform { lo, hi } => 0.5 * (lo + hi),
            Distribution::Normal { mean, sd } => {
                let a = -mean / sd;
                mean + sd * normal_pdf(a) / (1.0 - normal_cdf(a))
            }
        }
    }

    /// Smallest value in the support.
    fn support_min(&self) -> f64 {
        match *self {
            Distribution::PointMass { value } => value,
            Distribution::Uniform { lo, .. } => lo,
            Distribution::Normal { .. } => 0.0,
        }
    }
}

/// Per-rating noise around a per-user center.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Spread {
    PointMass,
    Uniform {
        half_width: f64,
    },
    /// Normal around the center, truncated at 0.
    Normal {
        sd: f64,
    },
}

impl Spread {
    pub fn around(&self, center: f64) -> Distribution {
        match *self {
            Spread::PointMass => Distribution::PointMass { value: center },
            Spread::Uniform { half_width } => Distribution::Uniform {
                lo: center - half_width,
                hi: center + half_width,
            },
            Spread::Normal { sd } => Distribution::Normal { mean: center, sd },
        }
    }

    fn validate(&self, centers: &Distribution) -> Result<()> {
        match *self {
            Spread::PointMass => Ok(()),
            Spread::Uniform { half_width } => {
                if half_width >= 0.0 && centers.support_min() >= half_width {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "uniform spread of half-width {half_width} leaves [0, inf) for centers from {centers:?}"
                    )))
                }
            }
            Spread::Normal { sd } => {
                if sd > 0.0 && sd.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "spread sd must be positive, got {sd}"
                    )))
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerativeConfig {
    pub scale_max: f64,
    pub users: usize,
    pub items: usize,
    pub disadvantaged_fraction: f64,
    /// Probability that a given `(user, item)` pair is rated.
    pub density: f64,
    /// Distribution of the per-user mean log-preference `α_u`.
    pub preference_mean: Distribution,
    pub preference_spread: Spread,
    /// Ω, the population distribution of per-user mean log-bias `β_u`.
    pub bias_population: Distribution,
    pub bias_spread: Spread,
    pub clamp_to_scale: bool,
    pub keep_latent: bool,
    pub seed: u64,
}

impl Default for GenerativeConfig {
    fn default() -> Self {
        Self {
            scale_max: 10.0,
            users: 500,
            items: 200,
            disadvantaged_fraction: 0.5,
            density: 0.5,
            preference_mean: Distribution::Uniform { lo: 0.3, hi: 0.9 },
            preference_spread: Spread::Normal { sd: 0.2 },
            bias_population: Distribution::Normal {
                mean: 0.2,
                sd: 0.05,
            },
            bias_spread: Spread::Normal { sd: 0.1 },
            clamp_to_scale: false,
            keep_latent: false,
            seed: 0,
        }
    }
}

impl GenerativeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_max >= 1.0 && self.scale_max.is_finite()) {
            return Err(Error::Config("scale_max must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.disadvantaged_fraction) {
            return Err(Error::Config(
                "disadvantaged_fraction must be in [0, 1]".into(),
            ));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::Config("density must be in (0, 1]".into()));
        }
        self.preference_mean.validate()?;
        self.bias_population.validate()?;
        self.preference_spread.validate(&self.preference_mean)?;
        self.bias_spread.validate(&self.bias_population)?;
        Ok(())
    }

    /// Global mean log-bias γ.
    pub fn gamma(&self) -> f64 {
        self.bias_population.mean()
    }
}

/// Per-user draws: the centers of the user's preference and bias distributions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserParams {
    pub alpha_center: f64,
    pub beta_center: f64,
}

/// Ground truth for one user: the exact means of their `p` and `q` draws.
/// These equal the centers except under truncated-normal spreads.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UserTruth {
    pub alpha: f64,
    pub beta: f64,
}

const USER_STREAM: u64 = u64::MAX;
const CATALOG_STREAM: u64 = u64::MAX - 1;

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// RNG for one `(user, item)` pair.
pub fn pair_rng(seed: u64, user: u64, item: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed ^ mix(user)));
    rng.set_stream(item);
    rng
}

pub fn user_rng(seed: u64, user: u64) -> ChaCha8Rng {
    pair_rng(seed, user, USER_STREAM)
}

pub fn sample_user<R: Rng + ?Sized>(config: &GenerativeConfig, rng: &mut R) -> UserParams {
    let alpha_center = config.preference_mean.sample(rng);
    let beta_center = config.bias_population.sample(rng);
    UserParams {
        alpha_center,
        beta_center,
    }
}

pub fn user_truth(config: &GenerativeConfig, params: &UserParams) -> UserTruth {
    UserTruth {
        alpha: config.preference_spread.around(params.alpha_center).mean(),
        beta: config.bias_spread.around(params.beta_center).mean(),
    }
}

/// One realized rating and the latent draws behind it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatingDraw {
    pub rating: f64,
    pub p: f64,
    /// Zero for advantaged items.
    pub q: f64,
}

pub fn generate_rating<R: Rng + ?Sized>(
    params: &UserParams,
    group: GroupLabel,
    config: &GenerativeConfig,
    rng: &mut R,
) -> RatingDraw {
    let p = config
        .preference_spread
        .around(params.alpha_center)
        .sample(rng);
    let q = match group {
        GroupLabel::Advantaged => 0.0,
        GroupLabel::Disadvantaged => config.bias_spread.around(params.beta_center).sample(rng),
    };
    RatingDraw {
        rating: rating_from_latent(config.scale_max, p, q, config.clamp_to_scale),
        p,
        q,
    }
}

pub fn rating_from_latent(scale_max: f64, p: f64, q: f64, clamp: bool) -> f64 {
    let r = scale_max * (-p).exp() * (-q).exp();
    if clamp {
        r.clamp(1.0, scale_max)
    } else {
        r
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: RatingsDataset,
    pub catalog: ItemCatalog,
    /// Indexed like `dataset.user_ids()`.
    pub truth: Vec<UserTruth>,
    pub params: Vec<UserParams>,
    /// `(user, item, p, q)` for every rating when `keep_latent` is set.
    pub latent: Vec<(u32, u32, f64, f64)>,
    pub empty_users: usize,
}

pub fn user_id(u: usize) -> String {
    format!("u{u:06}")
}

pub fn item_id(i: usize) -> String {
    format!("i{i:06}")
}

/// Group per item: exactly `round(fraction · items)` disadvantaged items,
/// chosen by a seeded shuffle.
pub fn synthetic_groups(config: &GenerativeConfig) -> Vec<GroupLabel> {
    let mut order: Vec<usize> = (0..config.items).collect();
    let mut rng = pair_rng(config.seed, CATALOG_STREAM, 0);
    order.shuffle(&mut rng);
    let n_dis = (config.disadvantaged_fraction * config.items as f64).round() as usize;
    let mut groups = vec![GroupLabel::Advantaged; config.items];
    for &i in &order[..n_dis.min(config.items)] {
        groups[i] = GroupLabel::Disadvantaged;
    }
    groups
}

pub fn generate_dataset(config: &GenerativeConfig) -> Result<SyntheticDataset> {
    config.validate()?;
    if config.users == 0 || config.items == 0 {
        return Err(Error::Config("users and items must be positive".into()));
    }
    let groups = synthetic_groups(config);
    let mut catalog = ItemCatalog::new();
    for (i, g) in groups.iter().enumerate() {
        catalog.insert(item_id(i), *g);
    }

    let per_user: Vec<(UserParams, Vec<(u32, RatingDraw)>)> = (0..config.users)
        .into_par_iter()
        .map(|u| {
            let params = sample_user(config, &mut user_rng(config.seed, u as u64));
            let mut row = Vec::new();
            for (i, &g) in groups.iter().enumerate() {
                let mut rng = pair_rng(config.seed, u as u64, i as u64);
                if config.density < 1.0 && rng.random::<f64>() >= config.density {
                    continue;
                }
                row.push((i as u32, generate_rating(&params, g, config, &mut rng)));
            }
            (params, row)
        })
        .collect();

    let mut triples = Vec::new();
    let mut latent = Vec::new();
    let mut params = Vec::with_capacity(config.users);
    let mut empty_users = 0;
    let mut below_one = 0;
    for (u, (p, row)) in per_user.into_iter().enumerate() {
        params.push(p);
        if row.is_empty() {
            empty_users += 1;
        }
        for (i, d) in row {
            if d.rating < 1.0 {
                below_one += 1;
            }
            triples.push((user_id(u), item_id(i as usize), d.rating));
            if config.keep_latent {
                latent.push((u as u32, i, d.p, d.q));
            }
        }
    }
    if empty_users > 0 {
        log::warn!("{empty_users} synthetic users received no ratings");
    }
    if below_one > 0 {
        log::warn!("{below_one} unclamped synthetic ratings fall below 1");
    }
    let users: Vec<String> = (0..config.users).map(user_id).collect();
    let dataset = RatingsDataset::from_generated(config.scale_max, &users, triples, &catalog)?;
    let truth = params.iter().map(|p| user_truth(config, p)).collect();
    Ok(SyntheticDataset {
        dataset,
        catalog,
        truth,
        params,
        latent,
        empty_users,
    })
}

impl SyntheticDataset {
    /// Writes `ratings.csv`, `catalog.csv` and `ground_truth.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.dataset.write(dir.join("ratings.csv"), b',')?;
        self.catalog.write(dir.join("catalog.csv"), b',')?;
        let path = dir.join("ground_truth.csv");
        let mut w = csv_writer(&path, b',')?;
        w.write_record(["user_id", "alpha", "beta"])?;
        for (id, t) in self.dataset.user_ids().iter().zip(&self.truth) {
            w.write_record([id.as_str(), &t.alpha.to_string(), &t.beta.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }
}
