use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvdConfig {
    pub factors: usize,
    pub learning_rate: f64,
    pub reg: f64,
    pub epochs: usize,
}

impl Default for SvdConfig {
    fn default() -> Self {
        Self {
            factors: 32,
            learning_rate: 0.005,
            reg: 0.02,
            epochs: 30,
        }
    }
}

impl SvdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::Config("factors must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.reg >= 0.0) || !self.reg.is_finite() {
            return Err(Error::Config("reg must be finite and >= 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parameters of `r̂_ui = μ + b_u + b_i + p_u·q_i`. Factors are row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvdParams {
    pub global_mean: f64,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub user_factors: Vec<f64>,
    pub item_factors: Vec<f64>,
    pub k: usize,
}

impl SvdParams {
    pub fn user_factor(&self, user: u32) -> &[f64] {
        &self.user_factors[user as usize * self.k..(user as usize + 1) * self.k]
    }

    pub fn item_factor(&self, item: u32) -> &[f64] {
        &self.item_factors[item as usize * self.k..(item as usize + 1) * self.k]
    }

    pub fn predict(&self, user: u32, item: u32) -> f64 {
        self.global_mean
            + self.user_bias[user as usize]
            + self.item_bias[item as usize]
            + dot(self.user_factor(user), self.item_factor(item))
    }

    fn zeros_like(&self) -> Self {
        Self {
            global_mean: 0.0,
            user_bias: vec![0.0; self.user_bias.len()],
            item_bias: vec![0.0; self.item_bias.len()],
            user_factors: vec![0.0; self.user_factors.len()],
            item_factors: vec![0.0; self.item_factors.len()],
            k: self.k,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Sum over observed ratings of `e² + reg (b_u² + b_i² + ‖p_u‖² + ‖q_i‖²)`.
pub fn objective(params: &SvdParams, triples: &[(u32, u32, f64)], reg: f64) -> f64 {
    triples
        .iter()
        .map(|&(u, i, r)| {
            let e = r - params.predict(u, i);
            let norm = params.user_bias[u as usize].powi(2)
                + params.item_bias[i as usize].powi(2)
                + dot(params.user_factor(u), params.user_factor(u))
                + dot(params.item_factor(i), params.item_factor(i));
            e * e + reg * norm
        })
        .sum()
}

/// Gradient of [`objective`] with respect to every parameter except the
/// global mean (reported as 0).
pub fn gradient(params: &SvdParams, triples: &[(u32, u32, f64)], reg: f64) -> SvdParams {
    let k = params.k;
    let mut g = params.zeros_like();
    for &(u, i, r) in triples {
        let (u, i) = (u as usize, i as usize);
        let e = r - params.predict(u as u32, i as u32);
        g.user_bias[u] += -2.0 * e + 2.0 * reg * params.user_bias[u];
        g.item_bias[i] += -2.0 * e + 2.0 * reg * params.item_bias[i];
        for f in 0..k {
            let p = params.user_factors[u * k + f];
            let q = params.item_factors[i * k + f];
            g.user_factors[u * k + f] += -2.0 * e * q + 2.0 * reg * p;
            g.item_factors[i * k + f] += -2.0 * e * p + 2.0 * reg * q;
        }
    }
    g
}

/// Biased matrix factorization trained by stochastic gradient descent. Each
/// step moves by `−(learning_rate / 2)` times the gradient of one rating's
/// term of [`objective`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Svd {
    pub config: SvdConfig,
    pub(super) rows: Vec<Vec<(u32, f64)>>,
    pub params: SvdParams,
    /// [`objective`] after each epoch.
    pub loss_trace: Vec<f64>,
}

const INIT_SD: f64 = 0.1;

impl Svd {
    pub fn train(matrix: &RatingMatrix, config: &SvdConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let k = config.factors;
        let global_mean = matrix.global_mean().ok_or(Error::EmptyDataset)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_SD).expect("valid sd");
        let mut init =
            |n: usize| -> Vec<f64> { (0..n * k).map(|_| normal.sample(&mut rng)).collect() };
        let mut params = SvdParams {
            global_mean,
            user_bias: vec![0.0; matrix.n_users()],
            item_bias: vec![0.0; matrix.n_items()],
            user_factors: init(matrix.n_users()),
            item_factors: init(matrix.n_items()),
            k,
        };
        let triples: Vec<_> = matrix.triples().collect();
        let mut order = triples.clone();
        let (lr, reg) = (config.learning_rate, config.reg);
        let mut loss_trace = Vec::with_capacity(config.epochs);
        for _ in 0..config.epochs {
            order.shuffle(&mut rng);
            for &(u, i, r) in &order {
                let e = r - params.predict(u, i);
                let (u, i) = (u as usize, i as usize);
                params.user_bias[u] += lr * (e - reg * params.user_bias[u]);
                params.item_bias[i] += lr * (e - reg * params.item_bias[i]);
                for f in 0..k {
                    let p = params.user_factors[u * k + f];
                    let q = params.item_factors[i * k + f];
                    params.user_factors[u * k + f] += lr * (e * q - reg * p);
                    params.item_factors[i * k + f] += lr * (e * p - reg * q);
                }
            }
            loss_trace.push(objective(&params, &triples, reg));
        }
        Ok(Self {
            config: config.clone(),
            rows: matrix.rows().to_vec(),
            params,
            loss_trace,
        })
    }

    /// Bias and factors for ratings not seen in training: ridge regression on
    /// features `[1, q_i]` against `r − μ − b_i`, penalty `reg` per rating as
    /// in the training objective.
    pub fn fold_in(&self, ratings: &[(u32, f64)]) -> Result<(f64, Vec<f64>)> {
        let k = self.params.k;
        if ratings.is_empty() {
            return Ok((0.0, vec![0.0; k]));
        }
        let d = k + 1;
        let mut a = DMatrix::<f64>::zeros(d, d);
        let mut b = DVector::<f64>::zeros(d);
        let mut x = vec![0.0; d];
        for &(i, r) in ratings {
            x[0] = 1.0;
            x[1..].copy_from_slice(self.params.item_factor(i));
            let y = r - self.params.global_mean - self.params.item_bias[i as usize];
            for p in 0..d {
                b[p] += x[p] * y;
                for q in 0..d {
                    a[(p, q)] += x[p] * x[q];
                }
            }
        }
        let penalty = self.config.reg * ratings.len() as f64;
        for p in 0..d {
            a[(p, p)] += penalty;
        }
        let sol = a
            .cholesky()
            .ok_or_else(|| Error::SingularSystem("folded-in user".into()))?
            .solve(&b);
        Ok((sol[0], sol.as_slice()[1..].to_vec()))
    }

    pub fn score(&self, bias: f64, factors: &[f64], item: u32) -> f64 {
        self.params.global_mean
            + bias
            + self.params.item_bias[item as usize]
            + dot(factors, self.params.item_factor(item))
    }
}
