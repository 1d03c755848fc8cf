use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::RatingMatrix;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlsConfig {
    pub factors: usize,
    pub lambda: f64,
    pub iterations: usize,
}

impl Default for AlsConfig {
    fn default() -> Self {
        Self {
            factors: 32,
            lambda: 0.1,
            iterations: 15,
        }
    }
}

impl AlsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.factors == 0 {
            return Err(Error::Config("factors must be >= 1".into()));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config("lambda must be finite and >= 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Explicit alternating least squares minimizing
/// `Σ (r_ui − p_u·q_i)² + λ (Σ‖p_u‖² + Σ‖q_i‖²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Als {
    pub config: AlsConfig,
    pub(super) rows: Vec<Vec<(u32, f64)>>,
    /// Row-major, `factors` per user.
    user_factors: Vec<f64>,
    /// Row-major, `factors` per item.
    item_factors: Vec<f64>,
    /// Objective after every half-step (users, then items, per iteration).
    pub objective_trace: Vec<f64>,
}

const INIT_SD: f64 = 0.1;

/// Ridge solution of `min Σ (y − x·w)² + λ‖w‖²` for the rows `(x, y)`.
/// With no rows the minimizer is 0.
fn ridge<'a>(
    k: usize,
    lambda: f64,
    rows: impl Iterator<Item = (&'a [f64], f64)>,
    what: impl FnOnce() -> String,
) -> Result<Vec<f64>> {
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut b = DVector::<f64>::zeros(k);
    let mut n = 0;
    for (x, y) in rows {
        n += 1;
        for p in 0..k {
            b[p] += x[p] * y;
            for q in 0..=p {
                a[(p, q)] += x[p] * x[q];
            }
        }
    }
    if n == 0 {
        return Ok(vec![0.0; k]);
    }
    for p in 0..k {
        for q in 0..p {
            a[(q, p)] = a[(p, q)];
        }
        a[(p, p)] += lambda;
    }
    let chol = a.cholesky().ok_or_else(|| Error::SingularSystem(what()))?;
    Ok(chol.solve(&b).as_slice().to_vec())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Als {
    pub fn train(matrix: &RatingMatrix, config: &AlsConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let k = config.factors;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_SD).expect("valid sd");
        let mut init =
            |n: usize| -> Vec<f64> { (0..n * k).map(|_| normal.sample(&mut rng)).collect() };
        let user_factors = init(matrix.n_users());
        let item_factors = init(matrix.n_items());
        let mut model = Self {
            config: config.clone(),
            rows: matrix.rows().to_vec(),
            user_factors,
            item_factors,
            objective_trace: Vec::with_capacity(2 * config.iterations),
        };
        let cols = matrix.columns();
        for _ in 0..config.iterations {
            model.user_factors = model.solve_side(&model.rows, &model.item_factors, "user")?;
            model.objective_trace.push(model.objective());
            model.item_factors = model.solve_side(&cols, &model.user_factors, "item")?;
            model.objective_trace.push(model.objective());
        }
        Ok(model)
    }

    fn solve_side(&self, lists: &[Vec<(u32, f64)>], fixed: &[f64], side: &str) -> Result<Vec<f64>> {
        let k = self.config.factors;
        let solved: Result<Vec<Vec<f64>>> = lists
            .par_iter()
            .enumerate()
            .map(|(idx, list)| {
                self.check_determined(list.len(), || format!("{side} {idx}"))?;
                ridge(
                    k,
                    self.config.lambda,
                    list.iter()
                        .map(|&(j, r)| (&fixed[j as usize * k..(j as usize + 1) * k], r)),
                    || format!("{side} {idx}"),
                )
            })
            .collect();
        Ok(solved?.concat())
    }

    fn check_determined(&self, count: usize, what: impl FnOnce() -> String) -> Result<()> {
        if self.config.lambda == 0.0 && count > 0 && count < self.config.factors {
            return Err(Error::SingularSystem(format!(
                "{}: {count} ratings for {} factors with lambda = 0",
                what(),
                self.config.factors
            )));
        }
        Ok(())
    }

    pub fn objective(&self) -> f64 {
        let k = self.config.factors;
        let mut loss = 0.0;
        for (u, row) in self.rows.iter().enumerate() {
            let p = self.user_factors(u as u32);
            for &(i, r) in row {
                let e = r - dot(p, &self.item_factors[i as usize * k..(i as usize + 1) * k]);
                loss += e * e;
            }
        }
        let norm: f64 = self
            .user_factors
            .iter()
            .chain(&self.item_factors)
            .map(|x| x * x)
            .sum();
        loss + self.config.lambda * norm
    }

    pub fn user_factors(&self, user: u32) -> &[f64] {
        let k = self.config.factors;
        &self.user_factors[user as usize * k..(user as usize + 1) * k]
    }

    pub fn item_factors(&self, item: u32) -> &[f64] {
        let k = self.config.factors;
        &self.item_factors[item as usize * k..(item as usize + 1) * k]
    }

    /// User factors for ratings not seen in training, item factors fixed.
    pub fn fold_in(&self, ratings: &[(u32, f64)]) -> Result<Vec<f64>> {
        self.check_determined(ratings.len(), || "folded-in user".into())?;
        ridge(
            self.config.factors,
            self.config.lambda,
            ratings.iter().map(|&(i, r)| (self.item_factors(i), r)),
            || "folded-in user".into(),
        )
    }

    pub fn score(&self, user_factors: &[f64], item: u32) -> f64 {
        dot(user_factors, self.item_factors(item))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank1_with_hole() -> RatingMatrix {
        // r_ui = a_u b_i with a = (1, 2, 3), b = (1, 2, 3); (2, 2) hidden.
        RatingMatrix::new(
            3,
            vec![
                vec![(0, 1.0), (1, 2.0), (2, 3.0)],
                vec![(0, 2.0), (1, 4.0), (2, 6.0)],
                vec![(0, 3.0), (1, 6.0)],
            ],
        )
    }

    fn rank1() -> RatingMatrix {
        RatingMatrix::new(2, vec![vec![(0, 2.0), (1, 4.0)], vec![(0, 3.0), (1, 6.0)]])
    }

    fn tight() -> AlsConfig {
        AlsConfig {
            factors: 1,
            lambda: 1e-6,
            iterations: 50,
        }
    }

    #[test]
    fn recovers_rank_one_matrix() {
        let m = rank1();
        let als = Als::train(&m, &tight(), 7).unwrap();
        let mut se = 0.0;
        for (u, i, r) in m.triples() {
            let e = als.score(als.user_factors(u), i) - r;
            se += e * e;
        }
        assert!((se / m.nnz() as f64).sqrt() < 1e-3);
        assert!((als.score(als.user_factors(1), 1) - 6.0).abs() < 1e-2);
    }

    #[test]
    fn objective_is_monotone() {
        let m = rank1_with_hole();
        let cfg = AlsConfig {
            factors: 2,
            lambda: 0.05,
            iterations: 20,
        };
        let als = Als::train(&m, &cfg, 3).unwrap();
        for w in als.objective_trace.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{w:?}");
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let m = rank1_with_hole();
        let a = Als::train(&m, &AlsConfig::default(), 11).unwrap();
        let b = Als::train(&m, &AlsConfig::default(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_lambda_underdetermined_is_singular() {
        let m = rank1_with_hole();
        let cfg = AlsConfig {
            factors: 4,
            lambda: 0.0,
            iterations: 1,
        };
        assert!(matches!(
            Als::train(&m, &cfg, 0),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn fold_in_matches_training_solution() {
        let m = rank1();
        let als = Als::train(&m, &tight(), 7).unwrap();
        let p = als.fold_in(&m.rows()[1]).unwrap();
        assert!((als.score(&p, 1) - 6.0).abs() < 1e-2);
        assert_eq!(als.fold_in(&[]).unwrap(), vec![0.0]);
    }
}
