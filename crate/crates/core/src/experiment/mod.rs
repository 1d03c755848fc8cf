//! End-to-end experiments: dataset → split → bias estimate → (debias) →
//! train → predict → (preference correction) → evaluate.
//!
//! Every algorithm runs in up to three modes over one shared split:
//!
//! * `baseline` trains on raw ratings.
//! * `debias-only` trains on debiased ratings and evaluates the raw
//!   predictions of that model.
//! * `full` additionally applies each user's preference correction and
//!   re-ranks before evaluation.
//!
//! Accuracy is always measured against the raw held-out ratings.

mod report;
mod run;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bias::{
    debias_ratings, debias_row, global_bias, preference_correct_user, recommendation_log_bias,
    RecommendationProfile, ThetaMap, UserBiasScore,
};
use crate::dataset::{
    filter_by_activity, load_ratings, split_users, FilterMode, ItemCatalog, LoadOptions,
    RatingsDataset, Split, SplitSpec, ZeroPolicy,
};
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_bias, default_relevance_threshold, mae, mrr, ndcg_at_n, relevant_gains, rmse, Gain,
    MetricsReport,
};
use crate::recommenders::{rank_top_n, train, ModelConfig, TrainedModel};
use crate::synth::{generate_dataset, GenerativeConfig};

pub use report::{cmd_report, ReportSummary};
pub use run::{
    cmd_enrich, cmd_prepare, cmd_run, cmd_synth, read_item_ids, CellEntry, EnrichSummary,
    ExitStatus, PrepareArgs, RunManifest, RunSummary, MANIFEST,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Baseline,
    DebiasOnly,
    Full,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::DebiasOnly, Mode::Full];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::DebiasOnly => "debias-only",
            Mode::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Mode::ALL.into_iter().find(|m| m.name() == s)
    }

    fn debiased(self) -> bool {
        self != Mode::Baseline
    }
}

/// Which predictions a test user's recommendation log-bias is computed over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasScope {
    /// The top-N recommendation list.
    #[default]
    TopN,
    /// Every held-out pair of the user.
    AllPairs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Recommendation list length.
    pub n: usize,
    /// Held-out ratings at or above this are relevant. Defaults to `⌈0.8·R⌉`.
    pub relevance_threshold: Option<f64>,
    pub bin_width: f64,
    pub bias_scope: BiasScope,
    pub gain: Gain,
    /// Record wall-clock timings in the manifest. Off by default because it
    /// makes run directories differ between invocations.
    pub timings: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            n: 10,
            relevance_threshold: None,
            bin_width: 0.05,
            bias_scope: BiasScope::TopN,
            gain: Gain::Binary,
            timings: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub ratings: PathBuf,
    pub catalog: PathBuf,
    #[serde(default = "default_scale")]
    pub scale_max: f64,
    #[serde(default)]
    pub zero_policy: ZeroPolicy,
    #[serde(default = "default_delimiter")]
    pub delimiter: char,
}

fn default_scale() -> f64 {
    5.0
}

fn default_delimiter() -> char {
    ','
}

pub(crate) fn delimiter_byte(c: char) -> Result<u8> {
    u8::try_from(c)
        .ok()
        .filter(u8::is_ascii)
        .ok_or_else(|| Error::Config(format!("delimiter {c:?} must be a single ASCII character")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_item_ratings: usize,
    pub min_user_ratings: usize,
    pub mode: FilterMode,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_item_ratings: 1,
            min_user_ratings: 1,
            mode: FilterMode::Sequential,
        }
    }
}

/// One experiment, fully described. Exactly one of `data` and `synth` is set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds the split and model training. Synthetic data has its own seed.
    pub seed: u64,
    pub out: PathBuf,
    pub data: Option<DataConfig>,
    pub synth: Option<GenerativeConfig>,
    pub filter: Option<FilterConfig>,
    pub split: SplitSpec,
    pub models: Vec<ModelConfig>,
    pub modes: Vec<Mode>,
    pub eval: EvalConfig,
    /// Replace every θ with 0, which turns debiasing and correction into the
    /// identity.
    pub force_zero_theta: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("run"),
            data: None,
            synth: None,
            filter: None,
            split: SplitSpec::default(),
            models: ModelConfig::all_defaults(),
            modes: Mode::ALL.to_vec(),
            eval: EvalConfig::default(),
            force_zero_theta: false,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML file. Relative data paths are taken relative to the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let (Some(data), Some(dir)) = (cfg.data.as_mut(), path.parent()) {
            for p in [&mut data.ratings, &mut data.catalog] {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.synth) {
            (Some(d), None) => {
                delimiter_byte(d.delimiter)?;
            }
            (None, Some(s)) => s.validate()?,
            _ => {
                return Err(Error::Config(
                    "set exactly one of [data] and [synth]".into(),
                ))
            }
        }
        self.split.validate()?;
        if self.models.is_empty() {
            return Err(Error::Config("no models configured".into()));
        }
        for m in &self.models {
            m.validate()?;
        }
        let mut names: Vec<_> = self.models.iter().map(ModelConfig::name).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("each algorithm may appear once".into()));
        }
        if self.modes.is_empty() {
            return Err(Error::Config("no modes configured".into()));
        }
        if self.eval.n == 0 {
            return Err(Error::Config("eval.n must be >= 1".into()));
        }
        if !(self.eval.bin_width > 0.0) {
            return Err(Error::Config("eval.bin_width must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    fn ordered_modes(&self) -> Vec<Mode> {
        let mut m = self.modes.clone();
        m.sort_unstable();
        m.dedup();
        m
    }
}

/// Dataset, split and input bias shared by every cell of an experiment.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: RatingsDataset,
    pub split: Split,
    /// θ per user from training rows and test users' visible ratings.
    pub theta: ThetaMap,
    pub relevance_threshold: f64,
    /// SHA-256 over the dataset's triples and labels.
    pub data_hash: String,
}

fn dataset_hash(ds: &RatingsDataset) -> String {
    let mut h = Sha256::new();
    h.update(ds.scale_max().to_le_bytes());
    for (u, i, r) in ds.id_triples() {
        h.update(u.as_bytes());
        h.update([0]);
        h.update(i.as_bytes());
        h.update([0]);
        h.update(r.to_le_bytes());
    }
    for (id, g) in ds.item_ids().iter().zip(ds.groups()) {
        h.update(id.as_bytes());
        h.update(g.code().as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<RatingsDataset> {
    let ds = match (&cfg.data, &cfg.synth) {
        (Some(d), _) => {
            let delim = delimiter_byte(d.delimiter)?;
            let catalog = ItemCatalog::load(&d.catalog, delim)?;
            let opts = LoadOptions {
                scale_max: d.scale_max,
                zero_policy: d.zero_policy,
                delimiter: delim,
            };
            let (ds, stats) = load_ratings(&d.ratings, &catalog, &opts)?;
            log::info!(
                "loaded {} ratings ({} zeros dropped, {} duplicates, {} uncatalogued)",
                ds.n_ratings(),
                stats.zeros_dropped,
                stats.duplicates,
                stats.uncatalogued_dropped
            );
            ds
        }
        (None, Some(s)) => generate_dataset(s)?.dataset,
        (None, None) => {
            return Err(Error::Config(
                "set exactly one of [data] and [synth]".into(),
            ))
        }
    };
    match &cfg.filter {
        Some(f) => filter_by_activity(&ds, f.min_item_ratings, f.min_user_ratings, f.mode),
        None => Ok(ds),
    }
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let dataset = load_dataset(cfg)?;
    let split = split_users(&dataset, &cfg.split, cfg.seed)?;
    if split.test_users.is_empty() {
        return Err(Error::Input("the split produced no test users".into()));
    }
    let theta = ThetaMap::from_matrix(split.visible_view().matrix(), dataset.groups());
    let theta = if cfg.force_zero_theta {
        theta.zeroed()
    } else {
        theta
    };
    let relevance_threshold = cfg
        .eval
        .relevance_threshold
        .unwrap_or_else(|| default_relevance_threshold(dataset.scale_max()));
    let data_hash = dataset_hash(&dataset);
    Ok(Prepared {
        dataset,
        split,
        theta,
        relevance_threshold,
        data_hash,
    })
}

/// Output of one (algorithm, mode) cell.
#[derive(Clone, Debug)]
pub struct CellOutput {
    pub algorithm: &'static str,
    pub mode: Mode,
    pub report: MetricsReport,
    /// One score per test user, in test-user order.
    pub theta_tilde: Vec<UserBiasScore>,
    pub recommendations: Vec<RecommendationProfile>,
}

struct UserEval {
    pairs: Vec<(f64, f64)>,
    bias: UserBiasScore,
    ndcg: Option<f64>,
    mrr: Option<f64>,
    profile: RecommendationProfile,
}

/// Identifies the data, split, evaluation settings and algorithm of a cell.
/// Cells that differ only in mode share it.
pub fn cell_fingerprint(prep: &Prepared, cfg: &ExperimentConfig, model: &ModelConfig) -> String {
    let mut h = Sha256::new();
    h.update(prep.data_hash.as_bytes());
    h.update(prep.split.partition_hash().as_bytes());
    h.update(
        serde_json::to_string(&cfg.eval)
            .expect("serializes")
            .as_bytes(),
    );
    h.update(serde_json::to_string(model).expect("serializes").as_bytes());
    h.update(cfg.seed.to_le_bytes());
    hex::encode(&h.finalize()[..8])
}

/// Evaluates one trained model in one mode over every test user.
pub fn evaluate_cell(
    prep: &Prepared,
    cfg: &ExperimentConfig,
    model: &TrainedModel,
    mode: Mode,
    fingerprint: &str,
) -> Result<CellOutput> {
    let groups = prep.dataset.groups();
    let eval = &cfg.eval;
    let per_user: Vec<UserEval> = prep
        .split
        .test_users
        .par_iter()
        .map(|t| -> Result<UserEval> {
            let theta = prep.theta.theta(t.user).unwrap_or(0.0);
            let visible = if mode.debiased() {
                debias_row(&t.visible, groups, theta)
            } else {
                t.visible.clone()
            };
            let state = model.fold_in(&visible)?;
            let mut held: Vec<(u32, f64)> = t
                .held_out
                .iter()
                .map(|&(i, _)| (i, model.predict(&state, i)))
                .collect();
            let mut exclusions: Vec<u32> = t.visible.iter().map(|e| e.0).collect();
            exclusions.sort_unstable();
            let mut scored = model.score_candidates(&state, &exclusions);
            if mode == Mode::Full {
                preference_correct_user(&mut held, groups, theta);
                preference_correct_user(&mut scored, groups, theta);
            }
            let profile = rank_top_n(t.user, scored, eval.n);
            let bias = match eval.bias_scope {
                BiasScope::TopN => recommendation_log_bias(&profile, groups),
                BiasScope::AllPairs => recommendation_log_bias(
                    &RecommendationProfile {
                        user: t.user,
                        items: held.clone(),
                        short: false,
                    },
                    groups,
                ),
            };
            let relevant = relevant_gains(&t.held_out, prep.relevance_threshold, eval.gain);
            let ranked: Vec<u32> = profile.items.iter().map(|e| e.0).collect();
            let pairs = held
                .iter()
                .zip(&t.held_out)
                .map(|(p, t)| (p.1, t.1))
                .collect();
            Ok(UserEval {
                pairs,
                bias,
                ndcg: ndcg_at_n(&ranked, &relevant, eval.n)?,
                mrr: mrr(&ranked, &relevant),
                profile,
            })
        })
        .collect::<Result<_>>()?;

    let scale = prep.dataset.scale_max();
    let pairs: Vec<(f64, f64)> = per_user
        .iter()
        .flat_map(|u| u.pairs.iter().copied())
        .collect();
    let theta_tilde: Vec<UserBiasScore> = per_user.iter().map(|u| u.bias).collect();
    let agg = aggregate_bias(&theta_tilde, eval.bin_width)?;
    let ndcgs: Vec<f64> = per_user.iter().filter_map(|u| u.ndcg).collect();
    let mrrs: Vec<f64> = per_user.iter().filter_map(|u| u.mrr).collect();
    let avg = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let report = MetricsReport {
        mean_log_bias: agg.mean,
        std_log_bias: agg.std,
        n_bias_users: agg.n_defined,
        rmse: rmse(&pairs, scale)?,
        mae: mae(&pairs, scale)?,
        ndcg: avg(&ndcgs),
        mrr: avg(&mrrs),
        n_users: per_user.len(),
        fingerprint: fingerprint.to_string(),
    };
    report.validate()?;
    Ok(CellOutput {
        algorithm: model.algorithm(),
        mode,
        report,
        theta_tilde,
        recommendations: per_user.into_iter().map(|u| u.profile).collect(),
    })
}

/// Every configured cell, in algorithm order then mode order. A failing
/// cell is recorded without stopping the others.
pub struct ExperimentOutput {
    pub prepared: Prepared,
    pub cells: Vec<(&'static str, Mode, Result<CellOutput>)>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    let prepared = prepare(cfg)?;
    let cells = run_cells(&prepared, cfg);
    Ok(ExperimentOutput { prepared, cells })
}

fn run_cells(
    prep: &Prepared,
    cfg: &ExperimentConfig,
) -> Vec<(&'static str, Mode, Result<CellOutput>)> {
    let modes = cfg.ordered_modes();
    let user_ids = prep.dataset.user_ids();
    let debiased_train = if modes.iter().any(|m| m.debiased()) {
        Some(
            debias_ratings(
                prep.split.train.matrix(),
                prep.dataset.groups(),
                &prep.theta,
                user_ids,
            )
            .map(|d| d.matrix),
        )
    } else {
        None
    };
    let mut out = Vec::new();
    for model_cfg in &cfg.models {
        let name = model_cfg.name();
        let fingerprint = cell_fingerprint(prep, cfg, model_cfg);
        let raw_model = modes
            .contains(&Mode::Baseline)
            .then(|| train(prep.split.train.matrix(), model_cfg, cfg.seed));
        let debiased_model = debiased_train.as_ref().map(|m| match m {
            Ok(m) => train(m, model_cfg, cfg.seed),
            Err(e) => Err(Error::Input(format!("debiasing failed: {e}"))),
        });
        for &mode in &modes {
            let model = if mode.debiased() {
                &debiased_model
            } else {
                &raw_model
            };
            let result = match model.as_ref().expect("trained for every configured mode") {
                Ok(m) => evaluate_cell(prep, cfg, m, mode, &fingerprint),
                Err(e) => Err(Error::Input(format!("training failed: {e}"))),
            };
            if let Err(e) = &result {
                log::error!("cell {name}/{}: {e}", mode.name());
            }
            out.push((name, mode, result));
        }
    }
    out
}

/// γ̂ over the input θ map.
pub fn input_gamma(prep: &Prepared) -> Option<f64> {
    global_bias(prep.theta.scores()).gamma_hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recommenders::{AlsConfig, KnnConfig};
    use crate::synth::Distribution;

    fn synth_cfg() -> ExperimentConfig {
        ExperimentConfig {
            seed: 3,
            synth: Some(GenerativeConfig {
                users: 60,
                items: 40,
                density: 0.6,
                bias_population: Distribution::PointMass { value: 0.3 },
                seed: 5,
                ..Default::default()
            }),
            models: vec![
                ModelConfig::UserKnn(KnnConfig::default()),
                ModelConfig::Als(AlsConfig {
                    factors: 4,
                    iterations: 5,
                    ..Default::default()
                }),
            ],
            eval: EvalConfig {
                bias_scope: BiasScope::AllPairs,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_requires_one_source() {
        let mut c = synth_cfg();
        c.validate().unwrap();
        c.synth = None;
        assert!(c.validate().is_err());
    }

    #[test]
    fn config_parses_from_toml() {
        let text = r#"
            seed = 7
            modes = ["baseline", "full"]
            [synth]
            users = 50
            bias_population = { family = "point-mass", value = 0.3 }
            [[models]]
            algorithm = "svd"
            epochs = 3
            [eval]
            bias_scope = "all-pairs"
        "#;
        let c: ExperimentConfig = toml::from_str(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.modes, vec![Mode::Baseline, Mode::Full]);
        assert_eq!(c.eval.bias_scope, BiasScope::AllPairs);
        assert_eq!(c.models[0].name(), "svd");
    }

    #[test]
    fn every_cell_succeeds_and_shares_fingerprints() {
        let out = run_experiment(&synth_cfg()).unwrap();
        assert_eq!(out.cells.len(), 6);
        for (_, _, r) in &out.cells {
            let c = r.as_ref().unwrap();
            assert_eq!(c.theta_tilde.len(), out.prepared.split.test_users.len());
        }
        let fp = |k: usize| out.cells[k].2.as_ref().unwrap().report.fingerprint.clone();
        assert_eq!(fp(0), fp(2));
        assert_ne!(fp(0), fp(3));
    }

    #[test]
    fn single_group_lists_fail_only_their_cell() {
        let mut cfg = synth_cfg();
        cfg.eval.bias_scope = BiasScope::TopN;
        cfg.eval.n = 1;
        let out = run_experiment(&cfg).unwrap();
        for (_, _, r) in &out.cells {
            assert!(matches!(r, Err(Error::Metric(_))));
        }
    }

    #[test]
    fn zero_theta_makes_modes_identical() {
        let mut cfg = synth_cfg();
        cfg.force_zero_theta = true;
        let out = run_experiment(&cfg).unwrap();
        for chunk in out.cells.chunks(3) {
            let base = chunk[0].2.as_ref().unwrap();
            for other in &chunk[1..] {
                let o = other.2.as_ref().unwrap();
                assert_eq!(o.report, base.report);
                assert_eq!(o.recommendations, base.recommendations);
                assert_eq!(o.theta_tilde, base.theta_tilde);
            }
        }
    }
}
