use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    delimiter_byte, input_gamma, prepare, run_cells, CellOutput, ExperimentConfig, FilterConfig,
    Mode, Prepared,
};
use crate::bias::{histogram, write_histogram, write_scores};
use crate::dataset::{
    csv_reader, csv_writer, filter_by_activity, load_ratings, ItemCatalog, LoadOptions, ZeroPolicy,
};
use crate::enrichment::{enrich_catalog, DropReport, EnrichConfig};
use crate::error::{Error, Result};
use crate::synth::{generate_dataset, GenerativeConfig, SyntheticDataset};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "recbias-run";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitStatus {
    Success,
    /// Some cells or items failed.
    Partial,
    Failure,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Success => 0,
            ExitStatus::Failure => 1,
            ExitStatus::Partial => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellEntry {
    pub algorithm: String,
    pub mode: Mode,
    pub ok: bool,
    pub fingerprint: Option<String>,
    pub error: Option<String>,
}

/// Root file of a run directory. It is written with status `running` before
/// any result and rewritten once every output exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub format_version: u32,
    pub tool_version: String,
    pub config_fingerprint: String,
    pub seed: u64,
    pub synth_seed: Option<u64>,
    pub data_hash: Option<String>,
    /// Shared by every cell; a mismatch would make the modes unpaired.
    pub partition_hash: Option<String>,
    /// `running`, `complete`, `partial` or `failed`.
    pub status: String,
    pub error: Option<String>,
    pub cells: Vec<CellEntry>,
    /// Paths relative to the run directory, sorted.
    pub outputs: Vec<String>,
    pub timings: Option<BTreeMap<String, f64>>,
}

impl RunManifest {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            format: FORMAT.into(),
            format_version: FORMAT_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_fingerprint: cfg.fingerprint(),
            seed: cfg.seed,
            synth_seed: cfg.synth.as_ref().map(|s| s.seed),
            data_hash: None,
            partition_hash: None,
            status: "running".into(),
            error: None,
            cells: Vec::new(),
            outputs: Vec::new(),
            timings: None,
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.format != FORMAT {
            return Err(Error::Input(format!(
                "{} is not a run manifest",
                path.display()
            )));
        }
        Ok(m)
    }

    pub(crate) fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST);
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        write_text(&path, &text)
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub status: ExitStatus,
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn remove_if_present(path: &Path) -> Result<()> {
    let res = if path.is_dir() {
        std::fs::remove_dir_all(path)
    } else if path.exists() {
        std::fs::remove_file(path)
    } else {
        return Ok(());
    };
    res.map_err(|e| Error::io(path, e))
}

/// Creates `dir`, clearing the results of an earlier run. A non-empty
/// directory without a manifest is left alone.
fn claim_run_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !dir.join(MANIFEST).exists() {
            return Err(Error::Config(format!(
                "{} is not empty and holds no run manifest",
                dir.display()
            )));
        }
        for sub in ["cells", "input", "report", "config.toml", MANIFEST] {
            remove_if_present(&dir.join(sub))?;
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub(crate) fn list_outputs(dir: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            if path.is_dir() {
                walk(root, &path, out)?;
            } else {
                let rel = path.strip_prefix(root).expect("under root");
                let rel: Vec<_> = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect();
                out.push(rel.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(dir, dir, &mut out)?;
    out.retain(|p| p != MANIFEST);
    out.sort();
    Ok(out)
}

pub(crate) fn cell_dir(algorithm: &str, mode: Mode) -> PathBuf {
    Path::new("cells").join(algorithm).join(mode.name())
}

fn write_input(dir: &Path, prep: &Prepared, cfg: &ExperimentConfig) -> Result<()> {
    let input = dir.join("input");
    let ids = prep.dataset.user_ids();
    prep.theta.write(input.join("theta.csv"), ids)?;
    let defined: Vec<f64> = prep
        .theta
        .scores()
        .filter(|s| s.defined)
        .map(|s| s.theta)
        .collect();
    write_histogram(
        input.join("theta_histogram.csv"),
        &histogram(&defined, cfg.eval.bin_width)?,
    )?;
    let mut s = String::new();
    let ds = &prep.dataset;
    let (advantaged, disadvantaged) = ds.catalog().counts();
    let gamma = input_gamma(prep).map_or("NA".to_string(), |g| g.to_string());
    let _ = writeln!(s, "users={}", ds.n_users());
    let _ = writeln!(s, "items={}", ds.n_items());
    let _ = writeln!(s, "items_advantaged={advantaged}");
    let _ = writeln!(s, "items_disadvantaged={disadvantaged}");
    let _ = writeln!(s, "ratings={}", ds.n_ratings());
    let _ = writeln!(s, "test_users={}", prep.split.test_users.len());
    let _ = writeln!(s, "excluded_test_users={}", prep.split.excluded);
    let _ = writeln!(s, "theta_defined={}", defined.len());
    let _ = writeln!(s, "gamma_hat={gamma}");
    let _ = writeln!(s, "relevance_threshold={}", prep.relevance_threshold);
    let _ = writeln!(s, "n={}", cfg.eval.n);
    let _ = writeln!(s, "partition_hash={}", prep.split.partition_hash());
    write_text(&input.join("summary.txt"), &s)
}

fn write_cell(dir: &Path, prep: &Prepared, cell: &CellOutput, bin_width: f64) -> Result<()> {
    let ids = prep.dataset.user_ids();
    let items = prep.dataset.item_ids();
    write_text(&dir.join("metrics.txt"), &cell.report.to_string())?;
    write_scores(dir.join("theta_tilde.csv"), &cell.theta_tilde, ids)?;
    let defined: Vec<f64> = cell
        .theta_tilde
        .iter()
        .filter(|s| s.defined)
        .map(|s| s.theta)
        .collect();
    write_histogram(
        dir.join("theta_tilde_histogram.csv"),
        &histogram(&defined, bin_width)?,
    )?;
    // Ranking used the raw scores; only the reported rating is clamped.
    let r_max = prep.dataset.scale_max();
    let path = dir.join("recommendations.csv");
    let mut w = csv_writer(&path, b',')?;
    w.write_record(["user_id", "rank", "item_id", "score"])?;
    for p in &cell.recommendations {
        for (rank, &(item, score)) in p.items.iter().enumerate() {
            w.write_record([
                ids[p.user as usize].as_str(),
                &(rank + 1).to_string(),
                items[item as usize].as_str(),
                &score.clamp(1.0, r_max).to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Runs every configured cell into `out`, falling back to the configured
/// output directory.
pub fn cmd_run(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunSummary> {
    cfg.validate()?;
    let dir = out.unwrap_or(&cfg.out).to_path_buf();
    claim_run_dir(&dir)?;
    let mut manifest = RunManifest::new(cfg);
    manifest.write(&dir)?;
    let mut stored = cfg.clone();
    stored.out = PathBuf::from(".");
    let toml = toml::to_string(&stored)
        .map_err(|e| Error::Config(format!("cannot serialize config: {e}")))?;
    write_text(&dir.join("config.toml"), &toml)?;

    let mut timings = BTreeMap::new();
    let started = Instant::now();
    let prep = match prepare(cfg) {
        Ok(p) => p,
        Err(e) => {
            log::error!("preparation failed: {e}");
            manifest.status = "failed".into();
            manifest.error = Some(e.to_string());
            manifest.outputs = list_outputs(&dir)?;
            manifest.write(&dir)?;
            return Ok(RunSummary {
                dir,
                manifest,
                status: ExitStatus::Failure,
            });
        }
    };
    timings.insert("prepare".to_string(), started.elapsed().as_secs_f64());
    manifest.data_hash = Some(prep.data_hash.clone());
    manifest.partition_hash = Some(prep.split.partition_hash());
    write_input(&dir, &prep, cfg)?;

    let started = Instant::now();
    let cells = run_cells(&prep, cfg);
    timings.insert("cells".to_string(), started.elapsed().as_secs_f64());
    for (algorithm, mode, result) in cells {
        let sub = dir.join(cell_dir(algorithm, mode));
        let written =
            result.and_then(|c| write_cell(&sub, &prep, &c, cfg.eval.bin_width).map(|_| c));
        let entry = match written {
            Ok(c) => CellEntry {
                algorithm: algorithm.into(),
                mode,
                ok: true,
                fingerprint: Some(c.report.fingerprint.clone()),
                error: None,
            },
            Err(e) => {
                write_text(&sub.join("failure.txt"), &format!("{e}\n"))?;
                CellEntry {
                    algorithm: algorithm.into(),
                    mode,
                    ok: false,
                    fingerprint: None,
                    error: Some(e.to_string()),
                }
            }
        };
        manifest.cells.push(entry);
    }
    let n_ok = manifest.cells.iter().filter(|c| c.ok).count();
    let status = if n_ok == manifest.cells.len() {
        ExitStatus::Success
    } else if n_ok == 0 {
        ExitStatus::Failure
    } else {
        ExitStatus::Partial
    };
    manifest.status = match status {
        ExitStatus::Success => "complete",
        ExitStatus::Partial => "partial",
        ExitStatus::Failure => "failed",
    }
    .into();
    manifest.timings = cfg.eval.timings.then_some(timings);
    manifest.outputs = list_outputs(&dir)?;
    manifest.write(&dir)?;
    Ok(RunSummary {
        dir,
        manifest,
        status,
    })
}

#[derive(Clone, Debug)]
pub struct PrepareArgs {
    pub ratings: PathBuf,
    pub catalog: PathBuf,
    pub scale_max: f64,
    pub zero_policy: ZeroPolicy,
    pub delimiter: char,
    pub filter: FilterConfig,
    pub out: PathBuf,
}

/// Loads and filters a ratings file, writing `ratings.csv`, `catalog.csv`
/// and `summary.txt` into `out`.
pub fn cmd_prepare(args: &PrepareArgs) -> Result<()> {
    let delim = delimiter_byte(args.delimiter)?;
    let catalog = ItemCatalog::load(&args.catalog, delim)?;
    let opts = LoadOptions {
        scale_max: args.scale_max,
        zero_policy: args.zero_policy,
        delimiter: delim,
    };
    let (ds, stats) = load_ratings(&args.ratings, &catalog, &opts)?;
    let f = &args.filter;
    let filtered = filter_by_activity(&ds, f.min_item_ratings, f.min_user_ratings, f.mode)?;
    filtered.write(args.out.join("ratings.csv"), b',')?;
    filtered
        .catalog()
        .write(args.out.join("catalog.csv"), b',')?;
    let mut s = String::new();
    let _ = writeln!(s, "rows_read={}", stats.rows_read);
    let _ = writeln!(s, "zeros_dropped={}", stats.zeros_dropped);
    let _ = writeln!(s, "duplicates={}", stats.duplicates);
    let _ = writeln!(s, "uncatalogued_dropped={}", stats.uncatalogued_dropped);
    let _ = writeln!(s, "users={}", filtered.n_users());
    let _ = writeln!(s, "items={}", filtered.n_items());
    let _ = writeln!(s, "ratings={}", filtered.n_ratings());
    write_text(&args.out.join("summary.txt"), &s)
}

pub fn cmd_synth(cfg: &GenerativeConfig, out: &Path) -> Result<SyntheticDataset> {
    let data = generate_dataset(cfg)?;
    data.write(out)?;
    Ok(data)
}

/// Reads item ids from the second column of a `user,item,rating` file, or
/// the first column of a one-column list.
pub fn read_item_ids(path: &Path, delimiter: char) -> Result<Vec<String>> {
    let mut reader = csv_reader(path, delimiter_byte(delimiter)?)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        let field = match record.len() {
            1 => &record[0],
            n if n >= 2 => &record[1],
            _ => continue,
        };
        if !field.is_empty() {
            out.push(field.to_string());
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct EnrichSummary {
    pub catalog: ItemCatalog,
    pub drops: DropReport,
    pub status: ExitStatus,
}

/// Labels the items of `input` and writes `catalog.csv` and `drops.csv`
/// into `out`. Dropping every item of a non-empty input is a total failure.
pub fn cmd_enrich(
    input: &Path,
    delimiter: char,
    cfg: &EnrichConfig,
    out: &Path,
) -> Result<EnrichSummary> {
    cfg.validate()?;
    let ids = read_item_ids(input, delimiter)?;
    let providers = cfg.build_providers()?;
    let cache = cfg.open_cache()?;
    let (catalog, drops) = enrich_catalog(&ids, cfg, &providers, &cache)?;
    catalog.write(out.join("catalog.csv"), b',')?;
    drops.write(out.join("drops.csv"))?;
    let status = if !ids.is_empty() && catalog.is_empty() {
        ExitStatus::Failure
    } else if drops.is_empty() {
        ExitStatus::Success
    } else {
        ExitStatus::Partial
    };
    log::info!(
        "labelled {} items, dropped {}, {} provider calls",
        catalog.len(),
        drops.len(),
        providers.calls()
    );
    Ok(EnrichSummary {
        catalog,
        drops,
        status,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{BiasScope, EvalConfig};
    use crate::recommenders::{KnnConfig, ModelConfig};
    use crate::synth::Distribution;

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            seed: 1,
            synth: Some(GenerativeConfig {
                users: 40,
                items: 30,
                density: 0.6,
                bias_population: Distribution::PointMass { value: 0.3 },
                seed: 2,
                ..Default::default()
            }),
            models: vec![ModelConfig::UserKnn(KnnConfig::default())],
            eval: EvalConfig {
                bias_scope: BiasScope::AllPairs,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn run_lists_every_output_and_stores_a_loadable_config() {
        let dir = tempfile::tempdir().unwrap();
        let run = dir.path().join("run");
        let s = cmd_run(&cfg(), Some(&run)).unwrap();
        assert_eq!(s.status, ExitStatus::Success);
        let m = RunManifest::load(&run).unwrap();
        assert_eq!(m.status, "complete");
        assert_eq!(m.outputs, list_outputs(&run).unwrap());
        assert!(m
            .outputs
            .contains(&"cells/user-knn/full/metrics.txt".to_string()));
        let back = ExperimentConfig::load(run.join("config.toml")).unwrap();
        assert_eq!(back.fingerprint(), cfg().fingerprint());
    }

    #[test]
    fn refuses_foreign_directories() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("precious.txt"), "x").unwrap();
        assert!(cmd_run(&cfg(), Some(dir.path())).is_err());
        assert!(dir.path().join("precious.txt").exists());
    }

    #[test]
    fn item_ids_come_from_either_layout() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        std::fs::write(&a, "user_id,item_id,rating\nu,i1,3\nv,i2,4\n").unwrap();
        let b = dir.path().join("b.csv");
        std::fs::write(&b, "isbn\ni3\n").unwrap();
        assert_eq!(read_item_ids(&a, ',').unwrap(), ["i1", "i2"]);
        assert_eq!(read_item_ids(&b, ',').unwrap(), ["i3"]);
    }
}
