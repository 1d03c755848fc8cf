use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::run::{cell_dir, list_outputs, write_text, ExitStatus, RunManifest};
use super::Mode;
use crate::bias::UserBiasScore;
use crate::dataset::csv_reader;
use crate::error::{Error, Result};
use crate::eval::{
    compare, format_pct, paired_z_test, z_test_left, MetricsReport, SignificanceResult,
};

/// Mode pairs compared in the significance and percentage tables.
const PAIRS: [(Mode, Mode); 3] = [
    (Mode::Baseline, Mode::DebiasOnly),
    (Mode::Baseline, Mode::Full),
    (Mode::Full, Mode::DebiasOnly),
];

#[derive(Clone, Debug)]
pub struct ReportSummary {
    pub dir: PathBuf,
    /// Expected cells without a readable `metrics.txt`.
    pub missing: Vec<(String, Mode)>,
    pub status: ExitStatus,
}

struct Cell {
    algorithm: String,
    mode: Mode,
    report: Option<MetricsReport>,
    dir: PathBuf,
}

fn read_theta_tilde(path: &Path) -> Result<Vec<(String, UserBiasScore)>> {
    let mut reader = csv_reader(path, b',')?;
    let mut out = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::Parse {
            path: path.display().to_string(),
            line: k as u64 + 2,
            message: format!("bad {what}"),
        };
        if record.len() != 5 {
            return Err(bad("field count"));
        }
        let score = UserBiasScore {
            user: k as u32,
            theta: record[1].parse().map_err(|_| bad("theta"))?,
            defined: record[2].parse().map_err(|_| bad("defined flag"))?,
            m: record[3].parse().map_err(|_| bad("m"))?,
            n: record[4].parse().map_err(|_| bad("n"))?,
        };
        out.push((record[0].to_string(), score));
    }
    Ok(out)
}

fn paired(before: &Cell, after: &Cell) -> Result<SignificanceResult> {
    let b = read_theta_tilde(&before.dir.join("theta_tilde.csv"))?;
    let a = read_theta_tilde(&after.dir.join("theta_tilde.csv"))?;
    if b.len() != a.len() || b.iter().zip(&a).any(|(x, y)| x.0 != y.0) {
        return Err(Error::Input(
            "cells do not cover the same test users".into(),
        ));
    }
    let strip = |v: Vec<(String, UserBiasScore)>| v.into_iter().map(|e| e.1).collect::<Vec<_>>();
    paired_z_test(&strip(b), &strip(a))
}

fn num(v: f64) -> String {
    v.to_string()
}

fn opt(v: Option<f64>) -> String {
    v.map_or("NA".into(), num)
}

/// Writes `report/table2.csv`, `report/table3.csv`, `report/comparison.csv`
/// and `report/histograms/` for a run directory.
pub fn cmd_report(run_dir: impl AsRef<Path>) -> Result<ReportSummary> {
    let dir = run_dir.as_ref().to_path_buf();
    let manifest = RunManifest::load(&dir)?;
    let cells: Vec<Cell> = manifest
        .cells
        .iter()
        .map(|c| {
            let cdir = dir.join(cell_dir(&c.algorithm, c.mode));
            let report = std::fs::read_to_string(cdir.join("metrics.txt"))
                .ok()
                .and_then(|t| match t.parse::<MetricsReport>() {
                    Ok(r) => Some(r),
                    Err(e) => {
                        log::warn!("{}/{}: {e}", c.algorithm, c.mode.name());
                        None
                    }
                });
            Cell {
                algorithm: c.algorithm.clone(),
                mode: c.mode,
                report,
                dir: cdir,
            }
        })
        .collect();
    let missing: Vec<(String, Mode)> = cells
        .iter()
        .filter(|c| c.report.is_none())
        .map(|c| (c.algorithm.clone(), c.mode))
        .collect();
    let out = dir.join("report");

    let mut t2 = String::from(
        "algorithm,mode,mean_log_bias,std_log_bias,n_bias_users,rmse,mae,ndcg,mrr,n_users\n",
    );
    for c in &cells {
        match &c.report {
            Some(r) => {
                let _ = writeln!(
                    t2,
                    "{},{},{},{},{},{},{},{},{},{}",
                    c.algorithm,
                    c.mode.name(),
                    num(r.mean_log_bias),
                    opt(r.std_log_bias),
                    r.n_bias_users,
                    num(r.rmse),
                    num(r.mae),
                    num(r.ndcg),
                    num(r.mrr),
                    r.n_users
                );
            }
            None => {
                let _ = writeln!(
                    t2,
                    "{},{},NA,NA,NA,NA,NA,NA,NA,NA",
                    c.algorithm,
                    c.mode.name()
                );
            }
        }
    }
    write_text(&out.join("table2.csv"), &t2)?;

    let mut t3 = String::from(
        "algorithm,before,after,x_bar,mu,sigma,n,z,p,paired_n,paired_mean_diff,paired_z,paired_p\n",
    );
    let mut cmp = String::from(
        "algorithm,before,after,bias_reduction_pct,rmse_loss_pct,mae_loss_pct,ndcg_loss_pct,mrr_loss_pct\n",
    );
    let mut algorithms: Vec<&str> = Vec::new();
    for c in &cells {
        if !algorithms.contains(&c.algorithm.as_str()) {
            algorithms.push(&c.algorithm);
        }
    }
    for algo in &algorithms {
        let find = |m: Mode| cells.iter().find(|c| c.algorithm == *algo && c.mode == m);
        for (before_mode, after_mode) in PAIRS {
            let (Some(before), Some(after)) = (find(before_mode), find(after_mode)) else {
                continue;
            };
            let label = format!("{algo},{},{}", before_mode.name(), after_mode.name());
            let (Some(rb), Some(ra)) = (&before.report, &after.report) else {
                let _ = writeln!(t3, "{label},NA,NA,NA,NA,NA,NA,NA,NA,NA,NA");
                let _ = writeln!(cmp, "{label},NA,NA,NA,NA,NA");
                continue;
            };
            let z = rb
                .std_log_bias
                .ok_or_else(|| Error::Metric("baseline spread undefined".into()))
                .and_then(|s| z_test_left(ra.mean_log_bias, rb.mean_log_bias, s, ra.n_bias_users));
            let z_cols = match z {
                Ok(z) => format!(
                    "{},{},{},{},{},{}",
                    num(z.x_bar),
                    num(z.mu),
                    num(z.sigma),
                    z.n,
                    num(z.z),
                    num(z.p)
                ),
                Err(_) => "NA,NA,NA,NA,NA,NA".into(),
            };
            let p_cols = match paired(before, after) {
                Ok(p) => format!("{},{},{},{}", p.n, num(p.x_bar), num(p.z), num(p.p)),
                Err(e) => {
                    log::debug!("{label}: no paired test: {e}");
                    "NA,NA,NA,NA".into()
                }
            };
            let _ = writeln!(t3, "{label},{z_cols},{p_cols}");
            match compare(rb, ra) {
                Ok(c) => {
                    let _ = writeln!(
                        cmp,
                        "{label},{},{},{},{},{}",
                        format_pct(c.bias_reduction_pct),
                        format_pct(c.rmse_loss_pct),
                        format_pct(c.mae_loss_pct),
                        format_pct(c.ndcg_loss_pct),
                        format_pct(c.mrr_loss_pct)
                    );
                }
                Err(e) => {
                    log::warn!("{label}: {e}");
                    let _ = writeln!(cmp, "{label},NA,NA,NA,NA,NA");
                }
            }
        }
    }
    write_text(&out.join("table3.csv"), &t3)?;
    write_text(&out.join("comparison.csv"), &cmp)?;

    let hist = out.join("histograms");
    let input_hist = dir.join("input").join("theta_histogram.csv");
    if input_hist.exists() {
        copy(&input_hist, &hist.join("theta.csv"))?;
    }
    for c in cells.iter().filter(|c| c.report.is_some()) {
        let src = c.dir.join("theta_tilde_histogram.csv");
        if src.exists() {
            copy(
                &src,
                &hist.join(format!("theta_tilde_{}_{}.csv", c.algorithm, c.mode.name())),
            )?;
        }
    }

    let mut manifest = manifest;
    manifest.outputs = list_outputs(&dir)?;
    manifest.write(&dir)?;

    let status = if cells.is_empty() || missing.len() == cells.len() {
        ExitStatus::Failure
    } else if missing.is_empty() {
        ExitStatus::Success
    } else {
        ExitStatus::Partial
    };
    Ok(ReportSummary {
        dir,
        missing,
        status,
    })
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    if let Some(d) = to.parent() {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    std::fs::copy(from, to)
        .map(|_| ())
        .map_err(|e| Error::io(from, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::{cmd_run, BiasScope, EvalConfig, ExperimentConfig};
    use crate::recommenders::{KnnConfig, ModelConfig};
    use crate::synth::{Distribution, GenerativeConfig};

    #[test]
    fn removed_cell_shows_as_gap() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            synth: Some(GenerativeConfig {
                users: 40,
                items: 30,
                density: 0.6,
                bias_population: Distribution::PointMass { value: 0.3 },
                ..Default::default()
            }),
            models: vec![ModelConfig::UserKnn(KnnConfig::default())],
            eval: EvalConfig {
                bias_scope: BiasScope::AllPairs,
                ..Default::default()
            },
            ..Default::default()
        };
        cmd_run(&cfg, Some(dir.path())).unwrap();
        let full = cmd_report(dir.path()).unwrap();
        assert_eq!(full.status, ExitStatus::Success);
        let table3 = std::fs::read_to_string(dir.path().join("report/table3.csv")).unwrap();
        assert_eq!(table3.lines().count(), 4);
        assert!(!table3.contains("NA"));

        std::fs::remove_file(dir.path().join("cells/user-knn/full/metrics.txt")).unwrap();
        let partial = cmd_report(dir.path()).unwrap();
        assert_eq!(partial.status, ExitStatus::Partial);
        assert_eq!(partial.missing, vec![("user-knn".to_string(), Mode::Full)]);
        let table2 = std::fs::read_to_string(dir.path().join("report/table2.csv")).unwrap();
        assert!(table2.contains("user-knn,full,NA"));
    }
}
