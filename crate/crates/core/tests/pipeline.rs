use std::path::{Path, PathBuf};
use std::process::Command;

use recbias::dataset::GroupLabel;
use recbias::enrichment::EnrichConfig;
use recbias::experiment::{
    cmd_enrich, cmd_run, BiasScope, EvalConfig, ExitStatus, ExperimentConfig, Mode,
};
use recbias::recommenders::{KnnConfig, ModelConfig, SvdConfig};
use recbias::synth::{Distribution, GenerativeConfig};

const FIXTURE: &str = "\
# authors
author\t0306406152\tJane Austen\tJane\tfixture
author\t9780306406157\tSmith, John\tJohn\tfixture
author\t0131103628\tMaria Lopez and Ann Kay\tMaria\tfixture
author\t0201633612\tDr. Alex Park\tAlex\tfixture
# genders
gender\tJane\tfemale\t0.99\tfixture
gender\tJohn\tmale\t0.98\tfixture
gender\tMaria\tfemale\t0.97\tfixture
gender\tAlex\tmale\t0.95\tfixture
";

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn ratings_body() -> &'static str {
    "user_id,item_id,rating\n\
     u1,0306406152,8\n\
     u1,9780306406157,6\n\
     u2,0131103628,9\n\
     u2,0201633612,3\n\
     u3,080442957X,7\n\
     u3,0306406152,5\n"
}

#[test]
fn enrich_labels_four_of_five_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = write(dir.path(), "fixture.tsv", FIXTURE);
    let input = write(dir.path(), "ratings.csv", ratings_body());
    let cfg = EnrichConfig {
        fixtures: vec![fixture],
        cache: Some(dir.path().join("cache.tsv")),
        offline: true,
        ..EnrichConfig::default()
    };
    let out = dir.path().join("out");
    let first = cmd_enrich(&input, ',', &cfg, &out).unwrap();
    assert_eq!(first.catalog.len(), 4);
    assert_eq!(
        first.catalog.get("0306406152"),
        Some(GroupLabel::Disadvantaged)
    );
    assert_eq!(
        first.catalog.get("9780306406157"),
        Some(GroupLabel::Advantaged)
    );
    assert_eq!(first.drops.items.len(), 1);
    assert_eq!(first.drops.items[0].isbn, "080442957X");
    assert_eq!(first.status, ExitStatus::Partial);

    let catalog = std::fs::read(out.join("catalog.csv")).unwrap();
    let drops = std::fs::read(out.join("drops.csv")).unwrap();
    let cache = std::fs::read(dir.path().join("cache.tsv")).unwrap();
    cmd_enrich(&input, ',', &cfg, &out).unwrap();
    assert_eq!(std::fs::read(out.join("catalog.csv")).unwrap(), catalog);
    assert_eq!(std::fs::read(out.join("drops.csv")).unwrap(), drops);
    assert_eq!(std::fs::read(dir.path().join("cache.tsv")).unwrap(), cache);
}

#[test]
fn offline_without_sources_drops_everything() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "ratings.csv", ratings_body());
    let cfg = EnrichConfig {
        offline: true,
        ..EnrichConfig::default()
    };
    let s = cmd_enrich(&input, ',', &cfg, &dir.path().join("out")).unwrap();
    assert!(s.catalog.is_empty());
    assert_eq!(s.drops.items.len(), 5);
    assert_eq!(s.status, ExitStatus::Failure);
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 9,
        synth: Some(GenerativeConfig {
            users: 80,
            items: 50,
            density: 0.4,
            bias_population: Distribution::PointMass { value: 0.3 },
            seed: 3,
            ..Default::default()
        }),
        models: vec![
            ModelConfig::UserKnn(KnnConfig::default()),
            ModelConfig::Svd(SvdConfig {
                epochs: 5,
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
fn zero_theta_makes_baseline_and_debias_only_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config();
    cfg.force_zero_theta = true;
    let run = cmd_run(&cfg, Some(dir.path())).unwrap();
    assert_eq!(run.status, ExitStatus::Success);
    for algo in ["user-knn", "svd"] {
        let cell = |m: Mode| dir.path().join("cells").join(algo).join(m.name());
        for file in ["metrics.txt", "theta_tilde.csv", "recommendations.csv"] {
            let base = std::fs::read(cell(Mode::Baseline).join(file)).unwrap();
            for m in [Mode::DebiasOnly, Mode::Full] {
                assert_eq!(
                    std::fs::read(cell(m).join(file)).unwrap(),
                    base,
                    "{algo}/{}/{file}",
                    m.name()
                );
            }
        }
    }
}

#[test]
fn modes_share_one_partition() {
    let dir = tempfile::tempdir().unwrap();
    let run = cmd_run(&small_config(), Some(dir.path())).unwrap();
    let fingerprints: Vec<_> = run
        .manifest
        .cells
        .iter()
        .filter(|c| c.algorithm == "svd")
        .map(|c| c.fingerprint.clone().unwrap())
        .collect();
    assert_eq!(fingerprints.len(), 3);
    assert!(fingerprints.windows(2).all(|w| w[0] == w[1]));
    let summary = std::fs::read_to_string(dir.path().join("input/summary.txt")).unwrap();
    let hash = run.manifest.partition_hash.unwrap();
    assert!(summary.contains(&format!("partition_hash={hash}")));
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recbias"))
}

#[test]
fn cli_synth_run_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = write(
        d,
        "synth.toml",
        "users = 60\nitems = 40\ndensity = 0.5\nbias_population = { family = \"point-mass\", value = 0.3 }\n",
    );
    let status = bin()
        .args(["synth", "--config"])
        .arg(&synth)
        .arg("--out")
        .arg(d.join("data"))
        .args(["--seed", "5"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    assert!(d.join("data/ratings.csv").exists());

    let exp = write(
        d,
        "exp.toml",
        "seed = 2\nmodes = [\"baseline\", \"full\"]\n\
         [data]\nratings = \"data/ratings.csv\"\ncatalog = \"data/catalog.csv\"\nscale_max = 10\n\
         [[models]]\nalgorithm = \"item-knn\"\n\
         [eval]\nbias_scope = \"all-pairs\"\n",
    );
    let status = bin()
        .arg("run")
        .arg(&exp)
        .arg("--out")
        .arg(d.join("run"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let status = bin().arg("report").arg(d.join("run")).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let cmp = std::fs::read_to_string(d.join("run/report/comparison.csv")).unwrap();
    assert!(cmp
        .lines()
        .any(|l| l.starts_with("item-knn,baseline,full,")));

    std::fs::remove_file(d.join("run/cells/item-knn/full/metrics.txt")).unwrap();
    let status = bin().arg("report").arg(d.join("run")).status().unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn cli_prepare_filters_and_bad_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ratings = write(
        d,
        "r.csv",
        "user_id,item_id,rating\na,x,4\na,y,5\nb,x,3\nc,y,2\nc,x,1\n",
    );
    let catalog = write(d, "c.csv", "item_id,group\nx,A\ny,D\n");
    let status = bin()
        .arg("prepare")
        .arg("--ratings")
        .arg(&ratings)
        .arg("--catalog")
        .arg(&catalog)
        .args(["--min-user-ratings", "2"])
        .arg("--out")
        .arg(d.join("prep"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let out = std::fs::read_to_string(d.join("prep/ratings.csv")).unwrap();
    assert!(!out.contains("b,"));
    assert_eq!(out.lines().count(), 5);

    let bad = write(d, "bad.toml", "seed = 1\n");
    let status = bin().arg("run").arg(&bad).status().unwrap();
    assert_eq!(status.code(), Some(1));
}
