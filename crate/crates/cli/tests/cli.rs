use std::path::{Path, PathBuf};
use std::process::Command;

use distreg::evalcv::{fit_scalar, ModelConfig, Outcome};
use distreg::represent::{represent_cohort, GridSpec, RepresentOptions};
use distreg::{Execution, RepresentationKind, SubjectSample};
use distreg_cli::commands::{cmd_fit, group_barycenters, load_cohort};
use distreg_cli::RunConfig;

fn run(dir: &Path, config: &str, args: &[&str]) -> i32 {
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_distreg"))
        .args(args)
        .arg("--config")
        .arg(&path)
        .env("RUST_LOG", "error")
        .status()
        .unwrap()
        .code()
        .unwrap()
}

fn small(out: &Path, extra: &str) -> String {
    format!(
        "seed = 5\noutput_dir = \"{}\"\n{extra}\n[synthetic]\npreset = \"table1-analog\"\nn_per_group = 15\nm = 150\nround_counts = true\n",
        out.display()
    )
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
    v.sort();
    v
}

#[test]
fn simulate_is_deterministic_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    assert_eq!(run(dir.path(), &small(&a, ""), &["simulate"]), 0);
    assert_eq!(run(dir.path(), &small(&b, ""), &["simulate"]), 0);
    assert_eq!(run(dir.path(), &small(&c, ""), &["simulate", "--seed", "6"]), 0);
    for f in ["epochs.csv", "outcomes.csv", "design.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(std::fs::read(a.join("epochs.csv")).unwrap(), std::fs::read(c.join("epochs.csv")).unwrap());
    let outcomes = std::fs::read_to_string(a.join("outcomes.csv")).unwrap();
    assert_eq!(outcomes.lines().count(), 31);
}

#[test]
fn simulated_files_feed_back_through_input() {
    let dir = tempfile::tempdir().unwrap();
    let sim = dir.path().join("sim");
    assert_eq!(run(dir.path(), &small(&sim, ""), &["simulate"]), 0);
    let config = format!(
        "output_dir = \"{}\"\nrepresentations = [\"scalar_mean\", \"quantile\"]\ntransform = \"raw\"\n\
         [input]\nepochs = \"{}\"\noutcomes = \"{}\"\n",
        dir.path().join("fit").display(),
        sim.join("epochs.csv").display(),
        sim.join("outcomes.csv").display()
    );
    assert_eq!(run(dir.path(), &config, &["fit"]), 0);
    let from_files = load_cohort(&RunConfig::from_toml(&config).unwrap()).unwrap();
    let direct = load_cohort(&RunConfig::from_toml(&small(&sim, "")).unwrap()).unwrap();
    assert_eq!(from_files, direct);
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    assert_eq!(run(dir.path(), &small(&out, "sed = 3"), &["simulate"]), 2);
    let zero = small(&out, "").replace("n_per_group = 15", "n_per_group = 0");
    assert_eq!(run(dir.path(), &zero, &["simulate"]), 2);
    let unseeded = small(&out, "").replace("seed = 5\n", "");
    assert_eq!(run(dir.path(), &unseeded, &["simulate"]), 2);
    assert_eq!(run(dir.path(), &small(&out, "link = \"identity\""), &["fit"]), 2);
    assert!(!out.join("epochs.csv").exists());
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let epochs = dir.path().join("epochs.csv");
    let outcomes = dir.path().join("outcomes.csv");
    std::fs::write(&epochs, "subject_id,timestamp,count\nA,2021-01-04T09:00,-4\n").unwrap();
    std::fs::write(&outcomes, "subject_id,edss\nA,2.5\n").unwrap();
    let config = format!(
        "output_dir = \"{}\"\n[input]\nepochs = \"{}\"\noutcomes = \"{}\"\n",
        dir.path().join("o").display(),
        epochs.display(),
        outcomes.display()
    );
    assert_eq!(run(dir.path(), &config, &["represent"]), 3);
}

#[test]
fn represent_emits_only_the_requested_family() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = small(&out, "representations = [\"quantile\"]\ntransform = \"raw\"");
    assert_eq!(run(dir.path(), &cfg, &["represent"]), 0);
    assert_eq!(files(&out), ["barycenter_quantile_raw.csv", "curves_quantile_raw.csv"]);
    let bary = std::fs::read_to_string(out.join("barycenter_quantile_raw.csv")).unwrap();
    assert!(bary.lines().any(|l| l.starts_with("group0,")) && bary.lines().any(|l| l.starts_with("group1,")));
}

#[test]
fn barycenters_match_brute_force_means() {
    let config = RunConfig::from_toml(&small(Path::new("unused"), "")).unwrap();
    let cohort = load_cohort(&config).unwrap();
    let unlabeled: Vec<SubjectSample> =
        cohort.iter().map(|s| SubjectSample { outcome_binary: None, ..s.clone() }).collect();
    let (_, curves) = represent_cohort(
        &unlabeled,
        &GridSpec::default(),
        RepresentationKind::Survival,
        &RepresentOptions::default(),
        Execution::Sequential,
    )
    .unwrap();
    let bary = group_barycenters(&unlabeled, &curves).unwrap();
    assert_eq!(bary.len(), 1);
    assert_eq!(bary[0].0, "all");
    for g in 0..curves[0].grid.len() {
        let mean = curves.iter().map(|c| c.values[g]).sum::<f64>() / curves.len() as f64;
        assert!((bary[0].1.values[g] - mean).abs() < 1e-15);
    }
    let one = group_barycenters(&unlabeled[..1], &curves[..1]).unwrap();
    assert_eq!(one[0].1, curves[0]);
}

fn json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn fit_reports_paths_and_scalar_dispatch() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = small(&out, "representations = [\"scalar_mean\", \"hazard\"]\ntransform = \"raw\"");
    let config = RunConfig::from_toml(&cfg.replace("n_per_group = 15", "n_per_group = 60")).unwrap();
    cmd_fit(&config, Execution::Parallel).unwrap();
    let hazard = json(out.join("fit_hazard_raw.json"));
    assert_eq!(hazard["fit"]["converged"], true);
    assert_eq!(hazard["path"].as_array().unwrap().len(), 50);
    assert!(out.join("coef_hazard_raw.csv").exists());

    let continuous = RunConfig {
        outcome: Outcome::Continuous,
        representations: vec![RepresentationKind::ScalarMean],
        ..config.clone()
    };
    cmd_fit(&continuous, Execution::Parallel).unwrap();
    let report = json(out.join("fit_scalar_mean_raw.json"));
    let cohort = load_cohort(&continuous).unwrap();
    let direct = fit_scalar(&cohort, Outcome::Continuous, &ModelConfig::default()).unwrap();
    let slope = report["fit"]["slope"].as_f64().unwrap();
    assert!((slope - direct.slope).abs() <= 1e-12 * direct.slope.abs().max(1.0));
    assert_eq!(report["fit"]["link"], "identity");
}

#[test]
fn crossval_and_biomarkers_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = small(&out, "transform = \"log1\"\n[cv]\nreplications = 2")
        .replace("preset = \"table1-analog\"", "preset = \"null\"")
        .replace("n_per_group = 15", "n_per_group = 25");
    assert_eq!(run(dir.path(), &cfg, &["crossval"]), 0);
    let table = std::fs::read_to_string(out.join("cv_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 7);
    assert!(table.lines().skip(1).all(|l| l.ends_with(",ok")));
    assert_eq!(std::fs::read_to_string(out.join("cv_differences.csv")).unwrap().lines().count(), 6);

    assert_eq!(run(dir.path(), &cfg, &["biomarkers"]), 0);
    let bm = std::fs::read_to_string(out.join("biomarkers_log1.csv")).unwrap();
    assert_eq!(bm.lines().next().unwrap(), "subject_id,DBM_f,DBM_S,DBM_lambda,DBM_Q,DBM_TTT,BM_a");
    assert_eq!(bm.lines().count(), 51);
    assert_eq!(std::fs::read_to_string(out.join("spearman_log1.csv")).unwrap().lines().count(), 7);
}

#[test]
fn failed_cells_are_marked_and_exit_with_4() {
    // perfectly separable groups at this size make some folds separate
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cfg = format!(
        "seed = 7\noutput_dir = \"{}\"\n[synthetic]\npreset = \"table1-analog\"\nn_per_group = 30\nm = 200\n\
         round_counts = true\n[cv]\nreplications = 3\n",
        out.display()
    );
    assert_eq!(run(dir.path(), &cfg, &["crossval"]), 4);
    let table = std::fs::read_to_string(out.join("cv_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 13);
    assert!(table.contains(",\"failed: "));
    assert!(table.lines().any(|l| l.ends_with(",ok")));
}
