use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
total_timesteps = 2000
n_interventions = 2
n_runs = 2
n_eval_points = 3
seed = 3

[data]
kind = "synthetic"
n_train = 20
n_test = 20
docs_per_query = 10
n_features = 8
seed = 2

[policy]
model = "linear"
temperature = 0.1
steps = 500

[optimizer]
learning_rate = 0.1
n_epochs_max = 4
"#;

fn ltr_lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltr-lab")).args(args).env_remove("LTR_LAB_OUT").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("c.toml");
    fs::write(&path, text).unwrap();
    path
}

fn names(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> =
        fs::read_dir(dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    v.sort();
    v
}

#[test]
fn schedule_prints_decades() {
    let o = ltr_lab(&["schedule", "--m", "3", "--T", "1000000", "--t-min", "100"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "1000 10000 100000");

    let o = ltr_lab(&["schedule", "--m", "0", "--T", "1000"]);
    assert_eq!(stdout(&o).trim(), "");
    let o = ltr_lab(&["schedule", "--m", "1", "--T", "100", "--t-min", "100"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_with_two() {
    let o = ltr_lab(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(ltr_lab(&[]).status.code(), Some(2));
    assert_eq!(ltr_lab(&["schedule", "--m", "x", "--T", "10"]).status.code(), Some(2));
    assert_eq!(ltr_lab(&["run", "--estimator", "dr"]).status.code(), Some(2));
}

#[test]
fn run_writes_results_summary_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = ltr_lab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--parallel", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(names(&out), ["manifest.toml", "results.csv", "summary.csv"]);

    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some(ltr_lab::experiment::RESULTS_HEADER));
    // 2 runs x 3 eval points
    assert_eq!(lines.count(), 6);
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);

    let manifest = ltr_lab_cli::manifest::RunManifest::read(&out.join("manifest.toml")).unwrap();
    assert_eq!(manifest.master_seed, "3");
    assert_eq!(manifest.run_seeds.len(), 2);
    assert_eq!(manifest.config.n_interventions, 2);
    assert_eq!(manifest.outputs, ["results.csv", "summary.csv"]);
}

#[test]
fn overrides_and_env_out_dir_apply() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("env-out");
    let o = Command::new(env!("CARGO_BIN_EXE_ltr-lab"))
        .args(["run", "--config", cfg.to_str().unwrap(), "--m", "0", "--T", "1000", "--seed", "11", "--runs", "1"])
        .args(["--estimator", "affine"])
        .env("LTR_LAB_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(names(&out), ["manifest.toml", "results.csv"]);
    let m = ltr_lab_cli::manifest::RunManifest::read(&out.join("manifest.toml")).unwrap();
    assert_eq!((m.config.n_interventions, m.config.total_timesteps, m.config.seed), (0, 1000, 11));
    assert_eq!(m.config.estimator, ltr_lab::estimators::DeltaKind::Affine);
}

#[test]
fn invalid_config_names_the_key_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "n_interventions = -1\n");
    let out = dir.path().join("out");
    let o = ltr_lab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("n_interventions"), "{}", stderr(&o));
    assert!(!out.exists() || names(&out).is_empty());
}

#[test]
fn runtime_failure_removes_partial_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let text = "n_runs = 2\n[data]\nkind = \"letor\"\ntrain = \"missing/train.txt\"\ntest = \"missing/test.txt\"\n";
    let cfg = write_config(dir.path(), text);
    let out = dir.path().join("out");
    let o = ltr_lab(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("error"), "{}", stderr(&o));
    assert!(names(&out).is_empty(), "{:?}", names(&out));
}

#[test]
fn dataset_directory_override_reads_letor_files() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir(&data).unwrap();
    let mut train = String::new();
    let mut test = String::new();
    for q in 0..6 {
        for d in 0..6 {
            let label = d % 3;
            let line = format!("{label} qid:{q} 1:{} 2:{}\n", label as f64 + 0.1 * d as f64, (q + d) % 2);
            if q < 4 {
                train.push_str(&line);
            } else {
                test.push_str(&line);
            }
        }
    }
    fs::write(data.join("train.txt"), train).unwrap();
    fs::write(data.join("test.txt"), test).unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    let o = ltr_lab(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--dataset",
        data.to_str().unwrap(),
        "--T",
        "500",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = ltr_lab_cli::manifest::RunManifest::read(&out.join("manifest.toml")).unwrap();
    assert!(matches!(m.config.data, ltr_lab::experiment::DataSource::Letor { validation: None, .. }));
}

#[test]
fn simulate_then_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let log = dir.path().join("log.txt");
    let policy = dir.path().join("pi0.ckpt");
    let o = ltr_lab(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        log.to_str().unwrap(),
        "--timesteps",
        "3000",
        "--save-policy",
        policy.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 3000);

    let o = ltr_lab(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
        "--logging-policy",
        policy.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let value = |key: &str| -> f64 {
        let line = text.lines().find(|l| l.starts_with(key)).unwrap_or_else(|| panic!("no {key} in {text}"));
        line.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    let (est, truth) = (value("estimated_reward"), value("true_reward"));
    assert!(truth > 0.0);
    // unbiased estimate from 3000 interactions on 20 queries
    assert!((est - truth).abs() < 0.25 * truth, "estimated {est}, true {truth}");
    assert!((0.0..=1.0).contains(&value("test_ndcg")));

    // one segment in the log but two logging policies
    let o = ltr_lab(&[
        "evaluate",
        "--config",
        cfg.to_str().unwrap(),
        "--policy",
        policy.to_str().unwrap(),
        "--log",
        log.to_str().unwrap(),
        "--logging-policy",
        policy.to_str().unwrap(),
        "--logging-policy",
        policy.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("segments"), "{}", stderr(&o));
}

#[test]
fn shipped_preset_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/trust_bias_top5.toml");
    let cfg = ltr_lab_cli::config::read_config(&path).unwrap();
    assert_eq!(cfg.bias.alphas(), &[0.35, 0.53, 0.55, 0.54, 0.52]);
    assert_eq!(cfg.bias.betas(), &[0.65, 0.26, 0.15, 0.11, 0.08]);
    assert_eq!(cfg.total_timesteps, 20_000);
    assert_eq!(cfg.n_runs, 20);
}
