use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
env.id = reacher2d
run.episodes = 3
model.hidden = 8, 8
model.epochs = 2
dae.hidden = 8
dae.epochs = 2
cem.population = 20
cem.elites = 4
cem.iterations = 1
adam.iterations = 2
mpc.horizon = 4
";

fn regplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_regplan"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.cfg");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read_csv(path: &Path) -> (csv::StringRecord, Vec<csv::StringRecord>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().clone();
    (header, r.records().map(Result::unwrap).collect())
}

#[test]
fn missing_env_id_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.episodes = 3\n");
    let out = dir.path().join("out");
    let o = regplan(&["train", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("env.id"));
}

#[test]
fn train_over_a_seed_range() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    let o = regplan(&[
        "train",
        &cfg,
        "--seed",
        "0..4",
        "--jobs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    for s in 0..5 {
        let metrics = fs::read_to_string(out.join(format!("seed-{s}/metrics.jsonl"))).unwrap();
        assert_eq!(metrics.lines().count(), 3);
    }
    let (header, rows) = read_csv(&out.join("learning_curve.csv"));
    assert_eq!(header, vec!["episode", "return_mean", "return_std"]);
    assert_eq!(rows.len(), 3);

    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "complete");
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1, 2, 3, 4]));
    assert!(manifest["config"].as_str().unwrap().contains("env.id = reacher2d"));
}

#[test]
fn oracle_gap_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("gap");
    let o = regplan(&[
        "gap",
        &cfg,
        "--oracle",
        "--episodes-of-data",
        "1",
        "--seed",
        "0,1",
        "--alpha",
        "0.1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&out.join("gap_report.csv"));
    assert_eq!(header, vec!["cell", "seed", "alpha", "imagined", "realized", "gap"]);
    assert_eq!(rows.len(), 4 * 2);
    for r in &rows {
        assert_eq!(r[5].parse::<f64>().unwrap(), 0.0);
    }
    let cells: Vec<&str> = rows.iter().take(4).map(|r| &r[0]).collect();
    assert_eq!(cells, ["cem", "cem+dae", "adam", "adam+dae"]);
}

#[test]
fn gap_rejects_the_chained_planner() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("gap");
    let o = regplan(&[
        "gap",
        &cfg,
        "--optimizer",
        "cem-then-adam",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_seed_specs_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out = dir.path().join("out");
    for spec in ["4..1", "1,1", "x"] {
        let o = regplan(&["train", &cfg, "--seed", spec, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{spec}");
    }
}

#[test]
fn verify_suites() {
    assert_eq!(regplan(&["verify", "nonsense"]).status.code(), Some(2));
    let o = regplan(&["verify", "cem-sanity"]);
    assert!(o.status.success());
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("PASS") && !table.contains("FAIL"));
}

#[test]
fn replay_dump_writes_one_row_per_transition() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &TINY.replace("run.episodes = 3", "run.episodes = 1"));
    let out = dir.path().join("out");
    assert!(regplan(&["train", &cfg, "--out", out.to_str().unwrap()])
        .status
        .success());
    let csv_path = dir.path().join("buffer.csv");
    let o = regplan(&[
        "replay-dump",
        out.join("seed-0/buffer.jsonl").to_str().unwrap(),
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let (header, rows) = read_csv(&csv_path);
    // reacher2d: 4 observations, 2 actions.
    assert_eq!(header.len(), 2 + 4 + 2 + 1 + 4);
    assert_eq!(&header[2], "obs_0");
    assert_eq!(rows.len(), 150);
}
