use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_landmark-surrogate"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn CLI")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, setting: &str, n: &str) -> String {
    let path = dir.join(format!("{setting}.csv"));
    let p = path.to_str().unwrap().to_string();
    let o = run(&["generate", "--setting", setting, "--n", n, "--seed", "3", "--out", &p]);
    assert!(o.status.success(), "{}", stderr(&o));
    p
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<Vec<u8>> = (0..2)
        .map(|k| {
            let p = dir.path().join(format!("r{k}.json"));
            let o = run(&[
                "simulate", "--setting", "1", "--n", "200", "--reps", "4", "--D", "40", "--seed",
                "7", "--truth-mc", "20000", "--out", p.to_str().unwrap(),
            ]);
            assert!(o.status.success(), "{}", stderr(&o));
            std::fs::read(p).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    let v: serde_json::Value = serde_json::from_slice(&outs[0]).unwrap();
    assert_eq!(v["replicates_ok"], 4);
    assert_eq!(v["config"]["seed"], 7);
}

#[test]
fn estimate_is_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "2", "300");
    let args = [
        "estimate", "--input", &input, "--t0", "0.5", "--t", "1", "--D", "60", "--seed", "11",
        "--augment", "z1",
    ];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(v["seed"], 11);
    assert_eq!(v["bandwidth_fixed"], true);
    assert!(v["augmented"]["estimands"].as_array().unwrap().len() == 3);
}

#[test]
fn missing_seed_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "1", "200");
    let o = run(&["estimate", "--input", &input, "--t0", "0.5", "--t", "1", "--D", "40"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["seed"].is_u64());
}

#[test]
fn horizon_beyond_censoring_support_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "1", "200");
    let o = run(&["estimate", "--input", &input, "--t0", "0.5", "--t", "40", "--D", "40"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("W^C(40) = 0"), "{}", stderr(&o));
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "group,time,event,s\nA,2.0,1,3.1\nA,0.3,0,3.1\nB,1.5,1,4.0\nB,0.2,1,NA\n")
        .unwrap();
    let p = path.to_str().unwrap();
    let o = run(&["estimate", "--input", p, "--t0", "0.5", "--t", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("observability"), "{}", stderr(&o));
    let o = run(&["estimate", "--input", p, "--t0", "0.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["estimate", "--input", "/nonexistent.csv", "--t0", "0.5", "--t", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "1", "200");
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "t = 1.0\ndraws = 35\nseed = 5\nvariance = \"robust-median\"\nci = \"normal\"\n")
        .unwrap();
    let o = run(&[
        "estimate", "--input", &input, "--t0", "0.5", "--t", "40", "--D", "500", "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["draws_requested"], 35);
    assert_eq!(v["seed"], 5);
    assert_eq!(v["variance_mode"], "robust-median");
    assert!(v["estimands"][0]["ci_quantile"].is_null());
    std::fs::write(&cfg, "unknown_key = 1\n").unwrap();
    let o = run(&["estimate", "--input", &input, "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn table_and_diagnose_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let input = generate(dir.path(), "dpp", "400");
    let o = run(&["estimate", "--input", &input, "--t0", "1", "--t", "3", "--D", "40", "--seed", "1", "--table"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = String::from_utf8_lossy(&o.stdout);
    assert!(table.contains("r_s") && table.contains("Fieller"));
    let o = run(&["diagnose", "--input", &input, "--t0", "1", "--t", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v["conditions"]["c1"]["holds"].is_boolean());
    assert_eq!(v["summary"]["arm_a"]["n"], 400);
    let o = run(&["diagnose", "--input", &input, "--t0", "1", "--t", "3", "--grid", "1e6"]);
    assert_eq!(o.status.code(), Some(2));
}
