use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diffusion_testkit::datasets::synthetic_csv;
use serde_json::Value;
use tempfile::TempDir;

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let csv = synthetic_csv(5, 24);
        fs::write(dir.path().join("events.csv"), csv.events).unwrap();
        fs::write(dir.path().join("meta.csv"), csv.meta).unwrap();
        fs::write(dir.path().join("panel.csv"), csv.panel).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn data_args(&self) -> Vec<String> {
        ["events.csv", "meta.csv", "panel.csv"]
            .iter()
            .zip(["--events", "--meta", "--covariates"])
            .flat_map(|(f, flag)| [flag.to_string(), self.path(f).display().to_string()])
            .collect()
    }

    fn run(&self, args: &[&str]) -> Output {
        run_in(self.dir.path(), args, None)
    }

    fn ingest(&self) -> PathBuf {
        let data = self.path("data");
        let mut args = vec!["ingest".to_string()];
        args.extend(self.data_args());
        args.extend(["--data-dir".into(), data.display().to_string()]);
        let out = self.run(&args.iter().map(String::as_str).collect::<Vec<_>>());
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        data
    }
}

fn run_in(cwd: &Path, args: &[&str], data_dir: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_diffusion"));
    cmd.current_dir(cwd).args(args).env_remove("DATA_DIR").env_remove("PORT");
    if let Some(d) = data_dir {
        cmd.env("DATA_DIR", d);
    }
    cmd.output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn with_data<'a>(head: &[&'a str], owned: &'a [String]) -> Vec<&'a str> {
    head.iter().copied().chain(owned.iter().map(String::as_str)).collect()
}

#[test]
fn help_and_version_exit_zero() {
    let fx = Fixture::new();
    for args in [&["--help"][..], &["--version"], &["infer", "--help"]] {
        assert_eq!(fx.run(args).status.code(), Some(0), "{args:?}");
    }
}

#[test]
fn bad_flags_exit_one() {
    let fx = Fixture::new();
    for args in [&["--no-such-flag"][..], &["infer", "--from", "abc"], &["frobnicate"], &["cox"]] {
        let out = fx.run(args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(!stderr(&out).is_empty());
    }
}

#[test]
fn missing_input_file_is_user_error() {
    let fx = Fixture::new();
    let out = fx.run(&["infer", "--events", "nope.csv", "--meta", "nope.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nope.csv"));
    let out = fx.run(&["infer", "--data-dir", "empty"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn serve_without_data_dir_names_the_variable() {
    let fx = Fixture::new();
    let out = fx.run(&["serve"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("DATA_DIR"), "{}", stderr(&out));
    let out = run_in(fx.dir.path(), &["serve", "--port", "0"], Some(&fx.path("missing")));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("DATA_DIR"));
}

#[test]
fn cox_unknown_policy_exits_one() {
    let fx = Fixture::new();
    let data = fx.data_args();
    let out = fx.run(&with_data(&["cox", "--policy", "unknown-id"], &data));
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown policy"), "{}", stderr(&out));
}

#[test]
fn cox_writes_one_line_per_policy() {
    let fx = Fixture::new();
    let data = fx.data_args();
    let out_path = fx.path("cox.jsonl");
    let out_arg = out_path.display().to_string();
    let out = fx.run(&with_data(&["cox", "--all", "--out", &out_arg], &data));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(&out_path).unwrap();
    let lines: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 24);
    for line in &lines {
        assert!(line["policy_id"].is_string());
        assert!(line.get("factors").is_some() || line.get("error").is_some());
    }
    let fitted = lines.iter().find(|l| l.get("factors").is_some()).expect("at least one fit");
    let id = fitted["policy_id"].as_str().unwrap();
    let single = fx.run(&with_data(&["cox", "--policy", id], &data));
    assert_eq!(single.status.code(), Some(0));
    let single: Value = serde_json::from_slice(&single.stdout).unwrap();
    assert_eq!(&single, fitted);
}

#[test]
fn infer_is_byte_identical_across_runs() {
    let fx = Fixture::new();
    let data = fx.data_args();
    let a = fx.run(&with_data(&["infer", "--topic", "ALL", "--out", "a.json"], &data));
    let b = fx.run(&with_data(&["infer", "--topic", "ALL", "--out", "b.json"], &data));
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    let (a, b) = (fs::read(fx.path("a.json")).unwrap(), fs::read(fx.path("b.json")).unwrap());
    assert_eq!(a, b);
    let network: Value = serde_json::from_slice(&a).unwrap();
    assert!(network.get("generated_at").is_none());
    assert!(!network["edges"].as_array().unwrap().is_empty());

    let stamped = fx.run(&with_data(&["infer", "--deterministic", "false"], &data));
    let stamped: Value = serde_json::from_slice(&stamped.stdout).unwrap();
    assert!(stamped["generated_at"].is_u64());
}

#[test]
fn infer_rejects_bad_parameters() {
    let fx = Fixture::new();
    let data = fx.data_args();
    for extra in
        [&["--topic", "Nonsense"][..], &["--from", "2000", "--to", "1990"], &["--cutoff", "1.5"], &["--lambda", "-1"]]
    {
        let mut head = vec!["infer"];
        head.extend_from_slice(extra);
        let out = fx.run(&with_data(&head, &data));
        assert_eq!(out.status.code(), Some(1), "{extra:?}: {}", stderr(&out));
    }
}

#[test]
fn metrics_cover_all_measurement_kinds() {
    let fx = Fixture::new();
    let data = fx.data_args();
    for m in ["degree", "closeness", "pagerank", "innovativeness", "crime rate"] {
        let out = fx.run(&with_data(&["metrics", "--measurement", m], &data));
        assert_eq!(out.status.code(), Some(0), "{m}: {}", stderr(&out));
        let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(doc["values"].as_object().unwrap().len(), 50, "{m}");
        assert_eq!(doc["order"].as_array().unwrap().len(), 50);
    }
    let out = fx.run(&with_data(&["metrics", "--measurement", "pagerank"], &data));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let sum: f64 = doc["values"].as_object().unwrap().values().map(|v| v.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-9);
    let out = fx.run(&with_data(&["metrics", "--measurement", "shoe-size"], &data));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cascades_export_jsonl() {
    let fx = Fixture::new();
    let data = fx.data_args();
    let out = fx.run(&with_data(&["cascades", "export", "--format", "jsonl", "--out", "c.jsonl"], &data));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(fx.path("c.jsonl")).unwrap();
    let events: usize =
        text.lines().map(|l| serde_json::from_str::<Value>(l).unwrap()["events"].as_array().unwrap().len()).sum();
    let rows = synthetic_csv(5, 24).events.lines().count() - 1;
    assert_eq!(events, rows);
}

#[test]
fn ingest_then_precompute_and_export() {
    let fx = Fixture::new();
    let data = fx.ingest();
    let data_arg = data.display().to_string();
    assert!(data.join("manifest.json").exists());

    // Commands read from the data directory once ingested.
    let out = run_in(fx.dir.path(), &["infer", "--topic", "Health"], Some(&data));
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let out = fx.run(&["precompute", "--data-dir", &data_arg]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert!(data.join("cache").is_dir());

    let a = fx.run(&["export", "--data-dir", &data_arg, "--out", "bundle-a.json"]);
    let b = fx.run(&["export", "--data-dir", &data_arg, "--out", "bundle-b.json"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(b.status.code(), Some(0));
    let (a, b) = (fs::read(fx.path("bundle-a.json")).unwrap(), fs::read(fx.path("bundle-b.json")).unwrap());
    assert_eq!(a, b);
    let bundle: Value = serde_json::from_slice(&a).unwrap();
    for key in ["data_version", "options", "networks", "maps", "matrix", "stats"] {
        assert!(bundle.get(key).is_some(), "{key}");
    }
    let version = fs::read_to_string(data.join("manifest.json")).unwrap();
    let version: Value = serde_json::from_str(&version).unwrap();
    assert_eq!(bundle["data_version"], version["data_version"]);
}
