use hdwalk::cli::config::{normalize, parse_config, validate_config};
use hdwalk::cli::presets::PRESETS;
use hdwalk::cli::run::{compare_expected, presets_dir, results_document, run_experiment, Overrides};
use hdwalk::lattice::EmpiricalAccumulator;
use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hdwalk"))
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> i32 {
    let status = bin()
        .args(["run", "--config"])
        .arg(config)
        .arg("--out-dir")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
        .status;
    status.code().unwrap()
}

const SMALL_WALK: &str = r#"{
  "schema_version": 1, "kind": "walk_equidistribution",
  "spec": {"preset": "block-two-state"},
  "seed": 42, "replicas": 4, "steps": 2000,
  "params": {"observables": {"trace_every": 100}},
  "thresholds": {"siegel_rel_tol": 10.0, "escape_max": 1.0, "independence_level": 1e-300}
}"#;

#[test]
fn results_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "walk.json", SMALL_WALK);
    assert_eq!(run(&cfg, &dir.path().join("a"), &[]), 0);
    assert_eq!(run(&cfg, &dir.path().join("b"), &[]), 0);
    for f in ["results.json", "shortest_sup.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
    let csv = std::fs::read_to_string(dir.path().join("a/shortest_sup.csv")).unwrap();
    assert!(csv.starts_with("step,value\n") && !csv.contains('\r'));
}

#[test]
fn seed_override_changes_results() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "walk.json", SMALL_WALK);
    run(&cfg, &dir.path().join("a"), &[]);
    run(&cfg, &dir.path().join("b"), &["--seed", "43"]);
    let a: Value = serde_json::from_slice(&std::fs::read(dir.path().join("a/results.json")).unwrap()).unwrap();
    let b: Value = serde_json::from_slice(&std::fs::read(dir.path().join("b/results.json")).unwrap()).unwrap();
    assert_eq!(b["seed"], 43);
    assert_ne!(a["result"]["accumulator"], b["result"]["accumulator"]);
}

fn accumulator(dir: &Path) -> EmpiricalAccumulator {
    let doc: Value = serde_json::from_slice(&std::fs::read(dir.join("results.json")).unwrap()).unwrap();
    serde_json::from_value(doc["result"]["accumulator"].clone()).unwrap()
}

#[test]
fn replica_runs_merge_consistently() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "walk.json", SMALL_WALK);
    let mut second: Value = serde_json::from_str(SMALL_WALK).unwrap();
    second["params"]["replica_offset"] = 2.into();
    let cfg2 = write_config(dir.path(), "walk2.json", &second.to_string());
    run(&cfg, &dir.path().join("all"), &["--replicas", "4"]);
    run(&cfg, &dir.path().join("lo"), &["--replicas", "2"]);
    run(&cfg2, &dir.path().join("hi"), &["--replicas", "2"]);
    let mut merged = accumulator(&dir.path().join("lo"));
    merged.merge(&accumulator(&dir.path().join("hi"))).unwrap();
    assert_eq!(merged, accumulator(&dir.path().join("all")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let ok = write_config(dir.path(), "ok.json", SMALL_WALK);
    assert_eq!(run(&ok, &out, &[]), 0);

    let failing = SMALL_WALK.replace("\"escape_max\": 1.0", "\"escape_max\": 1.0, \"escape_eps\": 10.0").replace("10.0,", "1e-9,");
    let failing = write_config(dir.path(), "fail.json", &failing);
    assert_eq!(run(&failing, &out, &[]), 1);

    let bad = SMALL_WALK.replace("\"seed\": 42,", "");
    let bad = write_config(dir.path(), "bad.json", &bad);
    assert_eq!(run(&bad, &out, &[]), 1);
    assert_eq!(bin().args(["validate", "--config"]).arg(&bad).status().unwrap().code(), Some(1));

    let singular = SMALL_WALK.replace(
        "\"trace_every\": 100}",
        "\"trace_every\": 100}, \"start_lattice\": [[1, 2], [2, 4]]",
    );
    let singular = write_config(dir.path(), "singular.json", &singular);
    assert_eq!(run(&singular, &out, &[]), 1);

    // a start basis this skewed overflows the integer change of basis
    let alarm = SMALL_WALK.replace(
        "\"trace_every\": 100}",
        "\"trace_every\": 100}, \"start_lattice\": [[1e13, 0], [0, 1e-13]]",
    );
    let alarm = write_config(dir.path(), "alarm.json", &alarm);
    assert_eq!(run(&alarm, &out, &[]), 2);
    let record: Value = serde_json::from_slice(&std::fs::read(out.join("results.json")).unwrap()).unwrap();
    assert!(record["error"]["message"].is_string());
}

#[test]
fn validate_prints_normalized_config() {
    let out = bin().args(["validate", "--config"]).arg(presets_dir().join("sl3-walk.json")).output().unwrap();
    assert!(out.status.success());
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["spec"]["chain"]["states"].as_array().unwrap().len(), 3);
}

#[test]
fn presets_and_report_subcommands() {
    let out = bin().arg("presets").output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    for p in PRESETS {
        assert!(text.contains(p.name));
    }
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "walk.json", SMALL_WALK);
    run(&cfg, dir.path(), &[]);
    let out = bin().args(["report", "--out-dir"]).arg(dir.path()).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(out.status.success());
    assert!(text.contains("shortest_sup") && text.contains("escape fraction"));
}

fn shipped_configs() -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(presets_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".json") && !s.ends_with(".expected.json")))
        .collect();
    v.sort();
    v
}

#[test]
fn every_preset_is_exercised_by_a_shipped_config() {
    let specs: Vec<String> = shipped_configs()
        .iter()
        .map(|p| parse_config(&std::fs::read_to_string(p).unwrap()).unwrap())
        .map(|c| serde_json::to_value(&c.spec).unwrap()["preset"].as_str().unwrap_or("").to_string())
        .collect();
    for p in PRESETS {
        assert!(specs.iter().any(|s| s == p.name), "no config uses preset {}", p.name);
    }
    for c in shipped_configs() {
        let expected = c.with_extension("expected.json");
        assert!(expected.exists(), "{} has no expected-results file", c.display());
    }
}

#[test]
fn shipped_configs_reproduce_expected_results() {
    for c in shipped_configs() {
        let cfg = validate_config(&c).unwrap();
        let outcome = run_experiment(&cfg, Overrides::default()).unwrap();
        let doc = results_document(&cfg, Overrides::default(), &outcome);
        let expected: Value = serde_json::from_str(&std::fs::read_to_string(c.with_extension("expected.json")).unwrap()).unwrap();
        let diffs = compare_expected(&doc, &expected);
        assert!(diffs.is_empty(), "{}: {diffs:?}", c.display());
    }
}

#[test]
fn lyapunov_of_a_dirac_diagonal_is_exact() {
    let cfg = normalize(
        parse_config(
            r#"{"schema_version":1,"kind":"lyapunov","spec":{"preset":"diag-2-half"},
                "seed":0,"replicas":2,"steps":50}"#,
        )
        .unwrap(),
    )
    .unwrap();
    let out = run_experiment(&cfg, Overrides::default()).unwrap();
    let est = &out.result["spectrum"]["exponent_estimates"];
    assert!((est[0].as_f64().unwrap() - 2f64.ln()).abs() < 1e-12);
    assert!((est[1].as_f64().unwrap() + 2f64.ln()).abs() < 1e-12);
}
