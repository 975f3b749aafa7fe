//! Runs the `aline` binary as a child process and checks exit codes, files
//! and stderr.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aline"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn synth(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        "synth",
        "--seed",
        "21",
        "--out",
        dir.to_str().unwrap(),
        "--set",
        "n_models=5",
        "--set",
        "n_examples_id=400",
        "--set",
        "n_examples_ood=400",
    ];
    for e in extra {
        args.extend_from_slice(&["--set", e]);
    }
    aline(&args)
}

#[test]
fn help_lists_subcommands() {
    let out = aline(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["estimate", "synth", "validate", "scatter"] {
        assert!(text.contains(sub), "help misses {sub}");
    }
}

#[test]
fn full_pipeline_writes_report_and_scatter() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert!(synth(&data, &[]).status.success());
    let manifest = data.join("manifest.json");
    let m = manifest.to_str().unwrap();
    let out = dir.path().join("out");
    let run = aline(&[
        "estimate",
        "--id-manifest",
        m,
        "--ood-manifest",
        m,
        "--out",
        out.to_str().unwrap(),
        "--eval",
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", stderr(&run));

    let report = out.join("report.json");
    let csv = dir.path().join("again.csv");
    let scatter = aline(&[
        "scatter",
        "--report",
        report.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(scatter.status.code(), Some(0), "{}", stderr(&scatter));
    let text = fs::read_to_string(&csv).unwrap();
    let header = text.lines().next().unwrap();
    assert!(header.contains("kind"));
    assert!(text.lines().any(|l| l.starts_with("accuracy,")));
    assert!(text.lines().any(|l| l.starts_with("agreement,")));
}

#[test]
fn missing_manifest_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere").join("manifest.json");
    let m = missing.to_str().unwrap();
    let out = aline(&[
        "estimate",
        "--id-manifest",
        m,
        "--ood-manifest",
        m,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains(m), "{}", stderr(&out));
}

#[test]
fn all_methods_failing_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &["emit_logits=false"]).status.success());
    let manifest = dir.path().join("manifest.json");
    let m = manifest.to_str().unwrap();
    let out = aline(&[
        "estimate",
        "--id-manifest",
        m,
        "--ood-manifest",
        m,
        "--methods",
        "ac,atc,doc-feat",
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("every requested method failed"));
}

#[test]
fn validate_names_the_offending_example() {
    let dir = tempfile::tempdir().unwrap();
    assert!(synth(dir.path(), &[]).status.success());
    let log = dir.path().join("logs").join("m02_id.jsonl");
    let text = fs::read_to_string(&log).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut row: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    row["predicted"] = serde_json::Value::from((row["predicted"].as_u64().unwrap() + 1) % 10);
    lines[3] = row.to_string();
    fs::write(&log, lines.join("\n") + "\n").unwrap();

    let manifest = dir.path().join("manifest.json");
    let out = aline(&["validate", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let message = stderr(&out);
    assert!(message.contains("`m02`") && message.contains("example 2"), "{message}");
}

#[test]
fn bad_override_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = synth(dir.path(), &["no_such_knob=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error:"));
}
