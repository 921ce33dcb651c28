// Copyright (c) The flowopt Contributors
// SPDX-License-Identifier: Apache-2.0

//! End-to-end tests of the `flowopt` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn flowopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowopt")).args(args).env("FLOWOPT_COLOR", "0").output().unwrap()
}

fn run(args: &[&str]) -> (i32, String) {
    let out = flowopt(args);
    (out.status.code().unwrap(), String::from_utf8(out.stdout).unwrap())
}

fn json(args: &[&str]) -> Value {
    let (code, stdout) = run(args);
    assert_eq!(code, 0, "{stdout}");
    serde_json::from_str(&stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn analyze_reports_property_sets() {
    let f1 = json(&["analyze", path(&fixture("f1.udf")), "--format", "json"]);
    assert_eq!(f1["R"], serde_json::json!([0, 1]));
    assert_eq!(f1["E"], serde_json::json!([2]));
    assert_eq!(f1["W"], serde_json::json!([2]));
    assert_eq!(f1["ec_upper"], serde_json::json!(1));
    let f3 = json(&["analyze", path(&fixture("f3.udf")), "--format", "json"]);
    assert_eq!(f3["O"], serde_json::json!([1, 2]));
}

#[test]
fn analyze_text_and_dot() {
    let (code, text) = run(&["analyze", path(&fixture("f2.udf"))]);
    assert_eq!(code, 0);
    assert!(text.contains("C  = {3,4}"), "{text}");
    assert!(!text.contains('\x1b'));
    let (code, dot) = run(&["analyze", path(&fixture("ec_loop.udf")), "--dot"]);
    assert_eq!(code, 0);
    assert!(dot.starts_with("digraph"), "{dot}");
}

#[test]
fn analyze_unbounded_loop() {
    let report = json(&["analyze", path(&fixture("ec_loop.udf")), "--format", "json"]);
    assert_eq!(report["ec_upper"], serde_json::json!("inf"));
}

#[test]
fn explicit_input_fields_change_the_write_set() {
    let dir = tempfile::tempdir().unwrap();
    let udf = write(&dir, "proj.udf", "proj(InRec $ir)\n1: $or:=copy($ir)\n2: setField($or,1,null)\n3: emit($or)\n");
    let report = json(&["analyze", path(&udf), "--inputs", "0,1,2", "--format", "json"]);
    assert_eq!(report["P"], serde_json::json!([1]));
    assert_eq!(report["W"], serde_json::json!([1]));
    let (code, _) = run(&["analyze", path(&udf), "--inputs", "0", "--inputs", "1"]);
    assert_eq!(code, 1);
}

#[test]
fn malformed_input_exits_one() {
    for name in ["malformed/unclosed_paren.udf", "malformed/empty.udf"] {
        let out = flowopt(&["analyze", path(&fixture(name))]);
        assert_eq!(out.status.code(), Some(1));
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    let (code, _) = run(&["annotate", "/nonexistent.plan"]);
    assert_eq!(code, 1);
}

#[test]
fn analysis_warnings_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let udf = write(&dir, "twice.udf", "twice(InRec $ir)\n1: $or:=copy($ir)\n2: emit($or)\n3: emit($or)\n");
    let (code, text) = run(&["analyze", path(&udf)]);
    assert_eq!(code, 2);
    assert!(text.contains("warning: emits at lines 2 and 3"), "{text}");
}

#[test]
fn annotate_exports_schemas() {
    let report = json(&["annotate", path(&fixture("example_a.plan")), "--format", "json"]);
    let nodes = report["nodes"].as_array().unwrap();
    let join = nodes.iter().find(|n| n["name"] == "J").unwrap();
    assert_eq!(join["analysis"]["read_set"], serde_json::json!([0, 3]));
    assert_eq!(join["schema"]["guaranteed"], serde_json::json!([0, 1, 2, 3, 4, 5]));
    let m2 = nodes.iter().find(|n| n["name"] == "M2").unwrap();
    assert_eq!(m2["analysis"]["W"], serde_json::json!([5]));
}

#[test]
fn annotate_reports_field_loss() {
    let out = flowopt(&["annotate", path(&fixture("example_c.plan"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("M2"));
}

#[test]
fn reorder_running_example() {
    let report = json(&["reorder", path(&fixture("example_a.plan")), "--format", "json"]);
    assert_eq!(report["alternatives"].as_array().unwrap().len(), 1);
    let swaps = report["swaps"].as_array().unwrap();
    let rejected = swaps.iter().find(|s| s["upper"] == "M2").unwrap();
    assert_eq!(rejected["valid"], false);
    assert_eq!(rejected["conflicts"]["schema_loss"], serde_json::json!([0, 1, 2]));
    let accepted = swaps.iter().find(|s| s["upper"] == "M1").unwrap();
    assert_eq!(accepted["valid"], true);
    assert_eq!(accepted["conflicts"]["read_read"], serde_json::json!([0]));

    let (code, text) = run(&["reorder", path(&fixture("example_a.plan"))]);
    assert_eq!(code, 0);
    assert!(text.contains("1 alternative within depth 1"), "{text}");
}

#[test]
fn reorder_counts() {
    let dir = tempfile::tempdir().unwrap();
    let two_maps = write(
        &dir,
        "two.plan",
        "source S fields [0,1]\nop A = map(a) from S\nop B = map(b) from A\nsink K consumes [0,1,2,3] from B\n\
         udf a {\na(InRec $ir)\n1: $c:=1\n2: $or:=copy($ir)\n3: setField($or,2,$c)\n4: emit($or)\n}\n\
         udf b {\nb(InRec $ir)\n1: $c:=1\n2: $or:=copy($ir)\n3: setField($or,3,$c)\n4: emit($or)\n}\n",
    );
    let report = json(&["reorder", path(&two_maps), "--format", "json"]);
    assert_eq!(report["alternatives"].as_array().unwrap().len(), 1);

    let single = write(
        &dir,
        "one.plan",
        "source S fields [0]\nop A = map(a) from S\nsink K consumes [0,2] from A\n\
         udf a {\na(InRec $ir)\n1: $c:=1\n2: $or:=copy($ir)\n3: setField($or,2,$c)\n4: emit($or)\n}\n",
    );
    let report = json(&["reorder", path(&single), "--format", "json"]);
    assert_eq!(report["alternatives"].as_array().unwrap().len(), 0);
    assert_eq!(report["swaps"].as_array().unwrap().len(), 0);
}

#[test]
fn check_passes_on_running_example() {
    let (code, text) =
        run(&["check", path(&fixture("example_a.plan")), "--data", path(&fixture("example.records")), "--seed", "42"]);
    assert_eq!(code, 0, "{text}");
    assert!(text.contains("PASS") && text.contains("seed 42"), "{text}");
}

#[test]
fn check_detects_the_unsafe_plan() {
    let (code, text) = run(&[
        "check",
        path(&fixture("example_a.plan")),
        "--compare",
        path(&fixture("example_c.plan")),
        "--data",
        path(&fixture("example.records")),
        "--runs",
        "0",
    ]);
    assert_eq!(code, 3, "{text}");
    assert!(text.contains("witness dataset:") && text.contains("Src1: {0:1, 1:2}"), "{text}");
}

#[test]
fn check_with_empty_data() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "empty.records", "");
    let report =
        json(&["check", path(&fixture("example_a.plan")), "--data", path(&data), "--runs", "0", "--format", "json"]);
    assert_eq!(report["passed"], true);
    assert_eq!(report["datasets"], 1);
}

#[test]
fn check_rejects_bad_records() {
    let dir = tempfile::tempdir().unwrap();
    let data = write(&dir, "bad.records", "Src1: {0:1\n");
    let (code, _) = run(&["check", path(&fixture("example_a.plan")), "--data", path(&data)]);
    assert_eq!(code, 1);
}
