use std::process::Command;

fn arw(args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_arw")).args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

#[test]
fn stabilize_prints_conserved_counts() {
    let (code, out, _) = arw(&["stabilize", "--lambda", "0.5", "--r", "5", "--walks", "0:3,2:1", "--seed", "4"]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let total = v["sleeping"].as_u64().unwrap() + v["left_exits"].as_u64().unwrap() + v["right_exits"].as_u64().unwrap();
    assert_eq!(total, 4);
    assert_eq!(v["initial"], ".....3.1...");
}

#[test]
fn same_seed_same_output() {
    let args = ["stabilize", "--lambda", "0.2", "--r", "20", "--zeta", "0.6", "--seed", "9"];
    assert_eq!(arw(&args).1, arw(&args).1);
}

#[test]
fn bad_input_exits_with_status_two() {
    let (code, _, err) = arw(&["stabilize", "--lambda", "1", "--r", "2", "--walks", "9:1"]);
    assert_eq!(code, 2);
    assert!(err.contains("walks"), "{err}");
    let (code, _, err) = arw(&["stabilize", "--r", "2", "--zeta", "0.5"]);
    assert_eq!(code, 2);
    assert!(err.contains("lambda"), "{err}");
}

#[test]
fn experiment_writes_run_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let args = ["ring", "--lambda", "0.5", "--zeta", "0.5", "--sizes", "6", "--samples", "4", "--out", out];
    let (code, _, err) = arw(&args);
    assert_eq!(code, 0, "{err}");
    let csv = std::fs::read_to_string(dir.path().join("ring.csv")).unwrap();
    assert!(csv.starts_with("lambda,zeta,n,sample_id,T,censored,seed\n"));
    assert_eq!(csv.lines().count(), 5);
    assert!(dir.path().join("manifest.json").exists());
    arw(&args);
    assert_eq!(std::fs::read_to_string(dir.path().join("ring.csv")).unwrap(), csv);
}

#[test]
fn verify_suites_pass() {
    let (code, out, _) = arw(&["verify", "--seed", "2"]);
    assert_eq!(code, 0);
    assert!(!out.contains("\"passed\": false"));
}
