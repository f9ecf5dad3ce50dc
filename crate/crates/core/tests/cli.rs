use std::process::Command;

use fbcap::cli::run_captured;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = String::new();
    let mut argv = vec!["fbcap"];
    argv.extend_from_slice(args);
    let code = run_captured(argv, &mut out);
    (code, out)
}

fn field(out: &str, key: &str) -> String {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
        .to_string()
}

#[test]
fn awgn_capacity_in_bits_and_nats() {
    let (code, out) = run(&["capacity", "--awgn"]);
    assert_eq!(code, 0);
    assert_eq!(field(&out, "rate_bits"), "0.500000");
    let (_, out) = run(&["capacity", "--awgn", "--nats"]);
    assert_eq!(field(&out, "rate_nats"), format!("{:.6}", 0.5 * 2f64.ln()));
}

#[test]
fn model_file_roundtrip_through_capacity() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ar1.json");
    std::fs::write(
        &path,
        r#"{"F": [[0.5]], "G": [[0.0]], "H": [[0.5]], "J": [[1.0]],
            "W": [[1.0]], "L": [[1.0]], "V": [[1.0]], "name": "ar1"}"#,
    )
    .unwrap();
    let p = path.to_str().unwrap();
    let (code, from_file) = run(&["capacity", "--model", p]);
    assert_eq!(code, 0);
    let (_, builtin) = run(&["capacity", "--ar1", "--beta", "0.5"]);
    assert_eq!(field(&from_file, "rate_bits"), field(&builtin, "rate_bits"));
    assert_eq!(field(&from_file, "rate_bits"), "0.716753");

    let json = dir.path().join("sol.json");
    let (code, _) = run(&["capacity", "--model", p, "--out", json.to_str().unwrap()]);
    assert_eq!(code, 0);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert!((v["rate_bits"].as_f64().unwrap() - 0.716753).abs() < 1e-6);
    assert_eq!(v["gamma"].as_array().unwrap().len(), 1);
}

#[test]
fn sweep_csv_is_ordered_and_labelled() {
    let (code, out) = run(&["sweep", "--ar1", "--beta", "0.5:1.0:0.5", "--delays", "1,2", "--nofeedback"]);
    assert_eq!(code, 0);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "beta,scheme,rate_bits");
    let keys: Vec<(String, String)> = lines[1..]
        .iter()
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            (c[0].to_string(), c[1].to_string())
        })
        .collect();
    // the no-feedback row at beta = 1 is skipped
    let expected = [("0.500000", "fb"), ("0.500000", "delay2"), ("0.500000", "nofb"), ("1.000000", "fb"), ("1.000000", "delay2")];
    assert_eq!(keys.len(), expected.len(), "{out}");
    for ((b, s), (eb, es)) in keys.iter().zip(expected) {
        assert_eq!((b.as_str(), s.as_str()), (eb, es));
    }
    let fb: f64 = lines[1].split(',').nth(2).unwrap().parse().unwrap();
    assert_eq!(fb, 0.716753);
}

#[test]
fn detect_accepts_undetectable_model_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"F": [[2.0]], "G": [[1.0]], "H": [[0.0]], "J": [[1.0]], "W": [[1.0]], "V": [[1.0]]}"#).unwrap();
    let (code, out) = run(&["detect", "--model", path.to_str().unwrap()]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(field(&out, "pbh"), "not detectable");
    assert!(field(&out, "lmi").starts_with("not detectable"));
    assert_eq!(field(&out, "agree"), "true");

    // the capacity command refuses it
    let (code, _) = run(&["capacity", "--model", path.to_str().unwrap()]);
    assert_ne!(code, 0);
}

#[test]
fn finite_horizon_and_waterfill() {
    let (code, out) = run(&["finite-horizon", "--ar1", "--n", "2"]);
    assert_eq!(code, 0);
    assert_eq!(field(&out, "rate_bits"), "0.628705");
    let (code, out) = run(&["waterfill", "--beta", "0.0", "--power", "3"]);
    assert_eq!(code, 0);
    assert_eq!(field(&out, "rate_bits"), "1.000000");
}

#[test]
fn user_errors_exit_one() {
    assert_eq!(run(&["capacity"]).0, 1);
    assert_eq!(run(&["capacity", "--ar1", "--delay", "0"]).0, 1);
    assert_eq!(run(&["sweep", "--beta", "1:0:0.1"]).0, 1);
    assert_eq!(run(&["capacity", "--model", "/nonexistent/model.json"]).0, 1);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn binary_prints_and_exits() {
    let out = Command::new(env!("CARGO_BIN_EXE_fbcap")).args(["capacity", "--ar1", "--beta", "0.5"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("rate_bits: 0.716753"));

    let out = Command::new(env!("CARGO_BIN_EXE_fbcap")).args(["waterfill", "--beta", "1.0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}
