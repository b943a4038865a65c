use std::process::Command;

fn multiform(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_multiform")).args(args).output().unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn obstruction_reports_the_gauss_bound() {
    let (ok, stdout, _) = multiform(&["obstruction", "--p", "7", "--d", "1"]);
    assert!(ok);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!((v["gauss_max"].as_f64().unwrap() - 7f64.powf(-0.5)).abs() < 1e-12);
    assert!((v["trilinear_value"].as_f64().unwrap() - 49.0).abs() < 1e-9);
}

#[test]
fn sample_is_reproducible() {
    let args = ["sample", "--n", "12", "--seed", "5"];
    let (ok, first, _) = multiform(&args);
    assert!(ok);
    assert_eq!(first, multiform(&args).1);
    assert_eq!(first.lines().count(), 1 + 25);
}

#[test]
fn norm_and_reduce_check_emit_rows() {
    let (ok, stdout, _) = multiform(&["norm", "--family", "1,-1; 1,1", "--n", "4", "--trials", "3", "--restarts", "2"]);
    assert!(ok);
    assert_eq!(stdout.lines().next(), Some("trial,estimate,witness_hash"));
    assert_eq!(stdout.lines().count(), 4);
    let (ok, stdout, _) = multiform(&["reduce-check", "--family", "1,-1; 1,0; 0,1", "--n", "6", "--trials", "2"]);
    assert!(ok);
    for line in stdout.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["holds"], true);
    }
}

#[test]
fn scan_writes_csv_and_summary() {
    let dir = std::env::temp_dir().join(format!("multiform-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let config = dir.join("scan.json");
    std::fs::write(
        &config,
        r#"{"n_list": [16, 32, 64], "gamma_list": [0.0], "trials": 10, "seed": 1, "estimator": "bilinear_exact"}"#,
    )
    .unwrap();
    let summary = dir.join("summary.json");
    let (ok, stdout, _) =
        multiform(&["scan", "--config", config.to_str().unwrap(), "--summary", summary.to_str().unwrap()]);
    assert!(ok);
    assert_eq!(stdout.lines().count(), 4);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert!(v["fits"][0]["fit"]["fit"]["slope"].as_f64().unwrap() < 0.0);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn bad_input_fails_cleanly() {
    let (ok, _, stderr) = multiform(&["obstruction", "--p", "9", "--d", "1"]);
    assert!(!ok);
    assert!(stderr.starts_with("error:"));
    let (ok, _, _) = multiform(&["matrix", "--n", "4", "--m", "5", "--mode", "form"]);
    assert!(!ok);
}
