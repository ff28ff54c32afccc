use semilinear_py::{criterion_impl, run_impl, solve_impl};

const LOGISTIC: &str = r#"{"kind": "logistic", "mu": [3.0], "beta": [1.0]}"#;

#[test]
fn scalar_logistic_through_json() {
    let rows = vec![vec![-1.0]];
    let (z, i, ok) = criterion_impl(&rows, LOGISTIC).unwrap();
    assert_eq!((z, i, ok), (-2.0, f64::INFINITY, true));

    let report: serde_json::Value = serde_json::from_str(&solve_impl(&rows, LOGISTIC, None).unwrap()).unwrap();
    let u = report["u"][0].as_f64().unwrap();
    assert!((u - 2.0).abs() <= 1e-8);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(criterion_impl(&vec![vec![-1.0, 0.5]], LOGISTIC).is_err());
    assert!(criterion_impl(&vec![vec![-1.0]], "{\"kind\": \"nope\"}").is_err());
    assert!(solve_impl(&vec![vec![-1.0]], LOGISTIC, Some("{\"outer_tol\": \"x\"}")).is_err());
    assert!(run_impl("frobnicate", "x.toml", None, false).is_err());
}

#[test]
fn command_runner_uses_exit_contract() {
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../cli/configs/linear_half.toml");
    let (code, json) = run_impl("criterion", cfg, None, false).unwrap();
    assert_eq!(code, 3);
    assert!(json.contains("\"satisfied\": false"));
}
