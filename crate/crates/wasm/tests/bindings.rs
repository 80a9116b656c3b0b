use serde_json::Value;
use spectral_interp_wasm::{estimate_json, minimax_json, validate_json};

fn read(name: &str) -> String {
    let path = format!("{}/../../models/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn validate_reports_both_densities() {
    let v: Value = serde_json::from_str(&validate_json(&read("toy_minimax.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["densities"].as_array().unwrap().len(), 2);
    assert_eq!(v["lambda"].as_array().unwrap().len(), v["f_top"].as_array().unwrap().len());
}

#[test]
fn estimate_returns_curves() {
    let v: Value = serde_json::from_str(&estimate_json(&read("toy_minimax.json")).unwrap()).unwrap();
    let delta = v["delta"].as_f64().unwrap();
    assert!(delta > 0.0 && delta < v["variance"].as_f64().unwrap());
    assert_eq!(v["t"].as_array().unwrap().len(), v["c_re"].as_array().unwrap().len());
}

#[test]
fn minimax_runs_on_the_toy_classes() {
    let out = minimax_json(&read("toy_minimax.json"), &read("classes_toy.json"), 200).unwrap();
    let v: Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["iterations"], 200);
    assert!(v["delta0"].as_f64().unwrap() > 0.0);
    let trace = v["trace_delta"].as_array().unwrap();
    assert!(!trace.is_empty());
}

#[test]
fn malformed_input_is_an_error() {
    assert!(estimate_json("{\"dim\": 1}").is_err());
    assert!(minimax_json(&read("toy_minimax.json"), "{}", 10).is_err());
}
