use l96_wasm::{forecast_json, series_json, wave_json};
use serde_json::Value;

#[test]
fn series_has_one_sample_per_step() {
    let v: Value = serde_json::from_str(&series_json(4, 8, 3, 5.0, 1).unwrap()).unwrap();
    assert_eq!(v["times_days"].as_array().unwrap().len(), 101);
    assert_eq!(v["values"].as_array().unwrap().len(), 101);
}

#[test]
fn bad_dimensions_are_rejected() {
    assert!(series_json(0, 8, 1, 5.0, 1).is_err());
    assert!(series_json(4, 8, 5, 5.0, 1).is_err());
    assert!(wave_json(40, 16, 41, 5.0, 1).is_err());
    assert!(forecast_json(6, 16, 2.0, 50.0, 1).is_err());
}

#[test]
fn zero_amount_wave_is_flat() {
    let v: Value = serde_json::from_str(&wave_json(12, 4, 3, 0.0, 2).unwrap()).unwrap();
    for p in v["profiles"].as_array().unwrap() {
        assert_eq!(p["perturbed"], p["unperturbed"]);
    }
}

#[test]
fn forecast_without_inflation_matches_baseline() {
    let v: Value = serde_json::from_str(&forecast_json(5, 8, 0.0, 10.0, 3).unwrap()).unwrap();
    assert_eq!(v["ac_baseline"], v["ac_inflated"]);
    assert_eq!(v["useful_baseline"], v["useful_inflated"]);
    assert_eq!(v["inflations"], 0);
}
