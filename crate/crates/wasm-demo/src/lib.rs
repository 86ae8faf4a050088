//! Browser bindings. Each export returns a JSON string for the page to plot;
//! the `*_json` functions hold the logic so they can be tested natively.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use l96_core::demos::{series_demo, wave_demo};
use l96_core::forecast::{run_forecast, AlwaysInflate, ForecastOptions, NeverInflate};
use l96_core::init::{compute_climatology, create_structured_ensemble, draw_initial_truths, ClimatologyConfig};
use l96_core::metrics::AC_THRESHOLD;
use l96_core::model::{slow_trajectory, ModelParams};
use l96_core::rng::stream;

const MAX_SLOW: usize = 64;
const MAX_FAST: usize = 64;

fn check_dims(slow: usize, fast: usize) -> Result<(), String> {
    if !(1..=MAX_SLOW).contains(&slow) || !(1..=MAX_FAST).contains(&fast) {
        return Err(format!("dimensions must satisfy 1 <= I <= {MAX_SLOW}, 1 <= J <= {MAX_FAST}"));
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct SeriesOut {
    slow: usize,
    fast: usize,
    times_days: Vec<f64>,
    values: Vec<f64>,
}

/// One slow variable of the system over `days`.
pub fn series_json(slow: usize, fast: usize, variable: usize, days: f64, seed: u64) -> Result<String, String> {
    check_dims(slow, fast)?;
    if !(days > 0.0 && days <= 500.0) {
        return Err("days must be in (0, 500]".into());
    }
    let mut panels = series_demo(&[slow], &[fast], variable, days, seed).map_err(|e| e.to_string())?;
    let p = panels.remove(0);
    to_json(&SeriesOut { slow: p.slow, fast: p.fast, times_days: p.times_days, values: p.values })
}

/// Unperturbed and perturbed slow profiles every 12 hours for days 0-5 and 50-55.
pub fn wave_json(slow: usize, fast: usize, site: usize, amount: f64, seed: u64) -> Result<String, String> {
    check_dims(slow, fast)?;
    let demo = wave_demo(&ModelParams::system(slow, fast), site, amount, 55.0, seed).map_err(|e| e.to_string())?;
    to_json(&demo)
}

#[derive(Serialize)]
struct ForecastOut {
    slow: usize,
    phi: f64,
    times_days: Vec<f64>,
    rmse_baseline: Vec<Option<f64>>,
    ac_baseline: Vec<Option<f64>>,
    rmse_inflated: Vec<Option<f64>>,
    ac_inflated: Vec<Option<f64>>,
    useful_baseline: f64,
    useful_inflated: Option<f64>,
    inflations: usize,
}

fn finite(v: &[f64], n: usize) -> Vec<Option<f64>> {
    (0..n).map(|k| v.get(k).copied().filter(|x| x.is_finite())).collect()
}

/// One structured-ensemble forecast with and without naive inflation.
pub fn forecast_json(slow: usize, fast: usize, phi: f64, horizon_days: f64, seed: u64) -> Result<String, String> {
    check_dims(slow, fast)?;
    if !(0.0..=0.5).contains(&phi) || !(horizon_days > 0.0 && horizon_days <= 100.0) {
        return Err("phi must be in [0, 0.5] and the horizon in (0, 100] days".into());
    }
    let err = |e: l96_core::Error| e.to_string();
    let sys = ModelParams::system(slow, fast);
    let model = ModelParams::model(slow, fast);
    let clim = compute_climatology(&sys, &ClimatologyConfig { spinup_days: 50.0, sample_days: 500.0, snapshot_stride: 5 }, seed).map_err(err)?;
    let truth0 = draw_initial_truths(&clim, 1, 50.0).map_err(err)?.remove(0);
    let truth = slow_trajectory(&sys, &truth0, sys.steps_for_days(horizon_days)).map_err(err)?;
    let (ens, _) = create_structured_ensemble(&clim, &truth0, 20, &mut stream(seed, &[1])).map_err(err)?;
    let opts = ForecastOptions { horizon_days, ..Default::default() };
    let base = run_forecast(&model, &truth, &ens, &clim.mean, 0.0, &mut NeverInflate, &opts).map_err(err)?;
    let infl = match run_forecast(&model, &truth, &ens, &clim.mean, phi, &mut AlwaysInflate, &opts) {
        Ok(r) => r,
        Err(l96_core::Error::ForecastDiverged { partial, .. }) => *partial,
        Err(e) => return Err(e.to_string()),
    };
    let n = base.times_days.len();
    let crossed = l96_core::metrics::first_crossing(&infl.ac, AC_THRESHOLD).is_some() || infl.times_days.len() == n;
    to_json(&ForecastOut {
        slow,
        phi,
        times_days: base.times_days.clone(),
        rmse_baseline: finite(&base.rmse, n),
        ac_baseline: finite(&base.ac, n),
        rmse_inflated: finite(&infl.rmse, n),
        ac_inflated: finite(&infl.ac, n),
        useful_baseline: base.useful_time(AC_THRESHOLD),
        useful_inflated: crossed.then(|| infl.useful_time(AC_THRESHOLD)),
        inflations: infl.applied_inflations(),
    })
}

#[wasm_bindgen]
pub fn series(slow: usize, fast: usize, variable: usize, days: f64, seed: u32) -> Result<String, JsError> {
    series_json(slow, fast, variable, days, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn wave(slow: usize, fast: usize, site: usize, amount: f64, seed: u32) -> Result<String, JsError> {
    wave_json(slow, fast, site, amount, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn forecast(slow: usize, fast: usize, phi: f64, horizon_days: f64, seed: u32) -> Result<String, JsError> {
    forecast_json(slow, fast, phi, horizon_days, seed as u64).map_err(|e| JsError::new(&e))
}
