//! Single-trajectory diagnostics: perturbation waves, regularity series and
//! error-doubling times.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::init::spun_up_state;
use crate::model::{slow_distance, ModelParams, Rk4, State};
use crate::rng::stream;

/// Spin-up applied to random starting points before any diagnostic.
pub const SPINUP_DAYS: f64 = 50.0;

/// A state on the attractor of `params`, reached from a seeded random start.
pub fn attractor_state(params: &ModelParams, seed: u64, spinup_days: f64) -> Result<State> {
    params.validate()?;
    let mut rng = stream(seed, &[0xa7]);
    let mut s = spun_up_state(params, params.steps_for_days(spinup_days), &mut rng)?;
    s.t = 0.0;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveProfile {
    pub time_days: f64,
    pub unperturbed: Vec<f64>,
    pub perturbed: Vec<f64>,
}

impl WaveProfile {
    pub fn difference(&self) -> Vec<f64> {
        self.perturbed.iter().zip(&self.unperturbed).map(|(p, u)| p - u).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveDemo {
    pub params: ModelParams,
    /// 1-based perturbed site.
    pub site: usize,
    pub amount: f64,
    pub profiles: Vec<WaveProfile>,
}

impl WaveDemo {
    pub fn at(&self, day: f64) -> Option<&WaveProfile> {
        self.profiles.iter().find(|p| (p.time_days - day).abs() < 1e-9)
    }
}

/// Where the profile windows fall, in days.
pub const WAVE_WINDOWS: [(f64, f64); 2] = [(0.0, 5.0), (50.0, 55.0)];
pub const WAVE_INTERVAL_DAYS: f64 = 0.5;

/// Twin runs from one attractor state, one with `amount` added to slow site
/// `site` (1-based). Profiles are kept every 12 hours inside the windows.
pub fn wave_demo(params: &ModelParams, site: usize, amount: f64, days: f64, seed: u64) -> Result<WaveDemo> {
    if site == 0 || site > params.slow {
        return Err(Error::InvalidInput(format!("site {site} outside 1..={}", params.slow)));
    }
    let base = attractor_state(params, seed, SPINUP_DAYS)?;
    let mut pert = base.clone();
    pert.x_mut()[site - 1] += amount;
    let mut a = base;
    let mut rk = Rk4::new(*params)?;
    let every = params.steps_for_days(WAVE_INTERVAL_DAYS).max(1);
    let total = params.steps_for_days(days);
    let keep = |day: f64| WAVE_WINDOWS.iter().any(|(lo, hi)| day >= lo - 1e-9 && day <= hi + 1e-9);
    let mut profiles = Vec::new();
    for k in 0..=total {
        if k > 0 {
            rk.advance_n(&mut a, 1)?;
            rk.advance_n(&mut pert, 1)?;
        }
        let day = k as f64 * params.step_days();
        if k % every == 0 && keep(day) {
            profiles.push(WaveProfile { time_days: day, unperturbed: a.x().to_vec(), perturbed: pert.x().to_vec() });
        }
    }
    Ok(WaveDemo { params: *params, site, amount, profiles })
}

/// Mean signed ring offset from `site` (1-based), weighted by |difference|.
pub fn offset_center_of_mass(diff: &[f64], site: usize) -> f64 {
    let n = diff.len() as isize;
    let (mut w, mut m) = (0.0, 0.0);
    for (i, d) in diff.iter().enumerate() {
        let mut off = i as isize - (site as isize - 1);
        off = off.rem_euclid(n);
        if off >= (n + 1) / 2 {
            off -= n;
        }
        w += d.abs();
        m += d.abs() * off as f64;
    }
    if w > 0.0 { m / w } else { 0.0 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPanel {
    pub slow: usize,
    pub fast: usize,
    pub times_days: Vec<f64>,
    /// Values of one slow variable.
    pub values: Vec<f64>,
}

/// One slow variable (1-based `variable`) over `days` for every (I, J) pair.
pub fn series_demo(slows: &[usize], fasts: &[usize], variable: usize, days: f64, seed: u64) -> Result<Vec<SeriesPanel>> {
    let mut out = Vec::with_capacity(slows.len() * fasts.len());
    for &i in slows {
        for &j in fasts {
            let p = ModelParams::system(i, j);
            if variable == 0 || variable > i {
                return Err(Error::InvalidInput(format!("variable {variable} outside 1..={i}")));
            }
            let mut s = attractor_state(&p, seed, SPINUP_DAYS)?;
            let mut rk = Rk4::new(p)?;
            let n = p.steps_for_days(days);
            let mut times_days = Vec::with_capacity(n + 1);
            let mut values = Vec::with_capacity(n + 1);
            for k in 0..=n {
                if k > 0 {
                    rk.advance_n(&mut s, 1)?;
                }
                times_days.push(k as f64 * p.step_days());
                values.push(s.x()[variable - 1]);
            }
            out.push(SeriesPanel { slow: i, fast: j, times_days, values });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoublingReport {
    /// Per-state doubling time in days; `None` if the separation never doubled.
    pub per_state: Vec<Option<f64>>,
    pub mean_days: f64,
}

/// Twin-trajectory doubling time of the slow-variable separation.
///
/// Each of `states` attractor points (spaced `spacing_days` apart) gets a twin
/// with `perturbation` added to one slow variable (cycling through the sites);
/// the doubling time is the first time the separation reaches twice its
/// initial size.
pub fn doubling_time(params: &ModelParams, states: usize, perturbation: f64, spacing_days: f64, max_days: f64, seed: u64) -> Result<DoublingReport> {
    if !(perturbation > 0.0) || states == 0 {
        return Err(Error::InvalidInput("need a positive perturbation and at least one state".into()));
    }
    let mut rk = Rk4::new(*params)?;
    let mut origin = attractor_state(params, seed, SPINUP_DAYS)?;
    let spacing = params.steps_for_days(spacing_days);
    let limit = params.steps_for_days(max_days);
    let mut per_state = Vec::with_capacity(states);
    for n in 0..states {
        rk.advance_n(&mut origin, spacing)?;
        let mut a = origin.clone();
        let mut b = origin.clone();
        b.x_mut()[n % params.slow] += perturbation;
        let d0 = slow_distance(&a, &b);
        let mut found = None;
        for k in 1..=limit {
            rk.advance_n(&mut a, 1)?;
            rk.advance_n(&mut b, 1)?;
            if slow_distance(&a, &b) >= 2.0 * d0 {
                found = Some(k as f64 * params.step_days());
                break;
            }
        }
        per_state.push(found);
    }
    let hit: Vec<f64> = per_state.iter().flatten().copied().collect();
    let mean_days = if hit.is_empty() { f64::INFINITY } else { hit.iter().sum::<f64>() / hit.len() as f64 };
    Ok(DoublingReport { per_state, mean_days })
}
