//! Ensemble forecasts of the model against a precomputed system truth, with
//! optional inflation along contracting ellipsoid directions.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{inflate_in_place, match_directions, svd_frame, EllipsoidFrame, Ensemble};
use crate::metrics::{anomaly_correlation, rmse};
use crate::model::{units_to_days, ModelParams, Rk4, SlowTrajectory, State};

/// What a gate sees when inflation is proposed along one contracting direction.
pub struct GateContext<'a> {
    pub direction: &'a [f64],
    pub direction_index: usize,
    pub ensemble: &'a Ensemble,
    /// Integration step of the analysis (0 is the forecast start).
    pub step: usize,
    /// Recent full control states, oldest first, ending with the current one.
    pub control_history: &'a VecDeque<State>,
}

impl GateContext<'_> {
    /// Control state `lookback` steps ago, or the oldest one kept, with its age in steps.
    pub fn control_lookback(&self, lookback: usize) -> (&State, usize) {
        let n = self.control_history.len();
        let back = lookback.min(n - 1);
        (&self.control_history[n - 1 - back], back)
    }
}

/// Decides whether a proposed inflation goes ahead.
pub trait InflationGate {
    fn allow(&mut self, ctx: &GateContext<'_>) -> Result<bool>;

    /// How many past control states the gate needs.
    fn lookback(&self) -> usize {
        0
    }
}

/// Inflates every contracting direction.
#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysInflate;

impl InflationGate for AlwaysInflate {
    fn allow(&mut self, _ctx: &GateContext<'_>) -> Result<bool> {
        Ok(true)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NeverInflate;

impl InflationGate for NeverInflate {
    fn allow(&mut self, _ctx: &GateContext<'_>) -> Result<bool> {
        Ok(false)
    }
}

impl<F> InflationGate for F
where
    F: FnMut(&GateContext<'_>) -> bool,
{
    fn allow(&mut self, ctx: &GateContext<'_>) -> Result<bool> {
        Ok(self(ctx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationEvent {
    pub step: usize,
    pub time_days: f64,
    pub direction: usize,
    /// Gate decision.
    pub allowed: bool,
    /// True when the ensemble was actually inflated (allowed and phi > 0).
    pub applied: bool,
}

/// Result of one analysis: the frame to compare against next time and the gate decisions.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub frame: EllipsoidFrame,
    pub events: Vec<InflationEvent>,
}

/// Computes the frame, matches it to `prev` and inflates contracting directions the gate passes.
///
/// The returned frame is the pre-inflation one: the next analysis compares
/// against the singular values as they were found, so a direction inflated
/// faster than it contracts is not proposed again straight away.
pub fn analyze_and_inflate(
    ensemble: &mut Ensemble,
    prev: Option<&EllipsoidFrame>,
    phi: f64,
    gate: &mut dyn InflationGate,
    step: usize,
    dt: f64,
    history: &VecDeque<State>,
) -> Result<Analysis> {
    let frame = svd_frame(ensemble)?;
    let mut events = Vec::new();
    let Some(prev) = prev else {
        return Ok(Analysis { frame, events });
    };
    let matched = match_directions(prev, &frame)?;
    for k in matched.contracting_indices() {
        let allowed = {
            let ctx = GateContext {
                direction: &frame.axes[k],
                direction_index: k,
                ensemble,
                step,
                control_history: history,
            };
            gate.allow(&ctx)?
        };
        events.push(InflationEvent { step, time_days: units_to_days(step as f64 * dt), direction: k, allowed, applied: allowed && phi > 0.0 });
        if allowed && phi > 0.0 {
            inflate_in_place(ensemble, &frame.axes[k], phi)?;
        }
    }
    Ok(Analysis { frame, events })
}

/// One integration step for every member, followed by an optional analysis.
pub fn forecast_step(
    params: &ModelParams,
    ensemble: &Ensemble,
    prev_frame: Option<&EllipsoidFrame>,
    phi: f64,
    gate: &mut dyn InflationGate,
    analyze: bool,
) -> Result<(Ensemble, Option<EllipsoidFrame>)> {
    ensemble.check_dims(params)?;
    let mut rk = Rk4::new(*params)?;
    let mut next = ensemble.clone();
    advance_members(&mut rk, &mut next, 1)?;
    if !analyze {
        return Ok((next, None));
    }
    let history: VecDeque<State> = [ensemble.control_state().clone(), next.control_state().clone()].into();
    let a = analyze_and_inflate(&mut next, prev_frame, phi, gate, 1, params.dt, &history)?;
    Ok((next, Some(a.frame)))
}

pub(crate) fn advance_members(rk: &mut Rk4, ensemble: &mut Ensemble, step: usize) -> Result<()> {
    for (member, state) in ensemble.members.iter_mut().enumerate() {
        if !rk.advance(state) {
            return Err(Error::MemberDivergence { member, step });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastOptions {
    /// Integration steps between ellipsoid analyses.
    pub cadence: usize,
    pub horizon_days: f64,
    pub store_members: bool,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self { cadence: 2, horizon_days: 50.0, store_members: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastRecord {
    pub times_days: Vec<f64>,
    /// Ensemble-mean slow variables at each recorded step.
    pub ensemble_mean: Vec<Vec<f64>>,
    pub rmse: Vec<f64>,
    /// NaN where the correlation is undefined.
    pub ac: Vec<f64>,
    pub inflation_events: Vec<InflationEvent>,
    /// Slow variables of every member at each step, when requested.
    pub member_trajectories: Option<Vec<Vec<Vec<f64>>>>,
    pub horizon_days: f64,
}

impl ForecastRecord {
    fn new(opts: &ForecastOptions) -> Self {
        Self {
            times_days: Vec::new(),
            ensemble_mean: Vec::new(),
            rmse: Vec::new(),
            ac: Vec::new(),
            inflation_events: Vec::new(),
            member_trajectories: opts.store_members.then(Vec::new),
            horizon_days: opts.horizon_days,
        }
    }

    pub(crate) fn push(&mut self, t_days: f64, ensemble: &Ensemble, truth: &[f64], clim_mean: &[f64]) {
        let mean = ensemble.slow_mean();
        self.times_days.push(t_days);
        self.rmse.push(rmse(&mean, truth));
        self.ac.push(anomaly_correlation(&mean, truth, clim_mean).unwrap_or(f64::NAN));
        if let Some(m) = self.member_trajectories.as_mut() {
            m.push(ensemble.members.iter().map(|s| s.x().to_vec()).collect());
        }
        self.ensemble_mean.push(mean);
    }

    pub fn applied_inflations(&self) -> usize {
        self.inflation_events.iter().filter(|e| e.applied).count()
    }

    pub fn useful_time(&self, threshold: f64) -> f64 {
        crate::metrics::useful_time(&self.ac, &self.times_days, threshold, self.horizon_days)
    }
}

/// Rolling window of control states for gates that look back in time.
pub(crate) fn push_history(history: &mut VecDeque<State>, state: &State, keep: usize) {
    history.push_back(state.clone());
    while history.len() > keep + 1 {
        history.pop_front();
    }
}

/// Steps the ensemble to the horizon, analysing every `cadence` steps and
/// recording RMSE and AC of the ensemble mean against the truth at every step.
pub fn run_forecast(
    params: &ModelParams,
    truth: &SlowTrajectory,
    ensemble: &Ensemble,
    clim_mean: &[f64],
    phi: f64,
    gate: &mut dyn InflationGate,
    opts: &ForecastOptions,
) -> Result<ForecastRecord> {
    ensemble.check_dims(params)?;
    if opts.cadence == 0 {
        return Err(Error::InvalidInput("analysis cadence must be at least 1".into()));
    }
    let n_steps = params.steps_for_days(opts.horizon_days);
    if truth.steps() < n_steps || truth.slow != params.slow {
        return Err(Error::InvalidInput(format!(
            "truth covers {} steps of {} slow variables, forecast needs {n_steps} of {}",
            truth.steps(),
            truth.slow,
            params.slow
        )));
    }
    let mut rk = Rk4::new(*params)?;
    let mut ens = ensemble.clone();
    let t0 = ens.control_state().t;
    let keep = gate.lookback();
    let mut history = VecDeque::with_capacity(keep + 2);
    push_history(&mut history, ens.control_state(), keep);

    let mut record = ForecastRecord::new(opts);
    record.push(0.0, &ens, truth.at(0), clim_mean);
    let mut prev: Option<EllipsoidFrame> = None;
    for k in 1..=n_steps {
        if let Err(e) = advance_members(&mut rk, &mut ens, k) {
            return Err(partial(e, record));
        }
        for m in ens.members.iter_mut() {
            m.t = t0 + k as f64 * params.dt;
        }
        push_history(&mut history, ens.control_state(), keep);
        if k % opts.cadence == 0 {
            let a = analyze_and_inflate(&mut ens, prev.as_ref(), phi, gate, k, params.dt, &history)?;
            record.inflation_events.extend(a.events);
            prev = Some(a.frame);
        }
        record.push(units_to_days(k as f64 * params.dt), &ens, truth.at(k), clim_mean);
    }
    Ok(record)
}

fn partial(e: Error, record: ForecastRecord) -> Error {
    match e {
        Error::MemberDivergence { member, step } => Error::ForecastDiverged { member, step, partial: Box::new(record) },
        other => other,
    }
}
