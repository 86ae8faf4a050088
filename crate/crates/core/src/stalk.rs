//! Shadowing and stalking with a known truth.
//!
//! Every `cadence` steps the ensemble ellipsoid is intersected with the
//! sigma-sphere around the truth. The overlap is approximated by candidate
//! points (the members plus uniform draws inside the ellipsoid) that fall in
//! the sphere, and the ensemble is redrawn from those points. Inflation, when
//! enabled, is analysed at the same cadence just before each redefinition.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{advance_members, analyze_and_inflate, push_history, InflationEvent, InflationGate};
use crate::geometry::{svd_frame, EllipsoidFrame, Ensemble};
use crate::metrics::{anomaly_correlation, rmse};
use crate::model::{units_to_days, ModelParams, Rk4, SlowTrajectory, State};
use crate::rng::{stream, StreamRng};

pub const DEFAULT_SIGMA_FRACTION: f64 = 0.10;
pub const DEFAULT_CANDIDATES: usize = 512;
pub const DEFAULT_STALK_CADENCE: usize = 4;

/// Truth location with per-dimension radii; membership uses the scaled norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaSphere {
    pub center: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl SigmaSphere {
    pub fn new(center: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if center.len() != sigma.len() || sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidInput("sigma must be positive with one entry per slow variable".into()));
        }
        Ok(Self { center, sigma })
    }

    /// sqrt(sum(((p_i - c_i) / sigma_i)^2))
    pub fn scaled_distance(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.center)
            .zip(&self.sigma)
            .map(|((v, c), s)| ((v - c) / s).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        self.scaled_distance(p) <= 1.0
    }
}

#[derive(Debug, Clone)]
pub enum Redefinition {
    Redefined {
        ensemble: Ensemble,
        /// Frame of the retained points about their mean.
        overlap: EllipsoidFrame,
        retained: usize,
    },
    /// No candidate point fell inside the sphere.
    Failure,
}

fn uniform_in_ball(dim: usize, rng: &mut StreamRng) -> Vec<f64> {
    let g: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let r = rng.random::<f64>().powf(1.0 / dim as f64);
    g.iter().map(|v| v * r / norm.max(f64::MIN_POSITIVE)).collect()
}

/// Replaces the ensemble by `m` members drawn inside the ellipsoid/sphere overlap.
///
/// The new control is the mean of the retained points. Each other member is a
/// retained point pulled towards that mean by `sqrt((d + 2) / (m - 1))`, which
/// matches the member spread to the spread of uniform points in a `d`-ball and
/// keeps every member inside the (convex) sphere.
pub fn redefine_ensemble(ensemble: &Ensemble, sphere: &SigmaSphere, candidates: usize, rng: &mut StreamRng) -> Result<Redefinition> {
    let n = ensemble.slow_len();
    if sphere.center.len() != n {
        return Err(Error::InvalidInput("sphere and ensemble differ in dimension".into()));
    }
    let m = ensemble.len();
    let frame = EllipsoidFrame::from_anomalies(&ensemble.anomaly_matrix(), ensemble.control_state().t);
    let control = ensemble.control_state().x();
    let d = frame.axes.len();

    let mut points: Vec<Vec<f64>> = ensemble.members.iter().map(|s| s.x().to_vec()).collect();
    for _ in 0..candidates {
        let b = uniform_in_ball(d, rng);
        let mut p = control.to_vec();
        for (k, axis) in frame.axes.iter().enumerate() {
            let w = frame.singular_values[k] * b[k];
            for (v, u) in p.iter_mut().zip(axis) {
                *v += w * u;
            }
        }
        points.push(p);
    }
    let retained_idx: Vec<usize> = (0..points.len()).filter(|&k| sphere.contains(&points[k])).collect();
    if retained_idx.is_empty() {
        return Ok(Redefinition::Failure);
    }
    let retained: Vec<&Vec<f64>> = retained_idx.iter().map(|&k| &points[k]).collect();
    let mut mean = vec![0.0; n];
    for p in &retained {
        for (a, v) in mean.iter_mut().zip(p.iter()) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= retained.len() as f64);
    let overlap = EllipsoidFrame::from_anomalies(
        &DMatrix::from_fn(n, retained.len(), |i, j| retained[j][i] - mean[i]),
        ensemble.control_state().t,
    );

    // members that survived the cut donate fast variables; fall back to all members
    let survivors: Vec<usize> = retained_idx.iter().copied().filter(|&k| k < m).collect();
    let donors: Vec<usize> = if survivors.is_empty() { (0..m).collect() } else { survivors };
    let donor_for = |x: &[f64]| -> &State {
        let best = donors
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let da = dist2(ensemble.members[a].x(), x);
                let db = dist2(ensemble.members[b].x(), x);
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .expect("donor list is never empty");
        &ensemble.members[best]
    };

    let alpha = ((d as f64 + 2.0) / (m as f64 - 1.0)).sqrt().min(1.0);
    let mut order: Vec<usize> = (0..retained.len()).collect();
    order.shuffle(rng);
    let t = ensemble.control_state().t;
    let mut members = Vec::with_capacity(m);
    members.push(State::new(&mean, donor_for(&mean).y(), t)?);
    for j in 0..m - 1 {
        let p = retained[order[j % order.len()]];
        let x: Vec<f64> = p.iter().zip(&mean).map(|(v, c)| c + alpha * (v - c)).collect();
        members.push(State::new(&x, donor_for(&x).y(), t)?);
    }
    Ok(Redefinition::Redefined { ensemble: Ensemble::new(members, 0)?, overlap, retained: retained.len() })
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StalkOptions {
    pub cadence: usize,
    pub horizon_days: f64,
    pub candidates: usize,
}

impl Default for StalkOptions {
    fn default() -> Self {
        Self { cadence: DEFAULT_STALK_CADENCE, horizon_days: 50.0, candidates: DEFAULT_CANDIDATES }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedefinitionEvent {
    pub step: usize,
    pub time_days: f64,
    pub retained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalkRecord {
    /// Time of the last successful redefinition, or the horizon if the stalk never failed.
    pub shadow_time_days: f64,
    pub failed: bool,
    pub redefinitions: Vec<RedefinitionEvent>,
    pub inflation_events: Vec<InflationEvent>,
    pub times_days: Vec<f64>,
    pub rmse: Vec<f64>,
    pub ac: Vec<f64>,
    pub horizon_days: f64,
}

impl StalkRecord {
    pub fn applied_inflations(&self) -> usize {
        self.inflation_events.iter().filter(|e| e.applied).count()
    }
}

/// Alternates `cadence` integration steps with inflation analysis and redefinition.
///
/// Redefinition `r` draws from the stream `(seed, r)`, so runs with the same
/// seed stay identical until their ensembles first differ.
#[allow(clippy::too_many_arguments)]
pub fn run_stalk(
    params: &ModelParams,
    truth: &SlowTrajectory,
    ensemble: &Ensemble,
    clim_mean: &[f64],
    sigma: &[f64],
    phi: f64,
    gate: &mut dyn InflationGate,
    opts: &StalkOptions,
    seed: u64,
) -> Result<StalkRecord> {
    ensemble.check_dims(params)?;
    if opts.cadence == 0 {
        return Err(Error::InvalidInput("redefinition cadence must be at least 1".into()));
    }
    let n_steps = params.steps_for_days(opts.horizon_days);
    if truth.steps() < n_steps || truth.slow != params.slow {
        return Err(Error::InvalidInput("truth trajectory does not cover the stalk horizon".into()));
    }
    SigmaSphere::new(truth.at(0).to_vec(), sigma.to_vec())?;

    let mut rk = Rk4::new(*params)?;
    let mut ens = ensemble.clone();
    let t0 = ens.control_state().t;
    let keep = gate.lookback();
    let mut history = VecDeque::with_capacity(keep + 2);
    push_history(&mut history, ens.control_state(), keep);

    let mut record = StalkRecord {
        shadow_time_days: 0.0,
        failed: false,
        redefinitions: Vec::new(),
        inflation_events: Vec::new(),
        times_days: Vec::new(),
        rmse: Vec::new(),
        ac: Vec::new(),
        horizon_days: opts.horizon_days,
    };
    let push = |rec: &mut StalkRecord, t: f64, ens: &Ensemble, truth: &[f64]| {
        let mean = ens.slow_mean();
        rec.times_days.push(t);
        rec.rmse.push(rmse(&mean, truth));
        rec.ac.push(anomaly_correlation(&mean, truth, clim_mean).unwrap_or(f64::NAN));
    };
    push(&mut record, 0.0, &ens, truth.at(0));

    let can_analyze = ens.len() > ens.slow_len();
    let mut prev: Option<EllipsoidFrame> = if can_analyze { Some(svd_frame(&ens)?) } else { None };
    let mut redef_index = 0u64;
    for k in 1..=n_steps {
        if let Err(e) = advance_members(&mut rk, &mut ens, k) {
            return Err(match e {
                Error::MemberDivergence { member, step } => Error::StalkDiverged { member, step, partial: Box::new(record) },
                other => other,
            });
        }
        for m in ens.members.iter_mut() {
            m.t = t0 + k as f64 * params.dt;
        }
        push_history(&mut history, ens.control_state(), keep);
        if k % opts.cadence == 0 {
            if phi > 0.0 && can_analyze {
                let a = analyze_and_inflate(&mut ens, prev.as_ref(), phi, gate, k, params.dt, &history)?;
                record.inflation_events.extend(a.events);
            }
            let sphere = SigmaSphere::new(truth.at(k).to_vec(), sigma.to_vec())?;
            let mut rng = stream(seed, &[redef_index]);
            redef_index += 1;
            match redefine_ensemble(&ens, &sphere, opts.candidates, &mut rng)? {
                Redefinition::Failure => {
                    record.failed = true;
                    push(&mut record, units_to_days(k as f64 * params.dt), &ens, truth.at(k));
                    return Ok(record);
                }
                Redefinition::Redefined { ensemble, retained, .. } => {
                    ens = ensemble;
                    record.shadow_time_days = units_to_days(k as f64 * params.dt);
                    record.redefinitions.push(RedefinitionEvent { step: k, time_days: record.shadow_time_days, retained });
                    // the control jumped; restart the lookback window
                    history.clear();
                    push_history(&mut history, ens.control_state(), keep);
                    if can_analyze {
                        prev = Some(svd_frame(&ens)?);
                    }
                }
            }
        }
        push(&mut record, units_to_days(k as f64 * params.dt), &ens, truth.at(k));
    }
    record.shadow_time_days = opts.horizon_days;
    Ok(record)
}
