//! Two-scale Lorenz '96 equations and a fixed-step RK4 integrator.
//!
//! Slow variables `x[0..I]` sit on a latitude ring; each slow site `i` is
//! coupled to the block of fast variables `y[i*J..(i+1)*J]`. Both rings are
//! cyclic. Time is kept in model units throughout (one unit is five days).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Days per model time unit.
pub const DAYS_PER_UNIT: f64 = 5.0;

pub fn days_to_units(days: f64) -> f64 {
    days / DAYS_PER_UNIT
}

pub fn units_to_days(units: f64) -> f64 {
    units * DAYS_PER_UNIT
}

/// Tunable constants of the two-scale system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of slow variables (I).
    pub slow: usize,
    /// Fast variables per slow variable (J).
    pub fast: usize,
    /// External forcing F.
    pub forcing: f64,
    /// Coupling strength h.
    pub coupling: f64,
    /// Time-scale ratio c.
    pub time_ratio: f64,
    /// Amplitude ratio b.
    pub amplitude_ratio: f64,
    /// Integration step in model time units.
    pub dt: f64,
}

impl ModelParams {
    pub const DEFAULT_FORCING: f64 = 14.0;
    pub const DEFAULT_DT: f64 = 0.01;
    pub const SYSTEM_COUPLING: f64 = 1.0;
    pub const MODEL_COUPLING: f64 = 0.5;

    /// The "truth" generator (h = 1).
    pub fn system(slow: usize, fast: usize) -> Self {
        Self::with_coupling(slow, fast, Self::SYSTEM_COUPLING)
    }

    /// The imperfect forecast model (h = 0.5).
    pub fn model(slow: usize, fast: usize) -> Self {
        Self::with_coupling(slow, fast, Self::MODEL_COUPLING)
    }

    pub fn with_coupling(slow: usize, fast: usize, coupling: f64) -> Self {
        Self {
            slow,
            fast,
            forcing: Self::DEFAULT_FORCING,
            coupling,
            time_ratio: 10.0,
            amplitude_ratio: 10.0,
            dt: Self::DEFAULT_DT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.slow < 4 {
            return Err(Error::InvalidInput(format!(
                "need at least 4 slow variables, got {}",
                self.slow
            )));
        }
        if self.fast < 1 {
            return Err(Error::InvalidInput("need at least 1 fast variable per site".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.time_ratio > 0.0) {
            return Err(Error::InvalidInput(format!("c must be positive, got {}", self.time_ratio)));
        }
        if self.amplitude_ratio == 0.0 || !self.amplitude_ratio.is_finite() {
            return Err(Error::InvalidInput("b must be finite and nonzero".into()));
        }
        if !self.forcing.is_finite() || !self.coupling.is_finite() {
            return Err(Error::InvalidInput("F and h must be finite".into()));
        }
        Ok(())
    }

    pub fn fast_len(&self) -> usize {
        self.slow * self.fast
    }

    /// Full state dimension n = (J + 1) I.
    pub fn state_len(&self) -> usize {
        self.slow + self.fast_len()
    }

    /// Number of RK4 steps covering `days`, rounded to the nearest step.
    pub fn steps_for_days(&self, days: f64) -> usize {
        (days_to_units(days) / self.dt).round() as usize
    }

    pub fn step_days(&self) -> f64 {
        units_to_days(self.dt)
    }
}

/// One instant of the full system: slow values, then fast values, in one buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    data: Vec<f64>,
    slow: usize,
    /// Model time units.
    pub t: f64,
}

impl State {
    pub fn new(x: &[f64], y: &[f64], t: f64) -> Result<Self> {
        if x.is_empty() || y.len() % x.len() != 0 {
            return Err(Error::InvalidInput(format!(
                "fast length {} is not a multiple of slow length {}",
                y.len(),
                x.len()
            )));
        }
        let mut data = Vec::with_capacity(x.len() + y.len());
        data.extend_from_slice(x);
        data.extend_from_slice(y);
        Ok(Self { data, slow: x.len(), t })
    }

    pub fn zeros(params: &ModelParams) -> Self {
        Self { data: vec![0.0; params.state_len()], slow: params.slow, t: 0.0 }
    }

    pub fn x(&self) -> &[f64] {
        &self.data[..self.slow]
    }

    pub fn y(&self) -> &[f64] {
        &self.data[self.slow..]
    }

    pub fn x_mut(&mut self) -> &mut [f64] {
        &mut self.data[..self.slow]
    }

    pub fn y_mut(&mut self) -> &mut [f64] {
        &mut self.data[self.slow..]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn slow_len(&self) -> usize {
        self.slow
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_dims(&self, params: &ModelParams) -> Result<()> {
        if self.slow != params.slow || self.data.len() != params.state_len() {
            return Err(Error::InvalidInput(format!(
                "state has {} slow / {} total values, params expect {} / {}",
                self.slow,
                self.data.len(),
                params.slow,
                params.state_len()
            )));
        }
        Ok(())
    }
}

/// Time derivative of a [`State`].
#[derive(Debug, Clone, PartialEq)]
pub struct Tendency {
    data: Vec<f64>,
    slow: usize,
}

impl Tendency {
    pub fn dx(&self) -> &[f64] {
        &self.data[..self.slow]
    }

    pub fn dy(&self) -> &[f64] {
        &self.data[self.slow..]
    }
}

/// Evaluates the two-scale equations into `out` (same layout as the state buffer).
///
/// dx_i/dt = x_{i-1}(x_{i+1} - x_{i-2}) - x_i + F - (hc/b) sum_{j in block i} y_j
/// dy_j/dt = -cb y_{j+1}(y_{j+2} - y_{j-1}) - c y_j + (hc/b) x_{site(j)}
fn tendency_into(p: &ModelParams, state: &[f64], out: &mut [f64]) {
    let ni = p.slow;
    let nj = p.fast;
    let (x, y) = state.split_at(ni);
    let (dx, dy) = out.split_at_mut(ni);
    let n = y.len();
    let coupling = p.coupling * p.time_ratio / p.amplitude_ratio;
    let cb = p.time_ratio * p.amplitude_ratio;
    let c = p.time_ratio;

    for i in 0..ni {
        let xm1 = x[(i + ni - 1) % ni];
        let xm2 = x[(i + ni - 2) % ni];
        let xp1 = x[(i + 1) % ni];
        let block: f64 = y[i * nj..(i + 1) * nj].iter().sum();
        dx[i] = xm1 * (xp1 - xm2) - x[i] + p.forcing - coupling * block;
    }

    let fast = |j: usize, ym1: f64, yp1: f64, yp2: f64| -> f64 {
        -cb * yp1 * (yp2 - ym1) - c * y[j] + coupling * x[j / nj]
    };
    if n >= 3 {
        dy[0] = fast(0, y[n - 1], y[1], y[2]);
        for j in 1..n - 2 {
            dy[j] = fast(j, y[j - 1], y[j + 1], y[j + 2]);
        }
        dy[n - 2] = fast(n - 2, y[n - 3], y[n - 1], y[0]);
        dy[n - 1] = fast(n - 1, y[n - 2], y[0], y[1]);
    } else {
        for j in 0..n {
            dy[j] = fast(j, y[(j + n - 1) % n], y[(j + 1) % n], y[(j + 2) % n]);
        }
    }
}

pub fn tendency(params: &ModelParams, state: &State) -> Result<Tendency> {
    state.check_dims(params)?;
    let mut data = vec![0.0; state.data.len()];
    tendency_into(params, &state.data, &mut data);
    Ok(Tendency { data, slow: state.slow })
}

/// Reusable RK4 stage buffers so the hot loop does not allocate.
#[derive(Debug, Clone)]
pub struct Rk4 {
    params: ModelParams,
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let n = params.state_len();
        Ok(Self {
            params,
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Advances `state` by one step in place. Returns false if the result is not finite.
    pub fn advance(&mut self, state: &mut State) -> bool {
        let p = &self.params;
        let dt = p.dt;
        let s = &mut state.data;
        tendency_into(p, s, &mut self.k1);
        for ((t, &v), &k) in self.tmp.iter_mut().zip(s.iter()).zip(&self.k1) {
            *t = v + 0.5 * dt * k;
        }
        tendency_into(p, &self.tmp, &mut self.k2);
        for ((t, &v), &k) in self.tmp.iter_mut().zip(s.iter()).zip(&self.k2) {
            *t = v + 0.5 * dt * k;
        }
        tendency_into(p, &self.tmp, &mut self.k3);
        for ((t, &v), &k) in self.tmp.iter_mut().zip(s.iter()).zip(&self.k3) {
            *t = v + dt * k;
        }
        tendency_into(p, &self.tmp, &mut self.k4);
        let mut finite = true;
        for (i, v) in s.iter_mut().enumerate() {
            *v += dt / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
            finite &= v.is_finite();
        }
        state.t += dt;
        finite
    }

    /// Advances `n_steps` steps; the divergence error carries the 1-based step index.
    pub fn advance_n(&mut self, state: &mut State, n_steps: usize) -> Result<()> {
        let t0 = state.t;
        for k in 1..=n_steps {
            if !self.advance(state) {
                return Err(Error::Divergence { step: k, time: state.t });
            }
        }
        state.t = t0 + n_steps as f64 * self.params.dt;
        Ok(())
    }
}

/// One classical RK4 step of size `params.dt`.
pub fn rk4_step(params: &ModelParams, state: &State) -> Result<State> {
    state.check_dims(params)?;
    if !state.is_finite() {
        return Err(Error::InvalidInput("state contains non-finite values".into()));
    }
    let mut rk = Rk4::new(*params)?;
    let mut next = state.clone();
    if !rk.advance(&mut next) {
        return Err(Error::Divergence { step: 1, time: next.t });
    }
    next.t = state.t + params.dt;
    Ok(next)
}

/// Integrates `n_steps` steps, recording every `record_every`-th state.
///
/// The initial state is not recorded; the final state always is.
pub fn integrate(
    params: &ModelParams,
    state: &State,
    n_steps: usize,
    record_every: usize,
) -> Result<Vec<State>> {
    if n_steps == 0 || record_every == 0 {
        return Err(Error::InvalidInput("n_steps and record_every must be at least 1".into()));
    }
    state.check_dims(params)?;
    let mut rk = Rk4::new(*params)?;
    let t0 = state.t;
    let mut cur = state.clone();
    let mut out = Vec::with_capacity(n_steps / record_every + 1);
    for k in 1..=n_steps {
        if !rk.advance(&mut cur) {
            return Err(Error::Divergence { step: k, time: cur.t });
        }
        cur.t = t0 + k as f64 * params.dt;
        if k % record_every == 0 || k == n_steps {
            out.push(cur.clone());
        }
    }
    Ok(out)
}

/// Slow variables sampled at every integration step, starting at step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlowTrajectory {
    pub slow: usize,
    pub t0: f64,
    pub dt: f64,
    data: Vec<f64>,
}

impl SlowTrajectory {
    pub fn len(&self) -> usize {
        self.data.len() / self.slow
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Slow vector at step `k` (step 0 is the initial state).
    pub fn at(&self, k: usize) -> &[f64] {
        &self.data[k * self.slow..(k + 1) * self.slow]
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn steps(&self) -> usize {
        self.len().saturating_sub(1)
    }

    pub fn from_rows(slow: usize, t0: f64, dt: f64, rows: &[Vec<f64>]) -> Result<Self> {
        if slow == 0 || rows.iter().any(|r| r.len() != slow) {
            return Err(Error::InvalidInput("trajectory rows must all have the slow length".into()));
        }
        Ok(Self { slow, t0, dt, data: rows.concat() })
    }
}

/// Integrates `n_steps` and keeps the slow variables at every step, including step 0.
pub fn slow_trajectory(params: &ModelParams, state: &State, n_steps: usize) -> Result<SlowTrajectory> {
    state.check_dims(params)?;
    let mut rk = Rk4::new(*params)?;
    let mut cur = state.clone();
    let mut data = Vec::with_capacity((n_steps + 1) * params.slow);
    data.extend_from_slice(cur.x());
    for k in 1..=n_steps {
        if !rk.advance(&mut cur) {
            return Err(Error::Divergence { step: k, time: cur.t });
        }
        data.extend_from_slice(cur.x());
    }
    Ok(SlowTrajectory { slow: params.slow, t0: state.t, dt: params.dt, data })
}

/// Euclidean distance between the slow parts of two states.
pub fn slow_distance(a: &State, b: &State) -> f64 {
    a.x().iter().zip(b.x()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}
