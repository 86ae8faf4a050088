//! Sweep orchestration: configuration, per-hypersphere jobs and aggregation.
//!
//! Every hypersphere job is a pure function of the config and its index, so a
//! sweep gives the same records whatever the worker count.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forecast::{run_forecast, AlwaysInflate, ForecastOptions, InflationGate, NeverInflate};
use crate::geometry::Ensemble;
use crate::init::{compute_climatology, create_montecarlo_ensemble, create_structured_ensemble, draw_initial_truths, Climatology, ClimatologyConfig};
use crate::metrics::{classify_outcome, first_crossing, Outcome, OutcomeTally, AC_THRESHOLD};
use crate::model::{slow_trajectory, ModelParams, State};
use crate::rng::{derive_seed, stream};
use crate::stalk::{run_stalk, StalkOptions};
use crate::targeted::{CloudCache, TargetedConfig, TargetedGate, DEFAULT_VARIANCE_FRACTION};

const TAG_CLIMATOLOGY: u64 = 0;
const TAG_ENSEMBLE: u64 = 1;
const TAG_STALK: u64 = 2;
const TAG_CLOUD: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    Structured,
    Montecarlo,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "structured" => Ok(Self::Structured),
            "montecarlo" | "monte-carlo" => Ok(Self::Montecarlo),
            other => Err(Error::InvalidInput(format!("unknown init mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepMode {
    Forecast,
    Stalk,
}

impl SweepMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Forecast => "forecast",
            Self::Stalk => "stalk",
        }
    }
}

impl fmt::Display for SweepMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SweepMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" => Ok(Self::Forecast),
            "stalk" => Ok(Self::Stalk),
            other => Err(Error::InvalidInput(format!("unknown sweep mode `{other}`"))),
        }
    }
}

/// Every knob of a sweep. Missing keys in a config file take the full-size defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// Slow-variable counts to sweep.
    pub slow: Vec<usize>,
    pub fast: usize,
    pub forcing: f64,
    pub time_ratio: f64,
    pub amplitude_ratio: f64,
    pub system_coupling: f64,
    pub model_coupling: f64,
    pub dt: f64,
    pub n_hyperspheres: usize,
    pub spacing_days: f64,
    pub horizon_days: f64,
    pub members: usize,
    pub phi_grid: Vec<f64>,
    pub mu_grid: Vec<f64>,
    pub sigma_fraction: f64,
    pub init_mode: InitMode,
    pub forecast_cadence: usize,
    pub stalk_cadence: usize,
    pub stalk_candidates: usize,
    pub analogs: usize,
    pub analog_lookback: usize,
    pub variance_fraction: f64,
    pub cache_alternate: bool,
    /// Keep every n-th sample of the averaged RMSE/AC series.
    pub series_stride: usize,
    pub climatology: ClimatologyConfig,
    /// Where climatology cache files live; none means always recompute.
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ExperimentConfig {
    /// Full-size profile: 500 hyperspheres per slow-variable count.
    pub fn full() -> Self {
        Self {
            master_seed: 42,
            slow: vec![4, 5, 6],
            fast: 16,
            forcing: ModelParams::DEFAULT_FORCING,
            time_ratio: 10.0,
            amplitude_ratio: 10.0,
            system_coupling: ModelParams::SYSTEM_COUPLING,
            model_coupling: ModelParams::MODEL_COUPLING,
            dt: ModelParams::DEFAULT_DT,
            n_hyperspheres: 500,
            spacing_days: 250.0,
            horizon_days: 50.0,
            members: 20,
            phi_grid: vec![0.005, 0.01, 0.02, 0.05],
            mu_grid: vec![0.0, 0.8, 0.9],
            sigma_fraction: 0.10,
            init_mode: InitMode::Structured,
            forecast_cadence: 2,
            stalk_cadence: 4,
            stalk_candidates: 512,
            analogs: 1000,
            analog_lookback: 50,
            variance_fraction: DEFAULT_VARIANCE_FRACTION,
            cache_alternate: false,
            series_stride: 1,
            climatology: ClimatologyConfig::default(),
            cache_dir: None,
            out_dir: PathBuf::from("out"),
        }
    }

    /// Desk-scale profile: 50 hyperspheres.
    pub fn desk() -> Self {
        Self { n_hyperspheres: 50, ..Self::full() }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "desk" => Ok(Self::desk()),
            other => Err(Error::InvalidInput(format!("unknown profile `{other}` (expected desk or full)"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidInput(format!("cannot render config: {e}")))
    }

    pub fn system_params(&self, slow: usize) -> ModelParams {
        self.params(slow, self.system_coupling)
    }

    pub fn model_params(&self, slow: usize) -> ModelParams {
        self.params(slow, self.model_coupling)
    }

    fn params(&self, slow: usize, coupling: f64) -> ModelParams {
        ModelParams {
            slow,
            fast: self.fast,
            forcing: self.forcing,
            coupling,
            time_ratio: self.time_ratio,
            amplitude_ratio: self.amplitude_ratio,
            dt: self.dt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidInput(msg.to_string()));
        if self.slow.is_empty() || self.phi_grid.is_empty() || self.mu_grid.is_empty() {
            return bad("slow, phi_grid and mu_grid must be nonempty");
        }
        for &i in &self.slow {
            self.system_params(i).validate()?;
            self.model_params(i).validate()?;
        }
        if self.n_hyperspheres == 0 || self.members < 2 {
            return bad("need at least one hypersphere and two members");
        }
        if !(self.spacing_days > 0.0 && self.horizon_days > 0.0) {
            return bad("durations must be positive");
        }
        if !(self.climatology.spinup_days >= 0.0 && self.climatology.sample_days > 0.0) || self.climatology.snapshot_stride == 0 {
            return bad("climatology durations must be positive");
        }
        if self.phi_grid.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return bad("phi values must be finite and non-negative");
        }
        if self.mu_grid.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("mu values must lie in [0, 1]");
        }
        if !(self.sigma_fraction > 0.0) || !(self.variance_fraction > 0.0 && self.variance_fraction <= 1.0) {
            return bad("sigma_fraction must be positive and variance_fraction in (0, 1]");
        }
        if self.forecast_cadence == 0 || self.stalk_cadence == 0 || self.series_stride == 0 {
            return bad("cadences and series stride must be at least 1");
        }
        if self.stalk_candidates == 0 {
            return bad("stalk_candidates must be positive");
        }
        for &i in &self.slow {
            if self.analogs < i + 1 {
                return bad("analog count must exceed the slow dimension");
            }
        }
        Ok(())
    }

    pub fn cadence(&self, mode: SweepMode) -> usize {
        match mode {
            SweepMode::Forecast => self.forecast_cadence,
            SweepMode::Stalk => self.stalk_cadence,
        }
    }

    /// Climatology for `slow`, read from or written to `cache_dir` when set.
    pub fn climatology_for(&self, slow: usize) -> Result<Climatology> {
        let params = self.system_params(slow);
        let seed = derive_seed(self.master_seed, &[slow as u64, TAG_CLIMATOLOGY]);
        match &self.cache_dir {
            Some(dir) => Climatology::load_or_compute(dir, &params, &self.climatology, seed).map(|(c, _)| c),
            None => compute_climatology(&params, &self.climatology, seed),
        }
    }

    /// Grid cells of a sweep; untargeted sweeps ignore `mu_grid`.
    pub fn cells(&self, targeted: bool) -> Vec<Cell> {
        let mut out = Vec::new();
        for &phi in &self.phi_grid {
            if targeted {
                out.extend(self.mu_grid.iter().map(|&mu| Cell { phi, mu: Some(mu) }));
            } else {
                out.push(Cell { phi, mu: None });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub phi: f64,
    pub mu: Option<f64>,
}

/// One hypersphere evaluated in one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypersphereRecord {
    pub slow: usize,
    pub fast: usize,
    pub index: usize,
    /// Seed of the initial ensemble, shared by the baseline and every cell.
    pub seed: u64,
    pub phi: f64,
    pub mu: Option<f64>,
    pub useful_baseline: Option<f64>,
    pub useful_inflated: Option<f64>,
    pub category: Option<Outcome>,
    /// Stalk sweeps only: shadowing time of the inflated run in days.
    pub shadow_time: Option<f64>,
    pub proposed: usize,
    pub applied: usize,
    /// Set when the hypersphere was quarantined.
    pub reason: Option<String>,
}

/// Counts for one (slow, phi, mu) cell, with the nested categories split out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TallyRow {
    pub mode: SweepMode,
    pub targeted: bool,
    pub slow: usize,
    pub fast: usize,
    pub phi: f64,
    pub mu: Option<f64>,
    pub succeeded: usize,
    pub helped_only: usize,
    pub indistinguishable: usize,
    pub hurt_only: usize,
    pub failed: usize,
    pub helped: usize,
    pub hurt: usize,
    pub quarantined: usize,
    pub avg_useful_days: f64,
    /// Contracting directions offered to the gate.
    pub proposed: usize,
    /// Inflations actually applied.
    pub applied: usize,
}

impl TallyRow {
    pub fn from_tally(mode: SweepMode, targeted: bool, t: &OutcomeTally, mu: Option<f64>, proposed: usize, applied: usize) -> Self {
        Self {
            mode,
            targeted,
            slow: t.slow,
            fast: t.fast,
            phi: t.phi,
            mu,
            succeeded: t.succeeded,
            helped_only: t.helped_only(),
            indistinguishable: t.indistinguishable,
            hurt_only: t.hurt_only(),
            failed: t.failed,
            helped: t.helped,
            hurt: t.hurt,
            quarantined: t.quarantined,
            avg_useful_days: t.avg_useful_days,
            proposed,
            applied,
        }
    }

    /// Fraction of proposed inflations the gate rejected.
    pub fn suppression(&self) -> f64 {
        if self.proposed == 0 {
            return 0.0;
        }
        1.0 - self.applied as f64 / self.proposed as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    All,
    Succeeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Baseline,
    Inflated,
}

/// Averaged RMSE/AC at one time for one cell and subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub slow: usize,
    pub phi: f64,
    pub mu: Option<f64>,
    pub subset: Subset,
    pub run: RunKind,
    pub time_days: f64,
    pub rmse: Option<f64>,
    pub ac: Option<f64>,
    /// Runs still active at this time.
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub mode: SweepMode,
    pub targeted: bool,
    pub config: ExperimentConfig,
    pub records: Vec<HypersphereRecord>,
    pub tallies: Vec<TallyRow>,
    pub series: Vec<SeriesRow>,
}

impl SweepResult {
    pub fn tally(&self, slow: usize, phi: f64, mu: Option<f64>) -> Option<&TallyRow> {
        self.tallies.iter().find(|t| t.slow == slow && t.phi == phi && t.mu == mu)
    }
}

/// Summary of one integration: the compared time plus subsampled series.
#[derive(Debug, Clone)]
struct RunSummary {
    metric: f64,
    shadow: Option<f64>,
    proposed: usize,
    applied: usize,
    rmse: Vec<f64>,
    ac: Vec<f64>,
}

#[derive(Debug)]
struct HypersphereRun {
    seed: u64,
    baseline: std::result::Result<RunSummary, String>,
    cells: Vec<std::result::Result<RunSummary, String>>,
}

/// Short, stable reason code for a quarantined hypersphere.
pub fn reason_code(e: &Error) -> String {
    let code = match e {
        Error::InvalidInput(_) => "invalid-input",
        Error::Divergence { .. } | Error::MemberDivergence { .. } => "divergence",
        Error::ForecastDiverged { .. } | Error::StalkDiverged { .. } => "member-divergence",
        Error::DegenerateEllipsoid { .. } => "degenerate-ellipsoid",
        Error::NotPositiveDefinite { .. } => "not-positive-definite",
        Error::NeighborDeficit { .. } => "neighbor-deficit",
        Error::UndefinedCorrelation => "undefined-correlation",
        Error::AnalogDivergence { .. } => "analog-divergence",
        _ => "io",
    };
    code.to_string()
}

struct Job<'a> {
    cfg: &'a ExperimentConfig,
    mode: SweepMode,
    targeted: bool,
    slow: usize,
    sys: ModelParams,
    model: ModelParams,
    clim: &'a Climatology,
    sigma: Vec<f64>,
    cells: &'a [Cell],
}

impl Job<'_> {
    fn n_steps(&self) -> usize {
        self.model.steps_for_days(self.cfg.horizon_days)
    }

    fn ensemble(&self, truth: &State, seed: u64) -> Result<Ensemble> {
        let mut rng = stream(seed, &[]);
        match self.cfg.init_mode {
            InitMode::Structured => create_structured_ensemble(self.clim, truth, self.cfg.members, &mut rng).map(|(e, _)| e),
            InitMode::Montecarlo => create_montecarlo_ensemble(self.clim, truth, self.cfg.members, &mut rng),
        }
    }

    fn summarize(&self, metric: f64, shadow: Option<f64>, rmse: &[f64], ac: &[f64], events: (usize, usize)) -> RunSummary {
        let stride = self.cfg.series_stride;
        RunSummary {
            metric,
            shadow,
            proposed: events.0,
            applied: events.1,
            rmse: rmse.iter().step_by(stride).copied().collect(),
            ac: ac.iter().step_by(stride).copied().collect(),
        }
    }

    fn run_one(
        &self,
        ens: &Ensemble,
        truth: &crate::model::SlowTrajectory,
        phi: f64,
        gate: &mut dyn InflationGate,
        stalk_seed: u64,
    ) -> Result<RunSummary> {
        match self.mode {
            SweepMode::Forecast => {
                let opts = ForecastOptions { cadence: self.cfg.forecast_cadence, horizon_days: self.cfg.horizon_days, store_members: false };
                let r = match run_forecast(&self.model, truth, ens, &self.clim.mean, phi, gate, &opts) {
                    Ok(r) => r,
                    // the useful time is settled once AC has crossed the threshold
                    Err(Error::ForecastDiverged { partial, .. }) if first_crossing(&partial.ac, AC_THRESHOLD).is_some() => *partial,
                    Err(e) => return Err(e),
                };
                let ev = (r.inflation_events.len(), r.applied_inflations());
                Ok(self.summarize(r.useful_time(AC_THRESHOLD), None, &r.rmse, &r.ac, ev))
            }
            SweepMode::Stalk => {
                let opts = StalkOptions {
                    cadence: self.cfg.stalk_cadence,
                    horizon_days: self.cfg.horizon_days,
                    candidates: self.cfg.stalk_candidates,
                };
                let r = run_stalk(&self.model, truth, ens, &self.clim.mean, &self.sigma, phi, gate, &opts, stalk_seed)?;
                let ev = (r.inflation_events.len(), r.applied_inflations());
                Ok(self.summarize(r.shadow_time_days, Some(r.shadow_time_days), &r.rmse, &r.ac, ev))
            }
        }
    }

    fn run(&self, h: usize, truth0: &State) -> HypersphereRun {
        let master = self.cfg.master_seed;
        let seed = derive_seed(master, &[self.slow as u64, TAG_ENSEMBLE, h as u64]);
        let stalk_seed = derive_seed(master, &[self.slow as u64, TAG_STALK, h as u64]);
        let cloud_seed = derive_seed(master, &[self.slow as u64, TAG_CLOUD, h as u64]);
        let quarantine_all = |reason: String| HypersphereRun {
            seed,
            baseline: Err(reason.clone()),
            cells: vec![Err(reason); self.cells.len()],
        };
        let truth = match slow_trajectory(&self.sys, truth0, self.n_steps()) {
            Ok(t) => t,
            Err(e) => return quarantine_all(reason_code(&e)),
        };
        let ens = match self.ensemble(truth0, seed) {
            Ok(e) => e,
            Err(e) => return quarantine_all(reason_code(&e)),
        };
        let baseline = self.run_one(&ens, &truth, 0.0, &mut NeverInflate, stalk_seed).map_err(|e| reason_code(&e));
        // inflation never moves the control, so every cell sees the same clouds
        let mut cache = CloudCache::new();
        let cells = self
            .cells
            .iter()
            .map(|cell| {
                let out = match cell.mu {
                    Some(mu) => {
                        let tc = TargetedConfig {
                            mu,
                            analogs: self.cfg.analogs,
                            lookback: self.cfg.analog_lookback,
                            variance_fraction: self.cfg.variance_fraction,
                            cache_alternate: self.cfg.cache_alternate,
                        };
                        let mut gate = TargetedGate::new(self.model, self.sigma.clone(), tc, cloud_seed, &mut cache);
                        self.run_one(&ens, &truth, cell.phi, &mut gate, stalk_seed)
                    }
                    None => self.run_one(&ens, &truth, cell.phi, &mut AlwaysInflate, stalk_seed),
                };
                out.map_err(|e| reason_code(&e))
            })
            .collect();
        HypersphereRun { seed, baseline, cells }
    }
}

#[cfg(feature = "parallel")]
fn map_jobs<T: Send>(n: usize, jobs: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
}

#[cfg(not(feature = "parallel"))]
fn map_jobs<T: Send>(n: usize, _jobs: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    Ok((0..n).map(f).collect())
}

/// Runs the baseline and every grid cell on each hypersphere, for each slow
/// dimension in the config, and aggregates tallies and averaged series.
///
/// `jobs` sets the worker count (0 picks one per core) and never changes results.
pub fn run_sweep(cfg: &ExperimentConfig, mode: SweepMode, targeted: bool, jobs: usize) -> Result<SweepResult> {
    cfg.validate()?;
    let cells = cfg.cells(targeted);
    let mut result = SweepResult { mode, targeted, config: cfg.clone(), records: Vec::new(), tallies: Vec::new(), series: Vec::new() };
    for &slow in &cfg.slow {
        let clim = cfg.climatology_for(slow)?;
        let truths = draw_initial_truths(&clim, cfg.n_hyperspheres, cfg.spacing_days)?;
        let job = Job {
            cfg,
            mode,
            targeted,
            slow,
            sys: cfg.system_params(slow),
            model: cfg.model_params(slow),
            clim: &clim,
            sigma: clim.sigma(cfg.sigma_fraction),
            cells: &cells,
        };
        let runs = map_jobs(truths.len(), jobs, |h| job.run(h, &truths[h]))?;
        aggregate(&job, &runs, &mut result);
    }
    Ok(result)
}

fn aggregate(job: &Job<'_>, runs: &[HypersphereRun], out: &mut SweepResult) {
    let cfg = job.cfg;
    let baselines: Vec<f64> = runs.iter().filter_map(|r| r.baseline.as_ref().ok().map(|b| b.metric)).collect();
    let avg = if baselines.is_empty() { 0.0 } else { baselines.iter().sum::<f64>() / baselines.len() as f64 };
    let resolution = job.model.step_days() * if job.mode == SweepMode::Stalk { cfg.stalk_cadence as f64 } else { 1.0 };
    let sample_days = job.model.step_days() * cfg.series_stride as f64;

    for (c, cell) in job.cells.iter().enumerate() {
        let mut tally = OutcomeTally::new(job.slow, cfg.fast, cell.phi, cell.mu.unwrap_or(0.0), avg);
        let (mut proposed, mut applied) = (0, 0);
        let mut all = SeriesAccumulator::default();
        let mut succeeded = SeriesAccumulator::default();
        for (h, run) in runs.iter().enumerate() {
            let mut rec = HypersphereRecord {
                slow: job.slow,
                fast: cfg.fast,
                index: h,
                seed: run.seed,
                phi: cell.phi,
                mu: cell.mu,
                useful_baseline: None,
                useful_inflated: None,
                category: None,
                shadow_time: None,
                proposed: 0,
                applied: 0,
                reason: None,
            };
            match (&run.baseline, &run.cells[c]) {
                (Ok(b), Ok(i)) => {
                    let outcome = classify_outcome(i.metric, b.metric, avg, resolution);
                    tally.record(outcome);
                    proposed += i.proposed;
                    applied += i.applied;
                    rec.useful_baseline = Some(b.metric);
                    rec.useful_inflated = Some(i.metric);
                    rec.category = Some(outcome);
                    rec.shadow_time = i.shadow;
                    rec.proposed = i.proposed;
                    rec.applied = i.applied;
                    all.add(b, i);
                    if outcome == Outcome::Succeeded {
                        succeeded.add(b, i);
                    }
                }
                (b, i) => {
                    tally.quarantined += 1;
                    rec.useful_baseline = b.as_ref().ok().map(|s| s.metric);
                    rec.useful_inflated = i.as_ref().ok().map(|s| s.metric);
                    rec.reason = Some(b.as_ref().err().or(i.as_ref().err()).cloned().unwrap_or_default());
                }
            }
            out.records.push(rec);
        }
        out.tallies.push(TallyRow::from_tally(job.mode, job.targeted, &tally, cell.mu, proposed, applied));
        for (subset, acc) in [(Subset::All, &all), (Subset::Succeeded, &succeeded)] {
            acc.emit(job.slow, cell, subset, sample_days, &mut out.series);
        }
    }
}

#[derive(Default)]
struct SeriesAccumulator {
    // per run kind: sums of rmse, ac and counts
    sums: [(Vec<f64>, Vec<f64>, Vec<usize>); 2],
}

impl SeriesAccumulator {
    fn add(&mut self, baseline: &RunSummary, inflated: &RunSummary) {
        for (slot, run) in self.sums.iter_mut().zip([baseline, inflated]) {
            let n = run.rmse.len();
            if slot.0.len() < n {
                slot.0.resize(n, 0.0);
                slot.1.resize(n, 0.0);
                slot.2.resize(n, 0);
            }
            for k in 0..n {
                if run.rmse[k].is_finite() && run.ac[k].is_finite() {
                    slot.0[k] += run.rmse[k];
                    slot.1[k] += run.ac[k];
                    slot.2[k] += 1;
                }
            }
        }
    }

    fn emit(&self, slow: usize, cell: &Cell, subset: Subset, sample_days: f64, out: &mut Vec<SeriesRow>) {
        for (kind, (r, a, n)) in [RunKind::Baseline, RunKind::Inflated].into_iter().zip(&self.sums) {
            for k in 0..r.len() {
                let mean = |s: f64| (n[k] > 0).then(|| s / n[k] as f64);
                out.push(SeriesRow {
                    slow,
                    phi: cell.phi,
                    mu: cell.mu,
                    subset,
                    run: kind,
                    time_days: k as f64 * sample_days,
                    rmse: mean(r[k]),
                    ac: mean(a[k]),
                    count: n[k],
                });
            }
        }
    }
}
