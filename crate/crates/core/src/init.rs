//! Attractor climatology, initial truths and ensemble construction.
//!
//! Structured ensembles follow the hypersphere recipe: the covariance of 100
//! attractor neighbours of the truth is rescaled so the average eigenvalue
//! equals `(0.05 * scale)^2`, the control is drawn about the truth and every
//! other member about the control. Fast variables are copied from the truth.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{covariance_sqrt, draw_with_factor, sample_covariance, Ensemble};
use crate::model::{ModelParams, Rk4, State};
use crate::rng::{stream, StreamRng};

/// Ensemble standard deviation as a fraction of the climatological span.
pub const SPREAD_FRACTION: f64 = 0.05;
/// Neighbour box half-width as a fraction of the per-dimension span.
pub const NEIGHBOR_FRACTION: f64 = 0.05;
pub const NEIGHBOR_COUNT: usize = 100;
const WIDEN_FACTOR: f64 = 1.25;
const MAX_WIDENINGS: usize = 40;

pub const CACHE_FORMAT: &str = "l96-climatology";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClimatologyConfig {
    pub spinup_days: f64,
    pub sample_days: f64,
    /// Integration steps between stored snapshots.
    pub snapshot_stride: usize,
}

impl Default for ClimatologyConfig {
    fn default() -> Self {
        Self { spinup_days: 100.0, sample_days: 1000.0, snapshot_stride: 10 }
    }
}

/// Long-run statistics of the system attractor over the slow variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    pub params: ModelParams,
    pub seed: u64,
    pub config: ClimatologyConfig,
    /// Per-variable climatological mean.
    pub mean: Vec<f64>,
    /// Per-variable max - min.
    pub span: Vec<f64>,
    /// Per-variable standard deviation.
    pub std: Vec<f64>,
    /// Standard deviation of the slow variables pooled over all sites.
    pub tau: f64,
    /// Slow-variable snapshots, row-major, one row per stored step.
    pub snapshots: Vec<f64>,
    /// Last state of the sampling run; initial truths continue from here.
    pub end_state: State,
}

impl Climatology {
    pub fn slow(&self) -> usize {
        self.params.slow
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len() / self.params.slow
    }

    pub fn snapshot(&self, k: usize) -> &[f64] {
        let n = self.params.slow;
        &self.snapshots[k * n..(k + 1) * n]
    }

    /// Mean per-dimension span: the length scale behind ensemble spread and sigma.
    pub fn spread_scale(&self) -> f64 {
        self.span.iter().sum::<f64>() / self.span.len() as f64
    }

    /// Per-dimension radius `fraction * span_i`.
    pub fn sigma(&self, fraction: f64) -> Vec<f64> {
        self.span.iter().map(|s| fraction * s).collect()
    }

    pub fn snapshot_digest(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.snapshots {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Builds statistics from a slow-variable series (rows of equal length).
    pub fn statistics(rows: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>, Vec<f64>, f64) {
        let n = rows[0].len();
        let k = rows.len() as f64;
        let mut mean = vec![0.0; n];
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for r in rows {
            for i in 0..n {
                mean[i] += r[i];
                lo[i] = lo[i].min(r[i]);
                hi[i] = hi[i].max(r[i]);
            }
        }
        mean.iter_mut().for_each(|m| *m /= k);
        let mut var = vec![0.0; n];
        for r in rows {
            for i in 0..n {
                var[i] += (r[i] - mean[i]).powi(2);
            }
        }
        let std: Vec<f64> = var.iter().map(|v| (v / k).sqrt()).collect();
        let grand = mean.iter().sum::<f64>() / n as f64;
        let pooled = rows.iter().flat_map(|r| r.iter()).map(|v| (v - grand).powi(2)).sum::<f64>() / (k * n as f64);
        let span = hi.iter().zip(&lo).map(|(h, l)| h - l).collect();
        (mean, span, std, pooled.sqrt())
    }

    /// Cache file name keyed by the system constants, seed and run lengths.
    pub fn cache_file_name(params: &ModelParams, config: &ClimatologyConfig, seed: u64) -> String {
        let key = serde_json::json!({ "params": params, "config": config, "seed": seed }).to_string();
        let digest: String = Sha256::digest(key.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect();
        format!("climatology-I{}-J{}-seed{}-{}.json", params.slow, params.fast, seed, digest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CacheFile {
            format: CACHE_FORMAT.to_string(),
            version: CACHE_VERSION,
            snapshot_count: self.snapshot_count(),
            snapshot_digest: self.snapshot_digest(),
            climatology: self.clone(),
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: CacheFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.format != CACHE_FORMAT || file.version != CACHE_VERSION {
            return Err(Error::Cache(format!("unsupported format {} v{}", file.format, file.version)));
        }
        let clim = file.climatology;
        if clim.snapshot_count() != file.snapshot_count || clim.snapshot_digest() != file.snapshot_digest {
            return Err(Error::Cache(format!("snapshot digest mismatch in {}", path.display())));
        }
        Ok(clim)
    }

    /// Loads the cached climatology from `dir`, computing and storing it if absent.
    pub fn load_or_compute(dir: &Path, params: &ModelParams, config: &ClimatologyConfig, seed: u64) -> Result<(Self, PathBuf)> {
        let path = dir.join(Self::cache_file_name(params, config, seed));
        if path.exists() {
            if let Ok(c) = Self::load(&path) {
                if c.params == *params && c.config == *config && c.seed == seed {
                    return Ok((c, path));
                }
            }
        }
        let clim = compute_climatology(params, config, seed)?;
        clim.save(&path)?;
        Ok((clim, path))
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFile {
    format: String,
    version: u32,
    snapshot_count: usize,
    snapshot_digest: String,
    climatology: Climatology,
}

/// Random starting point near the attractor: x around F, small fast noise.
pub fn random_state(params: &ModelParams, rng: &mut StreamRng) -> State {
    let x: Vec<f64> = (0..params.slow).map(|_| params.forcing * rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..params.fast_len()).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    State::new(&x, &y, 0.0).expect("dimensions follow params")
}

/// Attempts at a random start before giving up on a spin-up that keeps diverging.
pub const SPINUP_ATTEMPTS: usize = 8;

/// Random state integrated for `spin` steps. A start whose transient blows up
/// is redrawn from the same stream, up to [`SPINUP_ATTEMPTS`] times.
pub fn spun_up_state(params: &ModelParams, spin: usize, rng: &mut StreamRng) -> Result<State> {
    let mut rk = Rk4::new(*params)?;
    let mut last = None;
    for _ in 0..SPINUP_ATTEMPTS {
        let mut state = random_state(params, rng);
        match rk.advance_n(&mut state, spin) {
            Ok(()) => return Ok(state),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// Integrates the system from a random state, discards spin-up and samples the attractor.
pub fn compute_climatology(params: &ModelParams, config: &ClimatologyConfig, seed: u64) -> Result<Climatology> {
    params.validate()?;
    let spin = params.steps_for_days(config.spinup_days);
    let steps = params.steps_for_days(config.sample_days);
    if steps < 10_000 {
        return Err(Error::InvalidInput(format!(
            "sample window of {} days gives {steps} steps, at least 10000 needed",
            config.sample_days
        )));
    }
    if config.snapshot_stride == 0 {
        return Err(Error::InvalidInput("snapshot stride must be at least 1".into()));
    }
    let mut rng = stream(seed, &[0xc1]);
    let mut state = spun_up_state(params, spin, &mut rng)?;
    let mut rk = Rk4::new(*params)?;

    let mut rows = Vec::with_capacity(steps);
    let mut snapshots = Vec::with_capacity(steps / config.snapshot_stride * params.slow);
    for k in 1..=steps {
        if !rk.advance(&mut state) {
            return Err(Error::Divergence { step: spin + k, time: state.t });
        }
        rows.push(state.x().to_vec());
        if k % config.snapshot_stride == 0 {
            snapshots.extend_from_slice(state.x());
        }
    }
    let (mean, span, std, tau) = Climatology::statistics(&rows);
    if span.iter().any(|s| *s <= 0.0) || tau <= 0.0 {
        return Err(Error::InvalidInput("attractor sample has zero span; is the system at a fixed point?".into()));
    }
    state.t = 0.0;
    Ok(Climatology { params: *params, seed, config: *config, mean, span, std, tau, snapshots, end_state: state })
}

/// `count` system states spaced `spacing_days` apart along one trajectory that
/// continues from the end of the climatology run.
pub fn draw_initial_truths(clim: &Climatology, count: usize, spacing_days: f64) -> Result<Vec<State>> {
    let spacing = clim.params.steps_for_days(spacing_days);
    if spacing == 0 {
        return Err(Error::InvalidInput("truth spacing must be at least one step".into()));
    }
    let mut rk = Rk4::new(clim.params)?;
    let mut state = clim.end_state.clone();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        rk.advance_n(&mut state, spacing)?;
        let mut s = state.clone();
        s.t = 0.0;
        out.push(s);
    }
    Ok(out)
}

/// Attractor neighbourhood of one initial truth and its scaled covariance.
#[derive(Debug, Clone)]
pub struct Hypersphere {
    pub center: State,
    pub neighbors: Vec<Vec<f64>>,
    /// Multiplier applied to the 5%-of-span box to collect enough neighbours (1 = none).
    pub widening: f64,
    pub c_init: DMatrix<f64>,
}

impl Hypersphere {
    /// Collects the nearest `NEIGHBOR_COUNT` snapshots inside the (possibly widened) box.
    pub fn build(clim: &Climatology, truth: &State) -> Result<Self> {
        let n = clim.slow();
        truth.check_dims(&clim.params)?;
        let available = clim.snapshot_count();
        if available < NEIGHBOR_COUNT {
            return Err(Error::NeighborDeficit { found: available, required: NEIGHBOR_COUNT });
        }
        let c = truth.x();
        // scaled Chebyshev distance: <= 1 means inside the unwidened box
        let mut dist: Vec<(f64, usize)> = (0..available)
            .map(|k| {
                let s = clim.snapshot(k);
                let d = (0..n).map(|i| (s[i] - c[i]).abs() / (NEIGHBOR_FRACTION * clim.span[i])).fold(0.0, f64::max);
                (d, k)
            })
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let needed = dist[NEIGHBOR_COUNT - 1].0;
        let mut widening = 1.0;
        let mut tries = 0;
        while needed > widening {
            widening *= WIDEN_FACTOR;
            tries += 1;
            if tries > MAX_WIDENINGS {
                let found = dist.iter().take_while(|d| d.0 <= widening).count();
                return Err(Error::NeighborDeficit { found, required: NEIGHBOR_COUNT });
            }
        }
        let neighbors: Vec<Vec<f64>> = dist[..NEIGHBOR_COUNT].iter().map(|&(_, k)| clim.snapshot(k).to_vec()).collect();
        let c_raw = sample_covariance(&neighbors);
        let c_init = scale_covariance(&c_raw, SPREAD_FRACTION * clim.spread_scale())?;
        Ok(Self { center: truth.clone(), neighbors, widening, c_init })
    }

    /// True if every neighbour lies within the (widened) per-dimension box.
    pub fn neighbors_in_box(&self, clim: &Climatology) -> bool {
        let c = self.center.x();
        self.neighbors.iter().all(|s| {
            s.iter().zip(c).zip(&clim.span).all(|((v, m), sp)| (v - m).abs() <= NEIGHBOR_FRACTION * sp * self.widening * (1.0 + 1e-12))
        })
    }
}

/// Rescales `c` so that its average eigenvalue equals `target_std^2`.
pub fn scale_covariance(c: &DMatrix<f64>, target_std: f64) -> Result<DMatrix<f64>> {
    let lambda = c.trace() / c.nrows() as f64;
    if !(lambda > 0.0) {
        return Err(Error::InvalidInput("neighbour covariance has zero trace".into()));
    }
    Ok(c * (target_std * target_std / lambda))
}

fn assemble(truth: &State, slow_vectors: Vec<Vec<f64>>) -> Result<Ensemble> {
    let members = slow_vectors
        .into_iter()
        .map(|x| State::new(&x, truth.y(), truth.t))
        .collect::<Result<Vec<_>>>()?;
    Ensemble::new(members, 0)
}

/// Ensemble drawn from the rescaled neighbour covariance; member 0 is the control.
pub fn create_structured_ensemble(clim: &Climatology, truth: &State, m: usize, rng: &mut StreamRng) -> Result<(Ensemble, Hypersphere)> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("ensemble size must be at least 2, got {m}")));
    }
    let sphere = Hypersphere::build(clim, truth)?;
    let l = covariance_sqrt(&sphere.c_init)?;
    let control = draw_with_factor(truth.x(), &l, rng);
    let mut xs = Vec::with_capacity(m);
    xs.push(control.clone());
    for _ in 1..m {
        xs.push(draw_with_factor(&control, &l, rng));
    }
    Ok((assemble(truth, xs)?, sphere))
}

/// Isotropic Gaussian ensemble with per-dimension deviation `0.05 * scale`.
pub fn create_montecarlo_ensemble(clim: &Climatology, truth: &State, m: usize, rng: &mut StreamRng) -> Result<Ensemble> {
    if m < 2 {
        return Err(Error::InvalidInput(format!("ensemble size must be at least 2, got {m}")));
    }
    truth.check_dims(&clim.params)?;
    let sd = SPREAD_FRACTION * clim.spread_scale();
    let mut jitter = |c: &[f64]| -> Vec<f64> { c.iter().map(|v| v + sd * rng.sample::<f64, _>(StandardNormal)).collect() };
    let control = jitter(truth.x());
    let mut xs = vec![control.clone()];
    for _ in 1..m {
        xs.push(jitter(&control));
    }
    assemble(truth, xs)
}
