//! Targeted inflation: a proposed direction is inflated only if it lines up
//! with the local attractor shape, estimated from a cloud of analogs started
//! around the forecast's own control state 50 steps earlier.

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::forecast::{GateContext, InflationGate};
use crate::geometry::sample_covariance;
use crate::model::{ModelParams, Rk4, State};
use crate::rng::{derive_seed, stream};

pub const DEFAULT_ANALOGS: usize = 1000;
pub const DEFAULT_LOOKBACK: usize = 50;
/// Share of the cloud variance whose eigenvectors the gate compares against; 1 uses all of them.
pub const DEFAULT_VARIANCE_FRACTION: f64 = 1.0;

/// Propagated analog ensemble and the eigen-structure of its slow covariance.
#[derive(Debug, Clone)]
pub struct AnalogCloud {
    pub origin: State,
    pub steps: usize,
    /// Slow variables of the surviving analogs after propagation.
    pub propagated: Vec<Vec<f64>>,
    pub diverged: usize,
    pub covariance: DMatrix<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal, `eigenvectors[k]` pairs with `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
    pub degenerate: bool,
}

impl AnalogCloud {
    /// Number of leading eigenvectors needed to reach `fraction` of the total variance.
    pub fn leading_count(&self, fraction: f64) -> usize {
        let total: f64 = self.eigenvalues.iter().map(|v| v.max(0.0)).sum();
        if total <= 0.0 {
            return 0;
        }
        let mut acc = 0.0;
        for (k, v) in self.eigenvalues.iter().enumerate() {
            acc += v.max(0.0);
            if acc >= fraction * total * (1.0 - 1e-12) {
                return k + 1;
            }
        }
        self.eigenvalues.len()
    }

    /// Largest |e_k . u| over the leading eigenvectors.
    pub fn max_projection(&self, direction: &[f64], fraction: f64) -> f64 {
        self.eigenvectors[..self.leading_count(fraction)]
            .iter()
            .map(|e| e.iter().zip(direction).map(|(a, b)| a * b).sum::<f64>().abs())
            .fold(0.0, f64::max)
    }
}

fn eigen_descending(cov: &DMatrix<f64>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(cov.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let vals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = order.iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect();
    (vals, vecs)
}

/// Perturbs the origin's slow variables with uniform noise in `[-sigma_i, sigma_i]`,
/// integrates every analog `steps` steps with `model` and analyses the spread.
///
/// Diverging analogs are dropped; more than 10% diverging is an error.
pub fn build_analog_cloud(
    model: &ModelParams,
    origin: &State,
    sigma: &[f64],
    count: usize,
    steps: usize,
    seed: u64,
) -> Result<AnalogCloud> {
    origin.check_dims(model)?;
    if sigma.len() != model.slow || sigma.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidInput("sigma must have one non-negative entry per slow variable".into()));
    }
    if count < model.slow + 1 {
        return Err(Error::InvalidInput(format!("need at least {} analogs, got {count}", model.slow + 1)));
    }
    let mut rng = stream(seed, &[0xa7]);
    let starts: Vec<State> = (0..count)
        .map(|_| {
            let mut s = origin.clone();
            for (v, sd) in s.x_mut().iter_mut().zip(sigma) {
                *v += sd * rng.random_range(-1.0..=1.0);
            }
            s
        })
        .collect();

    let propagate = |mut s: State| -> Option<Vec<f64>> {
        let mut rk = Rk4::new(*model).ok()?;
        rk.advance_n(&mut s, steps).ok()?;
        Some(s.x().to_vec())
    };
    #[cfg(feature = "parallel")]
    let results: Vec<Option<Vec<f64>>> = {
        use rayon::prelude::*;
        starts.into_par_iter().map(propagate).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Option<Vec<f64>>> = starts.into_iter().map(propagate).collect();

    let diverged = results.iter().filter(|r| r.is_none()).count();
    if diverged * 10 > count {
        return Err(Error::AnalogDivergence { diverged, total: count });
    }
    let propagated: Vec<Vec<f64>> = results.into_iter().flatten().collect();
    let covariance = sample_covariance(&propagated);
    let (eigenvalues, eigenvectors) = eigen_descending(&covariance);
    let degenerate = !(covariance.trace() > 0.0);
    Ok(AnalogCloud { origin: origin.clone(), steps, propagated, diverged, covariance, eigenvalues, eigenvectors, degenerate })
}

/// True iff the proposed direction projects by more than `mu` onto one of the
/// leading eigenvectors (those holding `variance_fraction` of the variance).
/// A degenerate cloud never passes.
pub fn inflation_gate(cloud: &AnalogCloud, proposed: &[f64], mu: f64, variance_fraction: f64) -> Result<bool> {
    let norm = proposed.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 || proposed.len() != cloud.covariance.nrows() {
        return Err(Error::InvalidInput(format!("proposed direction must be a unit {}-vector", cloud.covariance.nrows())));
    }
    if cloud.degenerate {
        return Ok(false);
    }
    Ok(cloud.max_projection(proposed, variance_fraction) > mu)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetedConfig {
    pub mu: f64,
    pub analogs: usize,
    pub lookback: usize,
    pub variance_fraction: f64,
    /// Reuse the previous analysis step's cloud every other analysis.
    pub cache_alternate: bool,
}

impl Default for TargetedConfig {
    fn default() -> Self {
        Self {
            mu: 0.9,
            analogs: DEFAULT_ANALOGS,
            lookback: DEFAULT_LOOKBACK,
            variance_fraction: DEFAULT_VARIANCE_FRACTION,
            cache_alternate: false,
        }
    }
}

/// Clouds keyed by analysis step. A hit requires the same origin state, so one
/// cache can be shared by every run whose control trajectory is identical.
#[derive(Debug, Default)]
pub struct CloudCache {
    clouds: HashMap<usize, Arc<AnalogCloud>>,
    pub hits: usize,
    pub builds: usize,
}

impl CloudCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(
        &mut self,
        step: usize,
        origin: &State,
        build: impl FnOnce() -> Result<AnalogCloud>,
    ) -> Result<Arc<AnalogCloud>> {
        if let Some(c) = self.clouds.get(&step) {
            if c.origin.as_slice() == origin.as_slice() {
                self.hits += 1;
                return Ok(c.clone());
            }
        }
        let cloud = Arc::new(build()?);
        self.builds += 1;
        self.clouds.insert(step, cloud.clone());
        Ok(cloud)
    }
}

/// Gate backed by analog clouds built from the forecast's control history.
pub struct TargetedGate<'a> {
    model: ModelParams,
    sigma: Vec<f64>,
    config: TargetedConfig,
    seed: u64,
    cache: &'a mut CloudCache,
    last: Option<(usize, Arc<AnalogCloud>, bool)>,
    pub proposed: usize,
    pub allowed: usize,
}

impl<'a> TargetedGate<'a> {
    pub fn new(model: ModelParams, sigma: Vec<f64>, config: TargetedConfig, seed: u64, cache: &'a mut CloudCache) -> Self {
        Self { model, sigma, config, seed, cache, last: None, proposed: 0, allowed: 0 }
    }

    fn cloud_for(&mut self, ctx: &GateContext<'_>) -> Result<Arc<AnalogCloud>> {
        if let Some((step, c, fresh)) = &self.last {
            if *step == ctx.step {
                return Ok(c.clone());
            }
            if self.config.cache_alternate && *fresh {
                let c = c.clone();
                self.last = Some((ctx.step, c.clone(), false));
                return Ok(c);
            }
        }
        let (origin, age) = ctx.control_lookback(self.config.lookback);
        let origin = origin.clone();
        let (model, sigma, n) = (self.model, self.sigma.clone(), self.config.analogs);
        let seed = derive_seed(self.seed, &[ctx.step as u64]);
        let cloud = self
            .cache
            .get_or_build(ctx.step, &origin, || {
                // the gate only needs the eigen-structure
                build_analog_cloud(&model, &origin, &sigma, n, age, seed).map(|mut c| {
                    c.propagated = Vec::new();
                    c
                })
            })?;
        self.last = Some((ctx.step, cloud.clone(), true));
        Ok(cloud)
    }
}

impl InflationGate for TargetedGate<'_> {
    fn allow(&mut self, ctx: &GateContext<'_>) -> Result<bool> {
        self.proposed += 1;
        let cloud = self.cloud_for(ctx)?;
        let ok = inflation_gate(&cloud, ctx.direction, self.config.mu, self.config.variance_fraction)?;
        self.allowed += ok as usize;
        Ok(ok)
    }

    fn lookback(&self) -> usize {
        self.config.lookback
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn origin(p: &ModelParams) -> State {
        let x: Vec<f64> = (0..p.slow).map(|i| 3.0 + i as f64).collect();
        State::new(&x, &vec![0.1; p.fast_len()], 0.0).unwrap()
    }

    #[test]
    fn zero_sigma_is_degenerate() {
        let p = ModelParams::model(5, 2);
        let c = build_analog_cloud(&p, &origin(&p), &[0.0; 5], 20, 10, 1).unwrap();
        assert!(c.degenerate);
        assert!(c.covariance.iter().all(|v| *v == 0.0));
        let u = [1.0, 0.0, 0.0, 0.0, 0.0];
        assert!(!inflation_gate(&c, &u, 0.0, 0.9).unwrap());
    }

    #[test]
    fn leading_eigenvector_always_passes() {
        let p = ModelParams::model(5, 2);
        let c = build_analog_cloud(&p, &origin(&p), &[0.5; 5], 200, 10, 3).unwrap();
        let e0 = c.eigenvectors[0].clone();
        assert!(inflation_gate(&c, &e0, 0.999, 0.9).unwrap());
        let neg: Vec<f64> = e0.iter().map(|v| -v).collect();
        assert!(inflation_gate(&c, &neg, 0.999, 0.9).unwrap());
        assert!(inflation_gate(&c, &[1.0, 1.0, 0.0, 0.0, 0.0], 0.5, 0.9).is_err());
    }

    #[test]
    fn leading_count_honours_fraction() {
        let p = ModelParams::model(4, 1);
        let mut c = build_analog_cloud(&p, &origin(&p), &[0.5; 4], 50, 0, 3).unwrap();
        c.eigenvalues = vec![6.0, 3.0, 0.5, 0.5];
        assert_eq!(c.leading_count(0.9), 2);
        assert_eq!(c.leading_count(1.0), 4);
        assert_eq!(c.leading_count(0.5), 1);
    }

    #[test]
    fn cloud_is_deterministic() {
        let p = ModelParams::model(4, 2);
        let a = build_analog_cloud(&p, &origin(&p), &[0.3; 4], 30, 5, 9).unwrap();
        let b = build_analog_cloud(&p, &origin(&p), &[0.3; 4], 30, 5, 9).unwrap();
        assert_eq!(a.propagated, b.propagated);
        assert!(build_analog_cloud(&p, &origin(&p), &[0.3; 4], 4, 5, 9).is_err());
    }

    #[test]
    fn cache_requires_matching_origin() {
        let p = ModelParams::model(4, 1);
        let o = origin(&p);
        let mut cache = CloudCache::new();
        let build = || build_analog_cloud(&p, &o, &[0.1; 4], 10, 2, 1);
        cache.get_or_build(4, &o, build).unwrap();
        cache.get_or_build(4, &o, build).unwrap();
        assert_eq!((cache.builds, cache.hits), (1, 1));
        let mut other = o.clone();
        other.x_mut()[0] += 1.0;
        cache.get_or_build(4, &other, || build_analog_cloud(&p, &other, &[0.1; 4], 10, 2, 1)).unwrap();
        assert_eq!(cache.builds, 2);
    }
}
