use std::sync::OnceLock;

use l96_core::init::{
    compute_climatology, create_montecarlo_ensemble, create_structured_ensemble, draw_initial_truths, Climatology,
    ClimatologyConfig, Hypersphere, NEIGHBOR_COUNT, SPREAD_FRACTION,
};
use l96_core::geometry::sample_covariance;
use l96_core::model::{ModelParams, Rk4};
use l96_core::rng::stream;
use l96_core::Error;

fn clim5() -> &'static Climatology {
    static C: OnceLock<Climatology> = OnceLock::new();
    C.get_or_init(|| compute_climatology(&ModelParams::system(5, 16), &ClimatologyConfig::default(), 7).unwrap())
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn tau_agrees_between_seeds() {
    let other = compute_climatology(&ModelParams::system(5, 16), &ClimatologyConfig::default(), 8).unwrap();
    let a = clim5();
    assert!((a.tau - other.tau).abs() / a.tau < 0.05, "tau {} vs {}", a.tau, other.tau);
    assert!(a.span.iter().all(|s| *s > 0.0));
    assert!(a.snapshot_count() >= 10_000 / a.config.snapshot_stride);
}

#[test]
fn cache_round_trip_and_tamper_detection() {
    let dir = tempfile::tempdir().unwrap();
    let p = ModelParams::system(4, 4);
    let cfg = ClimatologyConfig { spinup_days: 10.0, sample_days: 500.0, snapshot_stride: 5 };
    let (a, path) = Climatology::load_or_compute(dir.path(), &p, &cfg, 3).unwrap();
    let (b, again) = Climatology::load_or_compute(dir.path(), &p, &cfg, 3).unwrap();
    assert_eq!(path, again);
    assert_eq!(a.snapshots, b.snapshots);
    assert_eq!(a.tau, b.tau);

    let text = std::fs::read_to_string(&path).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let snaps = v["climatology"]["snapshots"].as_array_mut().unwrap();
    snaps[0] = serde_json::json!(snaps[0].as_f64().unwrap() + 1.0);
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(Climatology::load(&path).is_err());
}

#[test]
fn truths_follow_one_trajectory_and_decorrelate() {
    let clim = clim5();
    let truths = draw_initial_truths(clim, 40, 250.0).unwrap();
    let one = draw_initial_truths(clim, 1, 250.0).unwrap();
    assert_eq!(one[0], truths[0]);

    let mut s = clim.end_state.clone();
    Rk4::new(clim.params).unwrap().advance_n(&mut s, clim.params.steps_for_days(250.0)).unwrap();
    assert_eq!(s.x(), truths[0].x());
    assert_eq!(s.y(), truths[0].y());

    let (mut a, mut b) = (Vec::new(), Vec::new());
    for w in truths.windows(2) {
        for i in 0..5 {
            a.push(w[0].x()[i] - clim.mean[i]);
            b.push(w[1].x()[i] - clim.mean[i]);
        }
    }
    let r = pearson(&a, &b);
    assert!(r.abs() < 0.2, "consecutive-truth correlation {r}");
}

#[test]
fn structured_ensemble_construction() {
    let clim = clim5();
    let truth = draw_initial_truths(clim, 1, 250.0).unwrap().remove(0);
    let (e, sphere) = create_structured_ensemble(clim, &truth, 20, &mut stream(1, &[0])).unwrap();
    let (e2, _) = create_structured_ensemble(clim, &truth, 20, &mut stream(1, &[0])).unwrap();
    assert_eq!(e, e2);
    assert_eq!(e.len(), 20);
    assert_eq!(e.control, 0);
    assert!(e.members.iter().all(|m| m.y() == truth.y()));

    assert_eq!(sphere.neighbors.len(), NEIGHBOR_COUNT);
    assert!(sphere.neighbors_in_box(clim));
    let c = &sphere.c_init;
    assert_eq!(c, &c.transpose());
    let target = (SPREAD_FRACTION * clim.spread_scale()).powi(2);
    assert!((c.trace() / 5.0 - target).abs() <= 1e-8 * target);

    let (pair, _) = create_structured_ensemble(clim, &truth, 2, &mut stream(1, &[1])).unwrap();
    assert_eq!(pair.len(), 2);
    assert_ne!(pair.members[0].x(), pair.members[1].x());
    assert!(create_structured_ensemble(clim, &truth, 1, &mut stream(1, &[1])).is_err());
}

#[test]
fn unwidened_neighbors_lie_in_the_box() {
    let clim = clim5();
    for truth in draw_initial_truths(clim, 10, 250.0).unwrap() {
        let h = Hypersphere::build(clim, &truth).unwrap();
        assert!(h.widening >= 1.0);
        for n in &h.neighbors {
            for i in 0..5 {
                let limit = 0.05 * clim.span[i] * h.widening;
                assert!((n[i] - truth.x()[i]).abs() <= limit * (1.0 + 1e-12));
            }
        }
    }
}

#[test]
fn sparse_climatology_reports_neighbor_deficit() {
    let p = ModelParams::system(4, 4);
    let cfg = ClimatologyConfig { spinup_days: 10.0, sample_days: 500.0, snapshot_stride: 500 };
    let clim = compute_climatology(&p, &cfg, 1).unwrap();
    let truth = draw_initial_truths(&clim, 1, 10.0).unwrap().remove(0);
    match create_structured_ensemble(&clim, &truth, 20, &mut stream(0, &[0])) {
        Err(Error::NeighborDeficit { found, required }) => {
            assert_eq!(required, NEIGHBOR_COUNT);
            assert!(found < required);
        }
        other => panic!("expected a neighbour deficit, got {other:?}"),
    }
}

#[test]
fn montecarlo_covariance_is_isotropic() {
    let clim = clim5();
    let truth = draw_initial_truths(clim, 1, 250.0).unwrap().remove(0);
    let e = create_montecarlo_ensemble(clim, &truth, 100_000, &mut stream(2, &[0])).unwrap();
    assert!(e.members.iter().all(|m| m.y() == truth.y()));
    let pts: Vec<Vec<f64>> = e.members.iter().map(|m| m.x().to_vec()).collect();
    let cov = sample_covariance(&pts);
    let sd2 = (SPREAD_FRACTION * clim.spread_scale()).powi(2);
    let expected = nalgebra::DMatrix::<f64>::identity(5, 5) * sd2;
    let rel = (&cov - &expected).norm() / expected.norm();
    assert!(rel < 0.05, "relative covariance error {rel}");

    let a = create_montecarlo_ensemble(clim, &truth, 2, &mut stream(3, &[0])).unwrap();
    let b = create_montecarlo_ensemble(clim, &truth, 2, &mut stream(3, &[0])).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 2);
}
