//! Library operations checked against independent brute-force computations.

use l96_core::geometry::{inflate, match_directions, sample_covariance, sample_from_covariance, svd_frame, EllipsoidFrame, Ensemble};
use l96_core::model::{rk4_step, tendency, ModelParams, State};
use l96_core::rng::stream;
use l96_core::targeted::build_analog_cloud;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix (row-major).
/// Returns eigenvalues and eigenvectors (as columns of the returned matrix).
fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k][p], m[k][q]);
                    m[k][p] = c * mkp - s * mkq;
                    m[k][q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p][k], m[q][k]);
                    m[p][k] = c * mpk - s * mqk;
                    m[q][k] = s * mpk + c * mqk;
                }
                for row in v.iter_mut() {
                    let (vkp, vkq) = (row[p], row[q]);
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i][i]).collect();
    let vecs = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (vals, vecs)
}

fn ensemble_from_anomalies(anoms: &[Vec<f64>]) -> Ensemble {
    let n = anoms[0].len();
    let center: Vec<f64> = (0..n).map(|i| 2.0 + i as f64).collect();
    let mut members = vec![State::new(&center, &vec![0.5; n], 0.0).unwrap()];
    for a in anoms {
        let x: Vec<f64> = center.iter().zip(a).map(|(c, d)| c + d).collect();
        members.push(State::new(&x, &vec![0.5; n], 0.0).unwrap());
    }
    Ensemble::new(members, 0).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
pub fn svd_of_hand_example() {
    let e = ensemble_from_anomalies(&[vec![3.0, 0.0], vec![-3.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]]);
    let f = svd_frame(&e).unwrap();
    assert!((f.singular_values[0] - 18f64.sqrt()).abs() < 1e-12);
    assert!((f.singular_values[1] - 2f64.sqrt()).abs() < 1e-12);
    assert!((f.axes[0][0].abs() - 1.0).abs() < 1e-12);
    assert!((f.axes[1][1].abs() - 1.0).abs() < 1e-12);
}

#[test]
pub fn svd_matches_eigen_decomposition_of_aat() {
    let mut rng = stream(11, &[]);
    for trial in 0..50 {
        let n = 2 + trial % 5;
        let m = n + 1 + trial % 7;
        let anoms: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal) * (1.0 + trial as f64 * 0.1)).collect()).collect();
        let frame = svd_frame(&ensemble_from_anomalies(&anoms)).unwrap();
        let aat: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| anoms.iter().map(|a| a[i] * a[j]).sum()).collect()).collect();
        let (vals, vecs) = jacobi_eigen(&aat);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        for (k, &o) in order.iter().enumerate() {
            let s = vals[o].max(0.0).sqrt();
            assert!((frame.singular_values[k] - s).abs() < 1e-9 * (1.0 + s), "trial {trial}: s{k}");
            let gap = (0..n).filter(|&j| j != o).map(|j| (vals[j] - vals[o]).abs()).fold(f64::INFINITY, f64::min);
            if gap > 1e-3 * vals[order[0]] {
                assert!((dot(&frame.axes[k], &vecs[o]).abs() - 1.0).abs() < 1e-7, "trial {trial}: axis {k}");
            }
        }
    }
}

#[test]
pub fn zero_anomalies_give_zero_singular_values() {
    let e = ensemble_from_anomalies(&vec![vec![0.0; 3]; 5]);
    assert!(svd_frame(&e).unwrap().singular_values.iter().all(|s| *s == 0.0));
}

fn random_orthonormal(n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = Vec::new();
    while out.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for u in &out {
            let d = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= d * y);
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    out
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
pub fn greedy_matching_agrees_with_exhaustive_assignment() {
    let mut rng = stream(5, &[]);
    let (mut trials, mut agree) = (0, 0);
    for n in 2..=5 {
        let perms = permutations(n);
        for _ in 0..100 {
            let prev_axes = random_orthonormal(n, &mut rng);
            // the next frame: a shuffled, sign-flipped copy, rotated about as much as
            // consecutive analyses of a forecast ensemble (median matched |dot| ~0.985)
            let mut shuffle: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                shuffle.swap(i, rng.random_range(0..=i));
            }
            let mut curr_axes: Vec<Vec<f64>> = shuffle
                .iter()
                .map(|&k| prev_axes[k].iter().map(|v| v * if rng.random::<bool>() { 1.0 } else { -1.0 } + 0.08 * rng.sample::<f64, _>(StandardNormal)).collect())
                .collect();
            for i in 0..n {
                for j in 0..i {
                    let d = dot(&curr_axes[i], &curr_axes[j]);
                    let uj = curr_axes[j].clone();
                    curr_axes[i].iter_mut().zip(&uj).for_each(|(x, y)| *x -= d * y);
                }
                let norm = dot(&curr_axes[i], &curr_axes[i]).sqrt();
                curr_axes[i].iter_mut().for_each(|x| *x /= norm);
            }
            let prev = EllipsoidFrame { singular_values: vec![1.0; n], axes: prev_axes.clone(), t: 0.0 };
            let curr = EllipsoidFrame { singular_values: vec![1.0; n], axes: curr_axes.clone(), t: 1.0 };
            let greedy = match_directions(&prev, &curr).unwrap();
            let best = perms
                .iter()
                .max_by(|a, b| {
                    let score = |p: &Vec<usize>| (0..n).map(|k| dot(&curr_axes[k], &prev_axes[p[k]]).abs()).sum::<f64>();
                    score(a).total_cmp(&score(b))
                })
                .unwrap();
            trials += 1;
            agree += (&greedy.pairing == best) as usize;
            assert!(greedy.match_quality.iter().all(|q| (0.0..=1.0 + 1e-12).contains(q)));
        }
    }
    assert!(agree as f64 >= 0.95 * trials as f64, "greedy agreed in {agree}/{trials}");
}

#[test]
pub fn inflation_equals_explicit_matrix_product() {
    let mut rng = stream(3, &[]);
    for _ in 0..30 {
        let n = 4;
        let anoms: Vec<Vec<f64>> = (0..7).map(|_| (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).collect();
        let e = ensemble_from_anomalies(&anoms);
        let u = random_orthonormal(n, &mut rng).remove(0);
        let phi = rng.random::<f64>() * 0.2;
        let out = inflate(&e, &u, phi).unwrap();
        // M = I + phi u u^T, built entry by entry
        let mm: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64 + phi * u[i] * u[j]).collect()).collect();
        let c = e.members[0].x();
        for (k, a) in anoms.iter().enumerate() {
            let expected: Vec<f64> = (0..n).map(|i| c[i] + (0..n).map(|j| mm[i][j] * a[j]).sum::<f64>()).collect();
            for i in 0..n {
                assert!((out.members[k + 1].x()[i] - expected[i]).abs() < 1e-12);
            }
            assert_eq!(out.members[k + 1].y(), e.members[k + 1].y());
        }
        assert_eq!(out.members[0], e.members[0]);
    }
}

#[test]
pub fn inflation_leaves_orthogonal_anomaly_alone_and_scales_parallel_one() {
    let e = ensemble_from_anomalies(&[vec![0.0, 2.0, 0.0, 0.0], vec![3.0, 0.0, 0.0, 0.0]]);
    let out = inflate(&e, &[1.0, 0.0, 0.0, 0.0], 0.05).unwrap();
    let c = e.members[0].x();
    assert_eq!(out.members[1].x(), e.members[1].x());
    assert!((out.members[2].x()[0] - c[0] - 3.15).abs() < 1e-12);
    assert!(inflate(&e, &[1.0, 1.0, 0.0, 0.0], 0.05).is_err());
}

#[test]
pub fn identity_covariance_is_reproduced() {
    let cov = DMatrix::<f64>::identity(4, 4);
    let draws = sample_from_covariance(&[0.0; 4], &cov, 100_000, &mut stream(1, &[])).unwrap();
    let c = sample_covariance(&draws);
    assert!((c - cov).norm() < 0.05 * 2.0);
}

#[test]
pub fn correlated_covariance_is_reproduced() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.9, 0.9, 1.0]);
    let draws = sample_from_covariance(&[5.0, -1.0], &cov, 100_000, &mut stream(2, &[])).unwrap();
    let c = sample_covariance(&draws);
    let r = c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
    assert!((r - 0.9).abs() < 0.02, "r = {r}");
    let mean0 = draws.iter().map(|d| d[0]).sum::<f64>() / draws.len() as f64;
    assert!((mean0 - 5.0).abs() < 0.02);
}

#[test]
pub fn zero_covariance_returns_the_center() {
    let draws = sample_from_covariance(&[1.0, 2.0], &DMatrix::zeros(2, 2), 5, &mut stream(2, &[])).unwrap();
    assert!(draws.iter().all(|d| d == &vec![1.0, 2.0]));
}

#[test]
pub fn rk4_single_mode_decay_matches_closed_form() {
    let p = ModelParams { forcing: 0.0, ..ModelParams::with_coupling(5, 3, 0.0) };
    let mut y = vec![0.0; 15];
    y[7] = 0.3;
    let mut x = vec![0.0; 5];
    x[2] = 1.5;
    let s = State::new(&x, &y, 0.0).unwrap();
    let next = rk4_step(&p, &s).unwrap();
    let rk = |z: f64| 1.0 + z + z * z / 2.0 + z.powi(3) / 6.0 + z.powi(4) / 24.0;
    let c = p.time_ratio;
    assert!((next.x()[2] - 1.5 * rk(-p.dt)).abs() < 1e-15);
    assert!((next.y()[7] - 0.3 * rk(-c * p.dt)).abs() < 1e-15);
    // and the RK4 polynomial tracks exp(-c dt) to fifth order
    assert!((rk(-c * p.dt) - (-c * p.dt).exp()).abs() < (c * p.dt).powi(5) / 100.0);
}

#[test]
pub fn two_half_steps_agree_with_one_step_to_fifth_order() {
    let p = ModelParams::system(6, 4);
    let mut rng = stream(8, &[]);
    let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 10.0 - 2.0).collect();
    let y: Vec<f64> = (0..24).map(|_| rng.random::<f64>() * 0.5 - 0.25).collect();
    let s = State::new(&x, &y, 0.0).unwrap();
    let diff = |dt: f64| {
        let q = ModelParams { dt, ..p };
        let h = ModelParams { dt: dt / 2.0, ..p };
        let one = rk4_step(&q, &s).unwrap();
        let two = rk4_step(&h, &rk4_step(&h, &s).unwrap()).unwrap();
        one.as_slice().iter().zip(two.as_slice()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let ratio = diff(0.004) / diff(0.002);
    assert!((16.0..=64.0).contains(&ratio), "step-doubling ratio {ratio}");
}

#[test]
pub fn tendency_commutes_with_site_rotation() {
    let p = ModelParams::system(5, 3);
    let mut rng = stream(4, &[]);
    let x: Vec<f64> = (0..5).map(|_| rng.random::<f64>() * 8.0).collect();
    let y: Vec<f64> = (0..15).map(|_| rng.random::<f64>() - 0.5).collect();
    let s = State::new(&x, &y, 0.0).unwrap();
    let t = tendency(&p, &s).unwrap();
    for k in 1..5 {
        let mut xr = x.clone();
        xr.rotate_right(k);
        let mut yr = y.clone();
        yr.rotate_right(k * 3);
        let tr = tendency(&p, &State::new(&xr, &yr, 0.0).unwrap()).unwrap();
        let mut dx = t.dx().to_vec();
        dx.rotate_right(k);
        let mut dy = t.dy().to_vec();
        dy.rotate_right(k * 3);
        for (a, b) in tr.dx().iter().zip(&dx) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in tr.dy().iter().zip(&dy) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

/// Forward finite-difference Jacobian of the `steps`-step slow map.
fn slow_jacobian(p: &ModelParams, origin: &State, steps: usize, eps: f64) -> DMatrix<f64> {
    let run = |s: &State| {
        let mut s = s.clone();
        for _ in 0..steps {
            s = rk4_step(p, &s).unwrap();
        }
        s.x().to_vec()
    };
    let base = run(origin);
    let n = p.slow;
    let mut g = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut s = origin.clone();
        s.x_mut()[j] += eps;
        let out = run(&s);
        for i in 0..n {
            g[(i, j)] = (out[i] - base[i]) / eps;
        }
    }
    g
}

#[test]
pub fn analog_cloud_covariance_follows_linearized_dynamics() {
    // uncoupled, weakly forced ring at its uniform fixed point: linear in small perturbations
    let p = ModelParams { forcing: 0.5, ..ModelParams::with_coupling(5, 2, 0.0) };
    let origin = State::new(&[0.5; 5], &[0.0; 10], 0.0).unwrap();
    let sigma = [1e-3, 2e-3, 0.5e-3, 1.5e-3, 1e-3];
    let cloud = build_analog_cloud(&p, &origin, &sigma, 4000, 50, 17).unwrap();
    let g = slow_jacobian(&p, &origin, 50, 1e-7);
    let c0 = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(5, sigma.iter().map(|s| s * s / 3.0)));
    let expected = &g * c0 * g.transpose();
    let rel = (&cloud.covariance - &expected).norm() / expected.norm();
    assert!(rel < 0.1, "relative error {rel}");
    for (i, v) in cloud.eigenvectors.iter().enumerate() {
        for (j, w) in cloud.eigenvectors.iter().enumerate() {
            let d = dot(v, w);
            assert!((d - (i == j) as u8 as f64).abs() < 1e-8);
        }
    }
}
