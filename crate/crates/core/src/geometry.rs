//! Ensemble ellipsoids: SVD frames of the anomaly matrix, direction matching
//! between analysis times, the inflation operator and Cholesky sampling.
//!
//! Only slow variables enter the geometry. Anomalies are always taken about
//! the control member, never about the ensemble mean.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model::{ModelParams, State};

/// `m` member states plus the index of the control member.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<State>,
    pub control: usize,
}

impl Ensemble {
    pub fn new(members: Vec<State>, control: usize) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "an ensemble needs at least 2 members, got {}",
                members.len()
            )));
        }
        if control >= members.len() {
            return Err(Error::InvalidInput(format!("control index {control} out of range")));
        }
        let (ns, nt) = (members[0].slow_len(), members[0].as_slice().len());
        if members.iter().any(|s| s.slow_len() != ns || s.as_slice().len() != nt) {
            return Err(Error::InvalidInput("ensemble members differ in dimension".into()));
        }
        Ok(Self { members, control })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn slow_len(&self) -> usize {
        self.members[0].slow_len()
    }

    pub fn control_state(&self) -> &State {
        &self.members[self.control]
    }

    pub fn check_dims(&self, params: &ModelParams) -> Result<()> {
        self.members.iter().try_for_each(|m| m.check_dims(params))
    }

    /// Mean of the members' slow variables.
    pub fn slow_mean(&self) -> Vec<f64> {
        let n = self.slow_len();
        let mut mean = vec![0.0; n];
        for m in &self.members {
            for (acc, v) in mean.iter_mut().zip(m.x()) {
                *acc += v;
            }
        }
        let k = self.members.len() as f64;
        mean.iter_mut().for_each(|v| *v /= k);
        mean
    }

    /// I x (m-1) matrix of slow anomalies about the control, one column per non-control member.
    pub fn anomaly_matrix(&self) -> DMatrix<f64> {
        let n = self.slow_len();
        let c = self.control_state().x();
        let cols: Vec<usize> = (0..self.len()).filter(|&k| k != self.control).collect();
        DMatrix::from_fn(n, cols.len(), |i, j| self.members[cols[j]].x()[i] - c[i])
    }

    /// Per-dimension sample standard deviation of the slow variables (n - 1 denominator).
    pub fn slow_std(&self) -> Vec<f64> {
        let mean = self.slow_mean();
        let k = (self.len() - 1) as f64;
        (0..self.slow_len())
            .map(|i| {
                let ss: f64 = self.members.iter().map(|m| (m.x()[i] - mean[i]).powi(2)).sum();
                (ss / k).sqrt()
            })
            .collect()
    }

    /// Root-mean-square slow distance of the non-control members from the control.
    pub fn spread_about_control(&self) -> f64 {
        let c = self.control_state().x();
        let mut ss = 0.0;
        for (k, m) in self.members.iter().enumerate() {
            if k != self.control {
                ss += m.x().iter().zip(c).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            }
        }
        (ss / (self.len() - 1) as f64).sqrt()
    }
}

/// Singular values (descending) and left-singular directions of an anomaly matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EllipsoidFrame {
    pub singular_values: Vec<f64>,
    /// Unit semi-axis directions, `axes[k]` pairs with `singular_values[k]`.
    pub axes: Vec<Vec<f64>>,
    pub t: f64,
}

impl EllipsoidFrame {
    pub fn dim(&self) -> usize {
        self.singular_values.len()
    }

    /// Frame of an arbitrary I x k anomaly matrix with k >= I.
    pub fn from_anomalies(a: &DMatrix<f64>, t: f64) -> Self {
        let n = a.nrows();
        let svd = a.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let s = svd.singular_values;
        let mut order: Vec<usize> = (0..s.len()).collect();
        order.sort_by(|&p, &q| s[q].total_cmp(&s[p]).then(p.cmp(&q)));
        let mut singular_values = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        for &k in &order {
            singular_values.push(s[k].max(0.0));
            axes.push(u.column(k).iter().copied().collect());
        }
        Self { singular_values, axes, t }
    }
}

/// SVD of the ensemble's slow anomaly matrix. Requires more members than slow dimensions.
pub fn svd_frame(ensemble: &Ensemble) -> Result<EllipsoidFrame> {
    let dims = ensemble.slow_len();
    if ensemble.len() <= dims {
        return Err(Error::DegenerateEllipsoid { members: ensemble.len(), dims });
    }
    Ok(EllipsoidFrame::from_anomalies(&ensemble.anomaly_matrix(), ensemble.control_state().t))
}

/// Correspondence between the directions of two consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionMatch {
    /// `pairing[k]` is the previous-frame index matched to current direction `k`.
    pub pairing: Vec<usize>,
    /// Current direction `k` has a smaller singular value than its partner.
    pub contracting: Vec<bool>,
    /// |u_k(t) . u_pairing[k](t-1)|
    pub match_quality: Vec<f64>,
}

impl DirectionMatch {
    pub fn contracting_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.contracting.iter().enumerate().filter(|(_, c)| **c).map(|(k, _)| k)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

/// Greedy pairing by descending absolute dot product; ties go to the lower index.
pub fn match_directions(prev: &EllipsoidFrame, curr: &EllipsoidFrame) -> Result<DirectionMatch> {
    let n = curr.dim();
    if prev.dim() != n {
        return Err(Error::InvalidInput(format!(
            "frames differ in dimension ({} vs {})",
            prev.dim(),
            n
        )));
    }
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(n * n);
    for (k, uc) in curr.axes.iter().enumerate() {
        for (l, up) in prev.axes.iter().enumerate() {
            pairs.push((dot(uc, up).abs().min(1.0), k, l));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut pairing = vec![usize::MAX; n];
    let mut match_quality = vec![0.0; n];
    let mut prev_taken = vec![false; n];
    let mut assigned = 0;
    for (q, k, l) in pairs {
        if pairing[k] == usize::MAX && !prev_taken[l] {
            pairing[k] = l;
            prev_taken[l] = true;
            match_quality[k] = q;
            assigned += 1;
            if assigned == n {
                break;
            }
        }
    }
    let contracting = (0..n)
        .map(|k| curr.singular_values[k] < prev.singular_values[pairing[k]])
        .collect();
    Ok(DirectionMatch { pairing, contracting, match_quality })
}

/// Applies M = I + phi u u^T to every non-control slow anomaly.
pub fn inflate(ensemble: &Ensemble, direction: &[f64], phi: f64) -> Result<Ensemble> {
    let mut out = ensemble.clone();
    inflate_in_place(&mut out, direction, phi)?;
    Ok(out)
}

pub fn inflate_in_place(ensemble: &mut Ensemble, direction: &[f64], phi: f64) -> Result<()> {
    if direction.len() != ensemble.slow_len() {
        return Err(Error::InvalidInput("inflation direction has the wrong length".into()));
    }
    let norm = dot(direction, direction).sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::InvalidInput(format!("inflation direction has norm {norm}, expected 1")));
    }
    if !(phi >= 0.0 && phi.is_finite()) {
        return Err(Error::InvalidInput(format!("inflation amount must be >= 0, got {phi}")));
    }
    if phi == 0.0 {
        return Ok(());
    }
    let control: Vec<f64> = ensemble.control_state().x().to_vec();
    for (k, m) in ensemble.members.iter_mut().enumerate() {
        if k == ensemble.control {
            continue;
        }
        let x = m.x_mut();
        let proj: f64 = x.iter().zip(&control).zip(direction).map(|((v, c), u)| (v - c) * u).sum();
        for (v, u) in x.iter_mut().zip(direction) {
            *v += phi * proj * u;
        }
    }
    Ok(())
}

/// Lower Cholesky factor after the upper-onto-lower symmetrisation and, if
/// needed, up to three escalating diagonal jitters.
pub fn covariance_sqrt(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::InvalidInput("covariance must be square".into()));
    }
    let mut c = cov.clone();
    for i in 0..n {
        for j in 0..i {
            c[(i, j)] = c[(j, i)];
        }
    }
    if c.iter().all(|v| *v == 0.0) {
        return Ok(c);
    }
    if let Some(ch) = Cholesky::new(c.clone()) {
        return Ok(ch.l());
    }
    let mut jitter = 1e-10 * c.trace().abs() / n as f64;
    for _ in 0..3 {
        let mut cj = c.clone();
        for i in 0..n {
            cj[(i, i)] += jitter;
        }
        if let Some(ch) = Cholesky::new(cj) {
            return Ok(ch.l());
        }
        jitter *= 10.0;
    }
    let min_eigenvalue = SymmetricEigen::new(c).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    Err(Error::NotPositiveDefinite { min_eigenvalue })
}

/// Draws `count` vectors `center + L g` with `L L^T = cov` and `g` standard normal.
pub fn sample_from_covariance<R: Rng + ?Sized>(
    center: &[f64],
    cov: &DMatrix<f64>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if cov.nrows() != center.len() {
        return Err(Error::InvalidInput("covariance and center differ in dimension".into()));
    }
    let l = covariance_sqrt(cov)?;
    Ok((0..count).map(|_| draw_with_factor(center, &l, rng)).collect())
}

pub(crate) fn draw_with_factor<R: Rng + ?Sized>(center: &[f64], l: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let g = DVector::from_iterator(center.len(), (0..center.len()).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let d = l * g;
    center.iter().zip(d.iter()).map(|(c, v)| c + v).collect()
}

/// Sample covariance (n - 1 denominator) of row vectors.
pub fn sample_covariance(points: &[Vec<f64>]) -> DMatrix<f64> {
    let n = points.first().map_or(0, Vec::len);
    let k = points.len();
    if k == 0 {
        return DMatrix::zeros(n, n);
    }
    // shift by the first point so identical points give an exactly zero matrix
    let origin = &points[0];
    let mut mean = vec![0.0; n];
    for p in points {
        for ((m, v), o) in mean.iter_mut().zip(p).zip(origin) {
            *m += v - o;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k as f64);
    let mut cov = DMatrix::zeros(n, n);
    for p in points {
        for i in 0..n {
            let di = p[i] - origin[i] - mean[i];
            for j in i..n {
                cov[(i, j)] += di * (p[j] - origin[j] - mean[j]);
            }
        }
    }
    let denom = (k.max(2) - 1) as f64;
    for i in 0..n {
        for j in i..n {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn slow_ensemble(control: &[f64], anomalies: &[Vec<f64>]) -> Ensemble {
        let mk = |x: &[f64]| State::new(x, &vec![0.5; x.len()], 0.0).unwrap();
        let mut members = vec![mk(control)];
        for a in anomalies {
            let x: Vec<f64> = control.iter().zip(a).map(|(c, d)| c + d).collect();
            members.push(mk(&x));
        }
        Ensemble::new(members, 0).unwrap()
    }

    #[test]
    fn ensemble_validation() {
        let s = State::new(&[1.0; 4], &[0.0; 4], 0.0).unwrap();
        assert!(Ensemble::new(vec![s.clone()], 0).is_err());
        assert!(Ensemble::new(vec![s.clone(), s.clone()], 2).is_err());
        let t = State::new(&[1.0; 5], &[0.0; 5], 0.0).unwrap();
        assert!(Ensemble::new(vec![s, t], 0).is_err());
    }

    #[test]
    fn identical_members_have_zero_singular_values() {
        let e = slow_ensemble(&[1.0, 2.0], &vec![vec![0.0, 0.0]; 4]);
        let f = svd_frame(&e).unwrap();
        assert_eq!(f.singular_values, vec![0.0, 0.0]);
    }

    #[test]
    fn too_few_members_is_degenerate() {
        let e = slow_ensemble(&[0.0; 4], &vec![vec![1.0, 0.0, 0.0, 0.0]; 3]);
        assert!(matches!(svd_frame(&e), Err(Error::DegenerateEllipsoid { members: 4, dims: 4 })));
    }

    #[test]
    fn match_is_sign_invariant() {
        let e = slow_ensemble(
            &[0.0; 3],
            &[vec![3.0, 0.1, 0.0], vec![-1.0, 2.0, 0.5], vec![0.2, -0.3, 1.0], vec![0.5, 0.5, -0.5]],
        );
        let f = svd_frame(&e).unwrap();
        let mut g = f.clone();
        g.axes[1].iter_mut().for_each(|v| *v = -*v);
        let m = match_directions(&f, &g).unwrap();
        assert_eq!(m.pairing, vec![0, 1, 2]);
        assert!(m.match_quality.iter().all(|q| (q - 1.0).abs() < 1e-12));
        assert!(m.contracting.iter().all(|c| !c));
    }

    #[test]
    fn match_flags_shrinking_partner() {
        let prev = EllipsoidFrame {
            singular_values: vec![3.0, 1.0],
            axes: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            t: 0.0,
        };
        let curr = EllipsoidFrame {
            singular_values: vec![2.0, 1.5],
            axes: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            t: 0.02,
        };
        let m = match_directions(&prev, &curr).unwrap();
        assert_eq!(m.pairing, vec![1, 0]);
        assert_eq!(m.contracting, vec![false, true]);
    }

    #[test]
    fn inflate_rejects_bad_inputs() {
        let e = slow_ensemble(&[0.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert!(inflate(&e, &[1.0, 1.0], 0.1).is_err());
        assert!(inflate(&e, &[1.0, 0.0], -0.1).is_err());
        assert_eq!(inflate(&e, &[1.0, 0.0], 0.0).unwrap(), e);
    }

    #[test]
    fn inflate_scales_parallel_anomaly() {
        let e = slow_ensemble(&[1.0, -2.0], &[vec![2.0, 0.0], vec![0.0, 3.0]]);
        let out = inflate(&e, &[1.0, 0.0], 0.05).unwrap();
        assert!((out.members[1].x()[0] - (1.0 + 2.0 * 1.05)).abs() < 1e-14);
        assert_eq!(out.members[2].x(), e.members[2].x());
        assert_eq!(out.members[0], e.members[0]);
    }

    #[test]
    fn zero_covariance_returns_center() {
        let mut rng = stream(1, &[]);
        let out = sample_from_covariance(&[1.0, 2.0], &DMatrix::zeros(2, 2), 5, &mut rng).unwrap();
        assert!(out.iter().all(|v| v == &vec![1.0, 2.0]));
    }

    #[test]
    fn lower_triangle_is_replaced_by_upper() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, -7.0, 1.0]);
        let l = covariance_sqrt(&c).unwrap();
        let back = &l * l.transpose();
        assert!((back[(1, 0)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn indefinite_covariance_is_an_error() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match covariance_sqrt(&c) {
            Err(Error::NotPositiveDefinite { min_eigenvalue }) => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn semidefinite_covariance_gets_jitter() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(covariance_sqrt(&c).is_ok());
    }
}
