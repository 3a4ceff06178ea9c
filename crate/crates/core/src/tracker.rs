//! Spatiotemporal current estimation.
//!
//! The current is modeled per axis as a zero-mean GP with separable kernel
//! `κ_x(x, x') κ_t(t, t')`: RBF in space, Matérn-3/2 in time. The temporal
//! factor has the 2-state SDE representation `[v, v̇]`, so the GP over a
//! finite set of tracked points is a linear-Gaussian state-space model and
//! a Kalman filter reproduces batch regression at those points.
//!
//! Each axis carries its own mean, but both axes share hyperparameters,
//! measurement locations and noise, so a single covariance serves both.
//! Per-axis state layout is point-major: `[v_1, v̇_1, v_2, v̇_2, ...]`.

use nalgebra::{DMatrix, DVector, Matrix2, RowVector2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{MeasurementSet, Vec2};

/// Relative diagonal jitter for spatial Gram matrices.
pub const GRAM_JITTER: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TrackerError {
    #[error("invalid hyperparameters: sigma = {sigma}, length = {length}")]
    InvalidHyperparams { sigma: f64, length: f64 },
    #[error("sampling period must be finite and non-negative, got {0}")]
    InvalidStep(f64),
    #[error("spatial Gram matrix is not positive definite even after jitter")]
    IllConditioned,
    #[error("innovation covariance is not positive definite")]
    InnovationNotPd,
    #[error("covariance lost positive semi-definiteness (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelHyperparams {
    /// Signal standard deviation (m/s).
    pub sigma: f64,
    /// Length scale: meters for the spatial kernel, seconds for the temporal.
    pub length: f64,
}

impl KernelHyperparams {
    pub fn new(sigma: f64, length: f64) -> Result<Self, TrackerError> {
        let hp = Self { sigma, length };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<(), TrackerError> {
        if self.sigma > 0.0 && self.length > 0.0 && self.sigma.is_finite() && self.length.is_finite() {
            Ok(())
        } else {
            Err(TrackerError::InvalidHyperparams {
                sigma: self.sigma,
                length: self.length,
            })
        }
    }

    pub fn variance(&self) -> f64 {
        self.sigma * self.sigma
    }
}

/// `σ² (1 + √3|τ|/ℓ) exp(-√3|τ|/ℓ)`.
pub fn matern32(tau: f64, hp: &KernelHyperparams) -> f64 {
    let r = 3f64.sqrt() * tau.abs() / hp.length;
    hp.variance() * (1.0 + r) * (-r).exp()
}

/// `σ² exp(-‖a - b‖² / (2ℓ²))`.
pub fn rbf(a: &Vec2, b: &Vec2, hp: &KernelHyperparams) -> f64 {
    hp.variance() * (-(a - b).norm_squared() / (2.0 * hp.length * hp.length)).exp()
}

pub fn rbf_gram(a: &[Vec2], b: &[Vec2], hp: &KernelHyperparams) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| rbf(&a[i], &b[j], hp))
}

fn jittered_cholesky(points: &[Vec2], hp: &KernelHyperparams) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>, TrackerError> {
    let mut k = rbf_gram(points, points, hp);
    for i in 0..points.len() {
        k[(i, i)] += GRAM_JITTER * hp.variance();
    }
    k.cholesky().ok_or(TrackerError::IllConditioned)
}

/// Discrete Matérn-3/2 state-space model plus the spatial kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub temporal: KernelHyperparams,
    pub spatial: KernelHyperparams,
    pub ts: f64,
    pub lambda: f64,
    pub qc: f64,
    pub a: Matrix2<f64>,
    pub l: Vector2<f64>,
    pub h: RowVector2<f64>,
    pub p_inf: Matrix2<f64>,
    pub p0: Matrix2<f64>,
    pub f: Matrix2<f64>,
    pub q: Matrix2<f64>,
}

/// `exp(A t)` for `A = [[0, 1], [-λ², -2λ]]`, whose eigenvalue `-λ` is
/// repeated.
pub fn matern32_transition(lambda: f64, t: f64) -> Matrix2<f64> {
    let lt = lambda * t;
    Matrix2::new(1.0 + lt, t, -lambda * lambda * t, 1.0 - lt) * (-lt).exp()
}

pub fn build_state_space(temporal: &KernelHyperparams, spatial: &KernelHyperparams, ts: f64) -> Result<StateSpaceModel, TrackerError> {
    temporal.validate()?;
    spatial.validate()?;
    if !(ts >= 0.0) || !ts.is_finite() {
        return Err(TrackerError::InvalidStep(ts));
    }
    let lambda = 3f64.sqrt() / temporal.length;
    let s2 = temporal.variance();
    let p_inf = Matrix2::new(s2, 0.0, 0.0, lambda * lambda * s2);
    let f = matern32_transition(lambda, ts);
    let mut q = p_inf - f * p_inf * f.transpose();
    q = (q + q.transpose()) * 0.5;
    Ok(StateSpaceModel {
        temporal: *temporal,
        spatial: *spatial,
        ts,
        lambda,
        qc: 4.0 * lambda.powi(3) * s2,
        a: Matrix2::new(0.0, 1.0, -lambda * lambda, -2.0 * lambda),
        l: Vector2::new(0.0, 1.0),
        h: RowVector2::new(1.0, 0.0),
        p_inf,
        p0: p_inf,
        f,
        q,
    })
}

impl StateSpaceModel {
    /// Same hyperparameters, different sampling period.
    pub fn with_step(&self, ts: f64) -> Result<Self, TrackerError> {
        build_state_space(&self.temporal, &self.spatial, ts)
    }
}

/// Map from tracked-point values to observation locations, and the
/// observation covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpMeasurementMap {
    /// `m × n` spatial map `K(x_k, x^f) K(x^f, x^f)⁻¹`.
    pub h: DMatrix<f64>,
    /// `m × m`: spatial conditional covariance scaled by `κ_t(0)`, plus `R I`.
    pub r: DMatrix<f64>,
}

pub fn measurement_map(
    observed: &[Vec2],
    targets: &[Vec2],
    spatial: &KernelHyperparams,
    temporal_variance: f64,
    r: f64,
) -> Result<GpMeasurementMap, TrackerError> {
    if targets.is_empty() {
        return Err(TrackerError::Dimension("no target points".into()));
    }
    let chol = jittered_cholesky(targets, spatial)?;
    let k_kf = rbf_gram(observed, targets, spatial);
    let h = chol.solve(&k_kf.transpose()).transpose();
    let k_kk = rbf_gram(observed, observed, spatial);
    let mut cond = k_kk - &h * k_kf.transpose();
    cond = (&cond + cond.transpose()) * 0.5;
    let m = observed.len();
    let rk = cond * temporal_variance + DMatrix::identity(m, m) * r;
    Ok(GpMeasurementMap { h, r: rk })
}

/// Kalman belief over the tracked points.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentBelief {
    pub time: f64,
    pub points: Vec<Vec2>,
    /// `2n × 2`; column `a` is the state of axis `a`.
    pub mean: DMatrix<f64>,
    /// `2n × 2n`, shared by both axes.
    pub cov: DMatrix<f64>,
}

impl CurrentBelief {
    /// Stationary prior `K_ff ⊗ P∞` with zero mean.
    pub fn prior(points: Vec<Vec2>, model: &StateSpaceModel, time: f64) -> Self {
        let k = rbf_gram(&points, &points, &model.spatial);
        let p = DMatrix::from_column_slice(2, 2, model.p0.as_slice());
        let n = points.len();
        Self {
            time,
            points,
            mean: DMatrix::zeros(2 * n, 2),
            cov: k.kronecker(&p),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Current estimate at tracked point `i`.
    pub fn estimate(&self, i: usize) -> Vec2 {
        Vec2::new(self.mean[(2 * i, 0)], self.mean[(2 * i, 1)])
    }

    pub fn estimates(&self) -> Vec<Vec2> {
        (0..self.len()).map(|i| self.estimate(i)).collect()
    }

    /// Posterior standard deviation of the current at point `i` (same for
    /// both axes).
    pub fn std_dev(&self, i: usize) -> f64 {
        self.cov[(2 * i, 2 * i)].max(0.0).sqrt()
    }

    /// Stacked `[axis x state; axis y state]`, length `4n`.
    pub fn full_state(&self) -> DVector<f64> {
        let n2 = self.mean.nrows();
        DVector::from_fn(2 * n2, |k, _| self.mean[(k % n2, k / n2)])
    }

    /// Block-diagonal covariance of `full_state`.
    pub fn full_covariance(&self) -> DMatrix<f64> {
        let n2 = self.cov.nrows();
        let mut out = DMatrix::zeros(2 * n2, 2 * n2);
        out.view_mut((0, 0), (n2, n2)).copy_from(&self.cov);
        out.view_mut((n2, n2), (n2, n2)).copy_from(&self.cov);
        out
    }

    /// Estimates and standard deviations at arbitrary points, conditioned
    /// through the spatial kernel (exact for tracked points).
    pub fn query(&self, points: &[Vec2], model: &StateSpaceModel) -> Result<Vec<(Vec2, f64)>, TrackerError> {
        let b = reproject(self, points, model)?;
        Ok((0..points.len()).map(|i| (b.estimate(i), b.std_dev(i))).collect())
    }

    fn check_psd(&self) -> Result<(), TrackerError> {
        if self.cov.nrows() == 0 {
            return Ok(());
        }
        let scale = self.cov.diagonal().amax().max(f64::MIN_POSITIVE);
        let min = self.cov.clone().symmetric_eigenvalues().min();
        if min < -1e-9 * scale || !min.is_finite() {
            return Err(TrackerError::NotPsd(min));
        }
        Ok(())
    }

    fn symmetrize(&mut self) {
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
    }
}

fn same_point(a: &Vec2, b: &Vec2) -> bool {
    a.x == b.x && a.y == b.y
}

/// Moves the belief onto `points`. Points that coincide with tracked ones
/// keep their marginal exactly; new points are conditioned on the tracked
/// values through the spatial kernel, with the conditional residual at its
/// stationary covariance.
pub fn reproject(belief: &CurrentBelief, points: &[Vec2], model: &StateSpaceModel) -> Result<CurrentBelief, TrackerError> {
    if belief.is_empty() {
        return Ok(CurrentBelief::prior(points.to_vec(), model, belief.time));
    }
    if belief.points.len() == points.len() && belief.points.iter().zip(points).all(|(a, b)| same_point(a, b)) {
        return Ok(belief.clone());
    }
    let n = belief.len();
    let m = points.len();
    let matched: Vec<Option<usize>> = points
        .iter()
        .map(|p| belief.points.iter().position(|q| same_point(p, q)))
        .collect();
    let fresh: Vec<usize> = (0..m).filter(|&i| matched[i].is_none()).collect();

    let mut a = DMatrix::zeros(m, n);
    let mut resid = DMatrix::zeros(m, m);
    for (i, mj) in matched.iter().enumerate() {
        if let Some(j) = mj {
            a[(i, *j)] = 1.0;
        }
    }
    if !fresh.is_empty() {
        let fresh_pts: Vec<Vec2> = fresh.iter().map(|&i| points[i]).collect();
        let map = measurement_map(&fresh_pts, &belief.points, &model.spatial, 1.0, 0.0)?;
        for (r, &i) in fresh.iter().enumerate() {
            a.row_mut(i).copy_from(&map.h.row(r));
            for (c, &j) in fresh.iter().enumerate() {
                resid[(i, j)] = map.r[(r, c)];
            }
        }
    }
    let i2 = DMatrix::<f64>::identity(2, 2);
    let big = a.kronecker(&i2);
    let p_inf = DMatrix::from_column_slice(2, 2, model.p_inf.as_slice());
    let mut out = CurrentBelief {
        time: belief.time,
        points: points.to_vec(),
        mean: &big * &belief.mean,
        cov: &big * &belief.cov * big.transpose() + resid.kronecker(&p_inf),
    };
    out.symmetrize();
    Ok(out)
}

/// Advances the belief by one sampling period.
pub fn kf_predict(belief: &CurrentBelief, model: &StateSpaceModel) -> CurrentBelief {
    let n = belief.len();
    let f = DMatrix::from_column_slice(2, 2, model.f.as_slice());
    let q = DMatrix::from_column_slice(2, 2, model.q.as_slice());
    let big_f = DMatrix::<f64>::identity(n, n).kronecker(&f);
    let k = rbf_gram(&belief.points, &belief.points, &model.spatial);
    let mut out = CurrentBelief {
        time: belief.time + model.ts,
        points: belief.points.clone(),
        mean: &big_f * &belief.mean,
        cov: &big_f * &belief.cov * big_f.transpose() + k.kronecker(&q),
    };
    out.symmetrize();
    out
}

/// Kalman update with `z` holding one observation per row and one axis
/// per column. Uses the Joseph form.
pub fn kf_update(belief: &CurrentBelief, map: &GpMeasurementMap, z: &DMatrix<f64>) -> Result<CurrentBelief, TrackerError> {
    let n = belief.len();
    let m = map.h.nrows();
    if map.h.ncols() != n || map.r.shape() != (m, m) || z.shape() != (m, 2) {
        return Err(TrackerError::Dimension(format!(
            "map {}x{}, noise {:?}, z {:?} for {n} points",
            map.h.nrows(),
            map.h.ncols(),
            map.r.shape(),
            z.shape()
        )));
    }
    if m == 0 {
        return Ok(belief.clone());
    }
    let sel = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    let h = map.h.kronecker(&sel);
    let ph = &belief.cov * h.transpose();
    let mut s = &h * &ph + &map.r;
    s = (&s + s.transpose()) * 0.5;
    let chol = s.cholesky().ok_or(TrackerError::InnovationNotPd)?;
    let gain = chol.solve(&ph.transpose()).transpose();
    let innovation = z - &h * &belief.mean;
    let ikh = DMatrix::identity(2 * n, 2 * n) - &gain * &h;
    let mut out = CurrentBelief {
        time: belief.time,
        points: belief.points.clone(),
        mean: &belief.mean + &gain * innovation,
        cov: &ikh * &belief.cov * ikh.transpose() + &gain * &map.r * gain.transpose(),
    };
    out.symmetrize();
    Ok(out)
}

/// Nearest tracked point for each measurement, or `None` beyond `gate`.
/// Ties go to the lowest index.
pub fn associate(measurements: &MeasurementSet, points: &[Vec2], gate: f64) -> Vec<Option<usize>> {
    measurements
        .points
        .iter()
        .map(|p| {
            let mut best: Option<(usize, f64)> = None;
            for (i, q) in points.iter().enumerate() {
                let d = (p - q).norm();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((i, d));
                }
            }
            best.filter(|&(_, d)| d <= gate).map(|(i, _)| i)
        })
        .collect()
}

/// One tracking step: move the belief to the index points (plus the
/// accepted measurement locations), predict, then fuse the measurements.
pub fn track_step(
    belief: &CurrentBelief,
    model: &StateSpaceModel,
    measurements: Option<&MeasurementSet>,
    index_points: &[Vec2],
    gate: f64,
) -> Result<CurrentBelief, TrackerError> {
    let mut tracked: Vec<Vec2> = Vec::with_capacity(index_points.len());
    for p in index_points {
        if !tracked.iter().any(|q| same_point(p, q)) {
            tracked.push(*p);
        }
    }
    let mut accepted: Vec<usize> = Vec::new();
    if let Some(ms) = measurements {
        for (k, a) in associate(ms, index_points, gate).iter().enumerate() {
            if a.is_some() {
                accepted.push(k);
                let p = ms.points[k];
                if !tracked.iter().any(|q| same_point(&p, q)) {
                    tracked.push(p);
                }
            }
        }
    }
    let moved = reproject(belief, &tracked, model)?;
    let predicted = kf_predict(&moved, model);
    let out = match measurements {
        Some(ms) if !accepted.is_empty() => {
            let obs: Vec<Vec2> = accepted.iter().map(|&k| ms.points[k]).collect();
            let map = measurement_map(&obs, &predicted.points, &model.spatial, model.temporal.variance(), ms.noise_variance)?;
            let z = DMatrix::from_fn(accepted.len(), 2, |r, c| ms.values[accepted[r]][c]);
            kf_update(&predicted, &map, &z)?
        }
        _ => predicted,
    };
    out.check_psd()?;
    Ok(out)
}
