//! Constant-velocity Gaussian-process prior over planar trajectories.
//!
//! The prior is the white-noise-on-acceleration LTV-SDE `ẍ = w(t)`,
//! `w ~ GP(0, Qc δ(t - t'))`, with state `[px, py, vx, vy]`. Its transition
//! and process-noise matrices give the binary GP factors between consecutive
//! support states and the closed-form posterior-mean interpolation between
//! them.

use nalgebra::{Matrix2, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("time step must be non-negative, got {0}")]
    NegativeStep(f64),
    #[error("support times must increase (t_i = {0}, t_j = {1})")]
    NonIncreasingTimes(f64, f64),
    #[error("interpolation offset {tau} outside [0, {dt}]")]
    TauOutOfRange { tau: f64, dt: f64 },
    #[error("power-spectral density must be symmetric positive definite")]
    BadQc,
    #[error("process noise is singular for dt = {0}")]
    SingularNoise(f64),
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
}

/// Position and velocity at one support time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportState {
    pub time: f64,
    pub position: Vec2,
    pub velocity: Vec2,
}

impl SupportState {
    pub fn new(time: f64, position: Vec2, velocity: Vec2) -> Self {
        Self {
            time,
            position,
            velocity,
        }
    }

    pub fn vector(&self) -> Vector4<f64> {
        Vector4::new(self.position.x, self.position.y, self.velocity.x, self.velocity.y)
    }

    pub fn from_vector(time: f64, v: &Vector4<f64>) -> Self {
        Self::new(time, Vec2::new(v[0], v[1]), Vec2::new(v[2], v[3]))
    }

    pub fn is_finite(&self) -> bool {
        self.time.is_finite() && self.vector().iter().all(|v| v.is_finite())
    }
}

/// Support states at uniformly spaced times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<SupportState>,
}

impl Trajectory {
    pub fn new(states: Vec<SupportState>) -> Result<Self, GpError> {
        if states.len() < 2 {
            return Err(GpError::InvalidTrajectory(format!(
                "need at least 2 states, got {}",
                states.len()
            )));
        }
        if let Some(s) = states.iter().find(|s| !s.is_finite()) {
            return Err(GpError::InvalidTrajectory(format!("non-finite state at t = {}", s.time)));
        }
        let dt = states[1].time - states[0].time;
        if !(dt > 0.0) {
            return Err(GpError::NonIncreasingTimes(states[0].time, states[1].time));
        }
        for w in states.windows(2) {
            let step = w[1].time - w[0].time;
            if !(step > 0.0) {
                return Err(GpError::NonIncreasingTimes(w[0].time, w[1].time));
            }
            if (step - dt).abs() > 1e-9 * dt.max(1.0) {
                return Err(GpError::InvalidTrajectory(format!(
                    "support times must be uniformly spaced ({step} vs {dt})"
                )));
            }
        }
        Ok(Self { states })
    }

    /// Uniform time grid from `start_time` with step `dt`, filled from
    /// position/velocity pairs.
    pub fn from_parts(start_time: f64, dt: f64, parts: &[(Vec2, Vec2)]) -> Result<Self, GpError> {
        Self::new(
            parts
                .iter()
                .enumerate()
                .map(|(k, (p, v))| SupportState::new(start_time + dt * k as f64, *p, *v))
                .collect(),
        )
    }

    pub fn states(&self) -> &[SupportState] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.states[1].time - self.states[0].time
    }

    pub fn start(&self) -> &SupportState {
        &self.states[0]
    }

    pub fn end(&self) -> &SupportState {
        &self.states[self.states.len() - 1]
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.states.iter().map(|s| s.position).collect()
    }

    /// Stacked `[px, py, vx, vy]` of every state.
    pub fn flat(&self) -> Vec<f64> {
        self.states.iter().flat_map(|s| s.vector().iter().copied().collect::<Vec<_>>()).collect()
    }

    /// Same times, new stacked values.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let states = self
            .states
            .iter()
            .enumerate()
            .map(|(k, s)| SupportState::from_vector(s.time, &Vector4::from_column_slice(&flat[4 * k..4 * k + 4])))
            .collect();
        Self { states }
    }

    /// Drops the first `n` states (the vehicle has moved past them).
    pub fn advanced(&self, n: usize) -> Result<Self, GpError> {
        Self::new(self.states[n.min(self.states.len())..].to_vec())
    }
}

/// Constant-velocity GP prior with power-spectral density `Qc`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpPriorModel {
    qc: Matrix2<f64>,
}

impl GpPriorModel {
    pub fn new(qc: Matrix2<f64>) -> Result<Self, GpError> {
        let symmetric = (qc - qc.transpose()).amax() <= 1e-12 * qc.amax().max(1.0);
        if !symmetric || qc.cholesky().is_none() || qc.iter().any(|v| !v.is_finite()) {
            return Err(GpError::BadQc);
        }
        Ok(Self { qc })
    }

    /// Isotropic `Qc = q I`.
    pub fn isotropic(q: f64) -> Result<Self, GpError> {
        Self::new(Matrix2::identity() * q)
    }

    pub fn qc(&self) -> &Matrix2<f64> {
        &self.qc
    }

    pub fn process_noise(&self, dt: f64) -> Result<Matrix4<f64>, GpError> {
        process_noise(dt, &self.qc)
    }

    /// Constant-velocity propagation of `start` over `n` supports spaced `dt`:
    /// the prior mean with zero control input.
    pub fn mean_trajectory(&self, start: &SupportState, dt: f64, n: usize) -> Result<Trajectory, GpError> {
        let x0 = start.vector();
        Trajectory::new(
            (0..n)
                .map(|k| {
                    let tau = dt * k as f64;
                    SupportState::from_vector(start.time + tau, &(transition_matrix(tau) * x0))
                })
                .collect(),
        )
    }

    /// Residual `x_j - Φ(Δt) x_i` of the binary GP factor. Its Jacobians are
    /// `-Φ(Δt)` for `x_i` and the identity for `x_j`.
    pub fn factor_residual(&self, xi: &SupportState, xj: &SupportState) -> Result<Vector4<f64>, GpError> {
        gp_factor_residual(xi, xj)
    }

    pub fn interpolate(&self, xi: &SupportState, xj: &SupportState, tau: f64) -> Result<SupportState, GpError> {
        interpolate_state(xi, xj, tau, self)
    }
}

/// `Φ(dt) = [[I, dt I], [0, I]]`.
pub fn transition_matrix(dt: f64) -> Matrix4<f64> {
    let mut phi = Matrix4::identity();
    phi[(0, 2)] = dt;
    phi[(1, 3)] = dt;
    phi
}

/// `Q(dt) = [[dt³/3 Qc, dt²/2 Qc], [dt²/2 Qc, dt Qc]]`.
pub fn process_noise(dt: f64, qc: &Matrix2<f64>) -> Result<Matrix4<f64>, GpError> {
    if !(dt >= 0.0) {
        return Err(GpError::NegativeStep(dt));
    }
    let mut q = Matrix4::zeros();
    let (a, b, c) = (dt.powi(3) / 3.0, dt * dt / 2.0, dt);
    q.fixed_view_mut::<2, 2>(0, 0).copy_from(&(qc * a));
    q.fixed_view_mut::<2, 2>(0, 2).copy_from(&(qc * b));
    q.fixed_view_mut::<2, 2>(2, 0).copy_from(&(qc * b));
    q.fixed_view_mut::<2, 2>(2, 2).copy_from(&(qc * c));
    Ok(q)
}

pub fn gp_factor_residual(xi: &SupportState, xj: &SupportState) -> Result<Vector4<f64>, GpError> {
    let dt = xj.time - xi.time;
    if !(dt > 0.0) {
        return Err(GpError::NonIncreasingTimes(xi.time, xj.time));
    }
    Ok(xj.vector() - transition_matrix(dt) * xi.vector())
}

/// Matrices `(W_i, W_j)` with `x(t_i + tau) = W_i x_i + W_j x_j`, where
/// `W_j = Λ(tau) = Q(tau) Φ(Δt - tau)ᵀ Q(Δt)⁻¹` and
/// `W_i = Φ(tau) - Λ(tau) Φ(Δt)`.
pub fn interpolation_weights(dt: f64, tau: f64, qc: &Matrix2<f64>) -> Result<(Matrix4<f64>, Matrix4<f64>), GpError> {
    if !(dt > 0.0) {
        return Err(GpError::NegativeStep(dt));
    }
    if !(0.0..=dt).contains(&tau) {
        return Err(GpError::TauOutOfRange { tau, dt });
    }
    let q_dt = process_noise(dt, qc)?;
    let q_tau = process_noise(tau, qc)?;
    let chol = q_dt.cholesky().ok_or(GpError::SingularNoise(dt))?;
    // Λ = Q(tau) Φ(Δt - tau)ᵀ Q(Δt)⁻¹, computed as (Q(Δt)⁻¹ Φ(Δt - tau) Q(tau))ᵀ
    let lambda = chol.solve(&(transition_matrix(dt - tau) * q_tau)).transpose();
    let wi = transition_matrix(tau) - lambda * transition_matrix(dt);
    Ok((wi, lambda))
}

/// Posterior-mean state between two supports.
pub fn interpolate_state(
    xi: &SupportState,
    xj: &SupportState,
    tau: f64,
    model: &GpPriorModel,
) -> Result<SupportState, GpError> {
    let dt = xj.time - xi.time;
    if !(dt > 0.0) {
        return Err(GpError::NonIncreasingTimes(xi.time, xj.time));
    }
    if tau == 0.0 {
        return Ok(*xi);
    }
    if tau == dt {
        return Ok(*xj);
    }
    let (wi, wj) = interpolation_weights(dt, tau, &model.qc)?;
    Ok(SupportState::from_vector(xi.time + tau, &(wi * xi.vector() + wj * xj.vector())))
}
