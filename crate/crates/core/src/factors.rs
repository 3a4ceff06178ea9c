//! Residuals and Jacobians of the non-GP factors, plus the factor
//! specifications the optimizer assembles.
//!
//! Hinge factors return zero inside their dead zone; exactly at a kink the
//! zero sub-gradient is used.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x4, Matrix4, RowVector4, Vector2, Vector4};
use thiserror::Error;

use crate::geometry::{SignedDistanceField, Vec2};
use crate::gp_prior::{interpolation_weights, process_noise, transition_matrix, GpError, GpPriorModel, SupportState};

/// Below this speed (m/s) the heading is undefined and the vehicle is
/// treated as fully broadside to the current.
pub const STILL_SPEED: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FactorError {
    #[error("noise covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("noise covariance must be square with dimension {expected}, got {rows}x{cols}")]
    BadNoiseShape { expected: usize, rows: usize, cols: usize },
    #[error("factor threshold must be non-negative, got {0}")]
    NegativeThreshold(f64),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Dead-zone threshold of the current factor (m/s). The alignment gain on
/// `|sin α|` is fixed at one; any scale is carried by the noise model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurrentFactorParams {
    pub epsilon: f64,
}

impl CurrentFactorParams {
    pub fn new(epsilon: f64) -> Result<Self, FactorError> {
        if !(epsilon >= 0.0) {
            return Err(FactorError::NegativeThreshold(epsilon));
        }
        Ok(Self { epsilon })
    }
}

/// Safety margin (meters) of the obstacle hinge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleFactorParams {
    pub epsilon: f64,
}

impl ObstacleFactorParams {
    pub fn new(epsilon: f64) -> Result<Self, FactorError> {
        if !(epsilon >= 0.0) {
            return Err(FactorError::NegativeThreshold(epsilon));
        }
        Ok(Self { epsilon })
    }
}

pub fn prior_residual(state: &SupportState, anchor: &SupportState) -> Vector4<f64> {
    state.vector() - anchor.vector()
}

/// `max(0, ε - d(pos))` with `d` the interpolated signed distance.
pub fn obstacle_residual(state: &SupportState, sdf: &SignedDistanceField, params: &ObstacleFactorParams) -> f64 {
    obstacle_hinge(&state.position, sdf, params).0
}

/// Hinge value and its gradient with respect to position.
pub fn obstacle_hinge(pos: &Vec2, sdf: &SignedDistanceField, params: &ObstacleFactorParams) -> (f64, Vec2) {
    let (d, grad) = sdf.distance_and_gradient(pos);
    if d >= params.epsilon {
        (0.0, Vec2::zeros())
    } else {
        (params.epsilon - d, -grad)
    }
}

/// `|sin α|` between the vehicle velocity and the current, with the
/// still-vehicle guard (1) and the no-current convention (0).
pub fn exposure(v_a: &Vec2, vc: &Vec2) -> f64 {
    exposure_and_gradient(v_a, vc).0
}

fn exposure_and_gradient(v_a: &Vec2, vc: &Vec2) -> (f64, Vec2) {
    let na = v_a.norm();
    let nc = vc.norm();
    if nc < STILL_SPEED {
        return (0.0, Vec2::zeros());
    }
    if na < STILL_SPEED {
        return (1.0, Vec2::zeros());
    }
    let cross = v_a.x * vc.y - v_a.y * vc.x;
    let s = cross.abs() / (na * nc);
    let sign = if cross > 0.0 {
        1.0
    } else if cross < 0.0 {
        -1.0
    } else {
        0.0
    };
    let grad = Vec2::new(vc.y, -vc.x) * (sign / (na * nc)) - v_a * (cross.abs() / (na.powi(3) * nc));
    (s, grad)
}

/// Current deviation `d = (v_a - v_c) |sin α|`, `v_a` being the velocity
/// stored at `xi`.
pub fn current_deviation(xi: &SupportState, _xj: &SupportState, vc: &Vec2) -> Vec2 {
    let v_a = xi.velocity;
    (v_a - vc) * exposure(&v_a, vc)
}

/// Deviation and its Jacobian with respect to `v_a`, `v_c` held fixed.
pub fn current_deviation_jacobian(v_a: &Vec2, vc: &Vec2) -> (Vec2, Matrix2<f64>) {
    let (s, ds) = exposure_and_gradient(v_a, vc);
    let diff = v_a - vc;
    (diff * s, Matrix2::identity() * s + diff * ds.transpose())
}

/// Vector hinge: zero while `‖d‖ <= ε`, otherwise `-d (1 - ε / ‖d‖)`.
pub fn current_residual(d: &Vec2, params: &CurrentFactorParams) -> Vec2 {
    current_residual_jacobian(d, params).0
}

pub fn current_residual_jacobian(d: &Vec2, params: &CurrentFactorParams) -> (Vec2, Matrix2<f64>) {
    let n = d.norm();
    if n <= params.epsilon || n == 0.0 {
        return (Vec2::zeros(), Matrix2::zeros());
    }
    let eps = params.epsilon;
    let unit = d / n;
    let r = -d + unit * eps;
    let jac = -Matrix2::identity() + (Matrix2::identity() - unit * unit.transpose()) * (eps / n);
    (r, jac)
}

/// Residual of the current factor and its Jacobians with respect to the
/// stacked states `xi` and `xj`. Only the velocity of `xi` enters.
pub fn current_factor_jacobians(
    xi: &SupportState,
    _xj: &SupportState,
    vc: &Vec2,
    params: &CurrentFactorParams,
) -> (Vec2, Matrix2x4<f64>, Matrix2x4<f64>) {
    let (d, dd) = current_deviation_jacobian(&xi.velocity, vc);
    let (r, dr) = current_residual_jacobian(&d, params);
    let mut ji = Matrix2x4::zeros();
    ji.fixed_view_mut::<2, 2>(0, 2).copy_from(&(dr * dd));
    (r, ji, Matrix2x4::zeros())
}

/// Gaussian noise model stored as the whitening matrix `L⁻¹` for `Σ = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
    whitener: DMatrix<f64>,
}

impl NoiseModel {
    pub fn from_covariance(covariance: DMatrix<f64>) -> Result<Self, FactorError> {
        if covariance.nrows() != covariance.ncols() || covariance.nrows() == 0 {
            return Err(FactorError::BadNoiseShape {
                expected: covariance.nrows(),
                rows: covariance.nrows(),
                cols: covariance.ncols(),
            });
        }
        if covariance.iter().any(|v| !v.is_finite()) {
            return Err(FactorError::NotPositiveDefinite);
        }
        let chol = covariance.clone().cholesky().ok_or(FactorError::NotPositiveDefinite)?;
        let n = covariance.nrows();
        let whitener = chol
            .l()
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(FactorError::NotPositiveDefinite)?;
        Ok(Self { covariance, whitener })
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Result<Self, FactorError> {
        Self::from_covariance(DMatrix::identity(dim, dim) * (sigma * sigma))
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn whiten(&self, r: &DVector<f64>) -> DVector<f64> {
        &self.whitener * r
    }

    pub fn whiten_jacobian(&self, j: &DMatrix<f64>) -> DMatrix<f64> {
        &self.whitener * j
    }
}

#[derive(Debug, Clone)]
pub enum FactorKind {
    /// Unary prior pulling state `index` toward `anchor`.
    Prior { index: usize, anchor: SupportState },
    /// GP dynamics between `index` and `index + 1`.
    Gp { index: usize },
    /// Obstacle hinge at `tau` seconds after support `index`. With `tau > 0`
    /// the point is the GP interpolation between `index` and `index + 1`,
    /// and `weights` hold `(W_i, W_j)`.
    Obstacle {
        index: usize,
        tau: f64,
        weights: Option<Box<(Matrix4<f64>, Matrix4<f64>)>>,
        sdf: Arc<SignedDistanceField>,
        params: ObstacleFactorParams,
    },
    /// Current exposure on the segment from `index` to `index + 1` with a
    /// current estimate held fixed.
    Current {
        index: usize,
        vc: Vec2,
        params: CurrentFactorParams,
    },
}

/// A factor together with its noise model.
#[derive(Debug, Clone)]
pub struct FactorSpec {
    pub kind: FactorKind,
    pub noise: NoiseModel,
}

/// Raw (unwhitened) residual and per-state Jacobian blocks.
#[derive(Debug, Clone)]
pub struct FactorLinearization {
    pub residual: DVector<f64>,
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

impl FactorSpec {
    pub fn prior(index: usize, anchor: SupportState, covariance: Matrix4<f64>) -> Result<Self, FactorError> {
        Ok(Self {
            kind: FactorKind::Prior { index, anchor },
            noise: NoiseModel::from_covariance(DMatrix::from_column_slice(4, 4, covariance.as_slice()))?,
        })
    }

    pub fn gp(index: usize, model: &GpPriorModel, dt: f64) -> Result<Self, FactorError> {
        let q = process_noise(dt, model.qc())?;
        Ok(Self {
            kind: FactorKind::Gp { index },
            noise: NoiseModel::from_covariance(DMatrix::from_column_slice(4, 4, q.as_slice()))?,
        })
    }

    pub fn obstacle(
        index: usize,
        tau: f64,
        dt: f64,
        model: &GpPriorModel,
        sdf: Arc<SignedDistanceField>,
        params: ObstacleFactorParams,
        sigma: f64,
    ) -> Result<Self, FactorError> {
        let weights = if tau > 0.0 {
            Some(Box::new(interpolation_weights(dt, tau, model.qc())?))
        } else {
            None
        };
        Ok(Self {
            kind: FactorKind::Obstacle {
                index,
                tau,
                weights,
                sdf,
                params,
            },
            noise: NoiseModel::isotropic(1, sigma)?,
        })
    }

    pub fn current(index: usize, vc: Vec2, params: CurrentFactorParams, sigma: f64) -> Result<Self, FactorError> {
        Ok(Self {
            kind: FactorKind::Current { index, vc, params },
            noise: NoiseModel::isotropic(2, sigma)?,
        })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FactorKind::Prior { .. } => "prior",
            FactorKind::Gp { .. } => "gp",
            FactorKind::Obstacle { .. } => "obstacle",
            FactorKind::Current { .. } => "current",
        }
    }

    /// States this factor touches.
    pub fn keys(&self) -> Vec<usize> {
        match &self.kind {
            FactorKind::Prior { index, .. } => vec![*index],
            FactorKind::Gp { index } => vec![*index, index + 1],
            FactorKind::Obstacle { index, weights, .. } => {
                if weights.is_some() {
                    vec![*index, index + 1]
                } else {
                    vec![*index]
                }
            }
            FactorKind::Current { index, .. } => vec![*index],
        }
    }

    pub fn dim(&self) -> usize {
        self.noise.dim()
    }

    /// Raw residual only.
    pub fn residual(&self, states: &[SupportState]) -> DVector<f64> {
        self.linearize(states).residual
    }

    pub fn linearize(&self, states: &[SupportState]) -> FactorLinearization {
        match &self.kind {
            FactorKind::Prior { index, anchor } => FactorLinearization {
                residual: DVector::from_column_slice(prior_residual(&states[*index], anchor).as_slice()),
                blocks: vec![(*index, DMatrix::identity(4, 4))],
            },
            FactorKind::Gp { index } => {
                let (xi, xj) = (&states[*index], &states[index + 1]);
                let phi = transition_matrix(xj.time - xi.time);
                let r = xj.vector() - phi * xi.vector();
                FactorLinearization {
                    residual: DVector::from_column_slice(r.as_slice()),
                    blocks: vec![
                        (*index, DMatrix::from_column_slice(4, 4, (-phi).as_slice())),
                        (index + 1, DMatrix::identity(4, 4)),
                    ],
                }
            }
            FactorKind::Obstacle {
                index,
                weights,
                sdf,
                params,
                ..
            } => match weights {
                None => {
                    let (h, g) = obstacle_hinge(&states[*index].position, sdf, params);
                    let row = RowVector4::new(g.x, g.y, 0.0, 0.0);
                    FactorLinearization {
                        residual: DVector::from_element(1, h),
                        blocks: vec![(*index, DMatrix::from_row_slice(1, 4, row.as_slice()))],
                    }
                }
                Some(w) => {
                    let (wi, wj) = &**w;
                    let x = wi * states[*index].vector() + wj * states[index + 1].vector();
                    let (h, g) = obstacle_hinge(&Vec2::new(x[0], x[1]), sdf, params);
                    let gp = RowVector4::new(g.x, g.y, 0.0, 0.0);
                    let (ji, jj) = (gp * wi, gp * wj);
                    FactorLinearization {
                        residual: DVector::from_element(1, h),
                        blocks: vec![
                            (*index, DMatrix::from_row_slice(1, 4, ji.transpose().as_slice())),
                            (index + 1, DMatrix::from_row_slice(1, 4, jj.transpose().as_slice())),
                        ],
                    }
                }
            },
            FactorKind::Current { index, vc, params } => {
                let (d, dd) = current_deviation_jacobian(&states[*index].velocity, vc);
                let (r, dr) = current_residual_jacobian(&d, params);
                let mut j = DMatrix::zeros(2, 4);
                j.view_mut((0, 2), (2, 2)).copy_from(&(dr * dd));
                FactorLinearization {
                    residual: DVector::from_column_slice(Vector2::new(r.x, r.y).as_slice()),
                    blocks: vec![(*index, j)],
                }
            }
        }
    }
}
