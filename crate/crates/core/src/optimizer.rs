//! Nonlinear least squares over support states.
//!
//! Every factor touches one state or two consecutive states, so the normal
//! equations are block tridiagonal and are factored with a block Cholesky
//! sweep instead of a general sparse solver.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::{CurrentFactorParams, FactorError, FactorKind, FactorSpec, ObstacleFactorParams};
use crate::geometry::{SignedDistanceField, Vec2};
use crate::gp_prior::{GpError, GpPriorModel, SupportState, Trajectory};

#[derive(Debug, Error)]
pub enum OptimizeError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("factor {index} ({kind}) produced a non-finite residual")]
    NonFiniteResidual { index: usize, kind: &'static str },
    #[error("optimizer diverged at iteration {iteration}")]
    Diverged { iteration: usize, last_good: Box<Trajectory> },
    #[error("invalid settings: {0}")]
    InvalidSettings(String),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Gp(#[from] GpError),
}

/// Factors over a trajectory of `n_states` support states.
#[derive(Debug, Clone)]
pub struct FactorGraphProblem {
    factors: Vec<FactorSpec>,
    n_states: usize,
}

impl FactorGraphProblem {
    pub fn new(factors: Vec<FactorSpec>, n_states: usize) -> Result<Self, OptimizeError> {
        for (k, f) in factors.iter().enumerate() {
            let keys = f.keys();
            if keys.iter().any(|&i| i >= n_states) {
                return Err(OptimizeError::InvalidProblem(format!(
                    "factor {k} ({}) references state {:?} of {n_states}",
                    f.name(),
                    keys
                )));
            }
            if keys.len() == 2 && keys[1] != keys[0] + 1 {
                return Err(OptimizeError::InvalidProblem(format!("factor {k} links non-adjacent states")));
            }
        }
        let anchored = factors
            .iter()
            .any(|f| matches!(f.kind, FactorKind::Prior { index: 0, .. }));
        if !anchored {
            return Err(OptimizeError::InvalidProblem("no prior factor on the start state".into()));
        }
        Ok(Self { factors, n_states })
    }

    pub fn factors(&self) -> &[FactorSpec] {
        &self.factors
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn check(&self, traj: &Trajectory) -> Result<(), OptimizeError> {
        if traj.len() != self.n_states {
            return Err(OptimizeError::InvalidProblem(format!(
                "trajectory has {} states, problem expects {}",
                traj.len(),
                self.n_states
            )));
        }
        Ok(())
    }
}

/// `½ Σ_f ‖Σ_f^{-1/2} r_f‖²`.
pub fn total_cost(problem: &FactorGraphProblem, traj: &Trajectory) -> Result<f64, OptimizeError> {
    problem.check(traj)?;
    let states = traj.states();
    let mut cost = 0.0;
    for (k, f) in problem.factors.iter().enumerate() {
        let w = f.noise.whiten(&f.residual(states));
        if w.iter().any(|v| !v.is_finite()) {
            return Err(OptimizeError::NonFiniteResidual { index: k, kind: f.name() });
        }
        cost += 0.5 * w.norm_squared();
    }
    Ok(cost)
}

/// One whitened block row: `b = -Σ^{-1/2} r` and the whitened Jacobian
/// blocks at the attached states.
#[derive(Debug, Clone)]
pub struct BlockRow {
    pub rhs: DVector<f64>,
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

/// Sparse whitened linear system `A δ ≈ b`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub rows: Vec<BlockRow>,
    pub n_states: usize,
}

pub fn linearize(problem: &FactorGraphProblem, traj: &Trajectory) -> Result<LinearSystem, OptimizeError> {
    problem.check(traj)?;
    let states = traj.states();
    let mut rows = Vec::with_capacity(problem.factors.len());
    for (k, f) in problem.factors.iter().enumerate() {
        let lin = f.linearize(states);
        let rhs = -f.noise.whiten(&lin.residual);
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(OptimizeError::NonFiniteResidual { index: k, kind: f.name() });
        }
        let blocks = lin
            .blocks
            .into_iter()
            .map(|(i, j)| (i, f.noise.whiten_jacobian(&j)))
            .collect();
        rows.push(BlockRow { rhs, blocks });
    }
    Ok(LinearSystem {
        rows,
        n_states: problem.n_states,
    })
}

impl LinearSystem {
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m: usize = self.rows.iter().map(|r| r.rhs.len()).sum();
        let mut a = DMatrix::zeros(m, 4 * self.n_states);
        let mut b = DVector::zeros(m);
        let mut off = 0;
        for row in &self.rows {
            let d = row.rhs.len();
            b.rows_mut(off, d).copy_from(&row.rhs);
            for (i, j) in &row.blocks {
                let mut view = a.view_mut((off, 4 * i), (d, 4));
                view += j;
            }
            off += d;
        }
        (a, b)
    }

    /// `AᵀA` and `Aᵀb` in block-tridiagonal form.
    pub fn normal_equations(&self) -> BlockTridiagonal {
        let n = self.n_states;
        let mut diag = vec![Matrix4::zeros(); n];
        let mut lower = vec![Matrix4::zeros(); n.saturating_sub(1)];
        let mut rhs = vec![Vector4::zeros(); n];
        for row in &self.rows {
            for (i, ji) in &row.blocks {
                let jt_b = ji.transpose() * &row.rhs;
                rhs[*i] += Vector4::from_column_slice(jt_b.as_slice());
                for (j, jj) in &row.blocks {
                    let block = ji.transpose() * jj;
                    let block = Matrix4::from_column_slice(block.as_slice());
                    if i == j {
                        diag[*i] += block;
                    } else if *i == j + 1 {
                        lower[*j] += block;
                    }
                }
            }
        }
        BlockTridiagonal { diag, lower, rhs }
    }
}

/// Symmetric block-tridiagonal system; `lower[i]` is the block at
/// `(i + 1, i)`.
#[derive(Debug, Clone)]
pub struct BlockTridiagonal {
    pub diag: Vec<Matrix4<f64>>,
    pub lower: Vec<Matrix4<f64>>,
    pub rhs: Vec<Vector4<f64>>,
}

impl BlockTridiagonal {
    /// Solves `(H + λ D) δ = g` with `D = diag(H)` floored at `1e-9`.
    /// Returns `None` when the damped matrix is not positive definite.
    pub fn solve(&self, lambda: f64) -> Option<Vec<Vector4<f64>>> {
        let n = self.diag.len();
        let mut l_diag: Vec<Matrix4<f64>> = Vec::with_capacity(n);
        let mut l_low: Vec<Matrix4<f64>> = Vec::with_capacity(n.saturating_sub(1));
        for i in 0..n {
            let mut d = self.diag[i];
            for k in 0..4 {
                d[(k, k)] += lambda * self.diag[i][(k, k)].max(1e-9);
            }
            if i > 0 {
                let c: &Matrix4<f64> = &l_low[i - 1];
                d -= c * c.transpose();
            }
            let l = d.cholesky()?.l();
            if i + 1 < n {
                // L_{i+1,i} = H_{i+1,i} L_ii^{-T}
                let c = l.solve_lower_triangular(&self.lower[i].transpose())?.transpose();
                l_low.push(c);
            }
            l_diag.push(l);
        }
        let mut y: Vec<Vector4<f64>> = Vec::with_capacity(n);
        for i in 0..n {
            let mut r = self.rhs[i];
            if i > 0 {
                r -= l_low[i - 1] * y[i - 1];
            }
            y.push(l_diag[i].solve_lower_triangular(&r)?);
        }
        let mut x = vec![Vector4::zeros(); n];
        for i in (0..n).rev() {
            let mut r = y[i];
            if i + 1 < n {
                r -= l_low[i].transpose() * x[i + 1];
            }
            x[i] = l_diag[i].transpose().solve_upper_triangular(&r)?;
        }
        Some(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSettings {
    pub max_iters: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub lm_lambda0: f64,
    pub lm_scaling: f64,
    /// Damping above this value ends the solve as stalled.
    pub lm_lambda_max: f64,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            max_iters: 100,
            abs_tol: 1e-8,
            rel_tol: 1e-6,
            lm_lambda0: 1e-4,
            lm_scaling: 10.0,
            lm_lambda_max: 1e10,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<(), OptimizeError> {
        let ok = self.max_iters > 0
            && self.abs_tol > 0.0
            && self.rel_tol > 0.0
            && self.lm_lambda0 > 0.0
            && self.lm_scaling > 1.0
            && self.lm_lambda_max > self.lm_lambda0;
        if ok {
            Ok(())
        } else {
            Err(OptimizeError::InvalidSettings(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    LmStall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Cost of the initial and of every accepted iterate.
    pub cost_trace: Vec<f64>,
    pub termination: Termination,
    pub final_lambda: f64,
}

impl SolveReport {
    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap_or(&f64::NAN)
    }
}

pub fn optimize(
    problem: &FactorGraphProblem,
    initial: &Trajectory,
    settings: &OptimizerSettings,
) -> Result<(Trajectory, SolveReport), OptimizeError> {
    settings.validate()?;
    let mut x = initial.clone();
    let mut cost = total_cost(problem, &x)?;
    let mut trace = vec![cost];
    let mut lambda = settings.lm_lambda0;
    let mut iterations = 0;
    let finish = |x: Trajectory, trace: Vec<f64>, iterations, termination, lambda| {
        Ok((
            x,
            SolveReport {
                iterations,
                cost_trace: trace,
                termination,
                final_lambda: lambda,
            },
        ))
    };

    while iterations < settings.max_iters {
        let normal = linearize(problem, &x)?.normal_equations();
        loop {
            if iterations >= settings.max_iters {
                return finish(x, trace, iterations, Termination::MaxIters, lambda);
            }
            iterations += 1;
            let Some(delta) = normal.solve(lambda) else {
                lambda *= settings.lm_scaling;
                if lambda > settings.lm_lambda_max {
                    return finish(x, trace, iterations, Termination::LmStall, lambda);
                }
                continue;
            };
            let step: Vec<f64> = delta.iter().flat_map(|d| d.iter().copied()).collect();
            if step.iter().any(|v| !v.is_finite()) {
                return Err(OptimizeError::Diverged {
                    iteration: iterations,
                    last_good: Box::new(x),
                });
            }
            let step_norm = step.iter().map(|v| v * v).sum::<f64>().sqrt();
            if step_norm < settings.abs_tol {
                return finish(x, trace, iterations, Termination::Converged, lambda);
            }
            let flat: Vec<f64> = x.flat().iter().zip(&step).map(|(a, b)| a + b).collect();
            let candidate = x.with_flat(&flat);
            let new_cost = match total_cost(problem, &candidate) {
                Ok(c) if c.is_finite() => c,
                _ => {
                    return Err(OptimizeError::Diverged {
                        iteration: iterations,
                        last_good: Box::new(x),
                    })
                }
            };
            if new_cost < cost {
                let rel = (cost - new_cost) / cost;
                x = candidate;
                cost = new_cost;
                trace.push(cost);
                lambda = (lambda / settings.lm_scaling).max(1e-12);
                if rel < settings.rel_tol {
                    return finish(x, trace, iterations, Termination::Converged, lambda);
                }
                break;
            }
            lambda *= settings.lm_scaling;
            if lambda > settings.lm_lambda_max {
                return finish(x, trace, iterations, Termination::LmStall, lambda);
            }
        }
    }
    finish(x, trace, iterations, Termination::MaxIters, lambda)
}

/// Noise levels and thresholds for assembling a planning graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSettings {
    /// Isotropic power-spectral density of the constant-velocity prior.
    pub gp_qc: f64,
    pub start_sigma: f64,
    pub start_velocity_sigma: f64,
    pub goal_sigma: f64,
    /// Applied to the goal velocity only when the goal specifies one.
    pub goal_velocity_sigma: f64,
    pub obstacle_epsilon: f64,
    pub obstacle_sigma: f64,
    /// Interpolated obstacle checks strictly between consecutive supports.
    pub interp_per_interval: usize,
    pub current_epsilon: f64,
    pub current_sigma: f64,
}

impl Default for GraphSettings {
    fn default() -> Self {
        Self {
            gp_qc: 1e-4,
            start_sigma: 1e-3,
            start_velocity_sigma: 1e-3,
            goal_sigma: 1e-3,
            goal_velocity_sigma: 1e-3,
            obstacle_epsilon: 5.0,
            obstacle_sigma: 0.05,
            interp_per_interval: 4,
            current_epsilon: 0.02,
            current_sigma: 0.05,
        }
    }
}

/// Standard deviation used for an unconstrained goal velocity.
const FREE_VELOCITY_SIGMA: f64 = 1e3;

/// Inputs that change between replanning steps.
#[derive(Debug, Clone)]
pub struct GraphInputs<'a> {
    pub n_states: usize,
    pub dt: f64,
    pub start: SupportState,
    pub goal: SupportState,
    /// Pins the start velocity; otherwise it is left nearly free.
    pub start_has_velocity: bool,
    pub goal_has_velocity: bool,
    pub sdf: Option<Arc<SignedDistanceField>>,
    /// Current estimate per support; `None` leaves the current factor out.
    pub currents: Option<&'a [Vec2]>,
}

pub fn build_problem(settings: &GraphSettings, inputs: &GraphInputs) -> Result<FactorGraphProblem, OptimizeError> {
    let n = inputs.n_states;
    if n < 2 {
        return Err(OptimizeError::InvalidProblem("need at least two support states".into()));
    }
    let model = GpPriorModel::isotropic(settings.gp_qc)?;
    let diag = |p: f64, v: f64| Matrix4::from_diagonal(&Vector4::new(p * p, p * p, v * v, v * v));
    let start_v = if inputs.start_has_velocity {
        settings.start_velocity_sigma
    } else {
        FREE_VELOCITY_SIGMA
    };
    let mut factors = vec![FactorSpec::prior(0, inputs.start, diag(settings.start_sigma, start_v))?];
    let goal_v = if inputs.goal_has_velocity {
        settings.goal_velocity_sigma
    } else {
        FREE_VELOCITY_SIGMA
    };
    factors.push(FactorSpec::prior(n - 1, inputs.goal, diag(settings.goal_sigma, goal_v))?);
    for i in 0..n - 1 {
        factors.push(FactorSpec::gp(i, &model, inputs.dt)?);
    }
    if let Some(sdf) = &inputs.sdf {
        let params = ObstacleFactorParams::new(settings.obstacle_epsilon)?;
        for i in 0..n {
            factors.push(FactorSpec::obstacle(
                i,
                0.0,
                inputs.dt,
                &model,
                sdf.clone(),
                params,
                settings.obstacle_sigma,
            )?);
            if i + 1 == n {
                break;
            }
            for k in 1..=settings.interp_per_interval {
                let tau = inputs.dt * k as f64 / (settings.interp_per_interval + 1) as f64;
                factors.push(FactorSpec::obstacle(
                    i,
                    tau,
                    inputs.dt,
                    &model,
                    sdf.clone(),
                    params,
                    settings.obstacle_sigma,
                )?);
            }
        }
    }
    if let Some(vc) = inputs.currents {
        if vc.len() != n {
            return Err(OptimizeError::InvalidProblem(format!(
                "{} current estimates for {n} supports",
                vc.len()
            )));
        }
        let params = CurrentFactorParams::new(settings.current_epsilon)?;
        for (i, v) in vc.iter().enumerate().take(n - 1) {
            factors.push(FactorSpec::current(i, *v, params, settings.current_sigma)?);
        }
    }
    FactorGraphProblem::new(factors, n)
}
