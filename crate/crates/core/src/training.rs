//! Kernel hyperparameter fitting and the model file.
//!
//! Temporal (Matérn-3/2 over time) and spatial (RBF over position) kernels
//! are fitted separately on the same targets by maximizing the log marginal
//! likelihood. Both current axes are treated as independent draws sharing
//! one set of hyperparameters.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{MeasurementSet, Vec2};
use crate::tracker::{build_state_space, matern32, rbf, KernelHyperparams, StateSpaceModel, TrackerError};

/// Fits use at most this many samples, taken at an even stride.
pub const MAX_TRAINING_POINTS: usize = 400;
const STARTS: usize = 5;
/// Smallest signal scale used when the targets carry no variance.
const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("training set needs at least two samples, got {0}")]
    TooFewSamples(usize),
    #[error("inputs and targets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("Gram matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid model file: {0}")]
    BadModel(String),
    #[error(transparent)]
    Tracker(#[from] TrackerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// Matérn-3/2 over time.
    Temporal,
    /// RBF over position.
    Spatial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub positions: Vec<Vec2>,
    pub times: Vec<f64>,
    /// One target vector per axis, each aligned with the inputs.
    pub targets: Vec<Vec<f64>>,
}

impl TrainingSet {
    pub fn new(positions: Vec<Vec2>, times: Vec<f64>, targets: Vec<Vec<f64>>) -> Result<Self, TrainingError> {
        if positions.len() != times.len() {
            return Err(TrainingError::LengthMismatch(positions.len(), times.len()));
        }
        for t in &targets {
            if t.len() != times.len() {
                return Err(TrainingError::LengthMismatch(times.len(), t.len()));
            }
        }
        if times.len() < 2 || targets.is_empty() {
            return Err(TrainingError::TooFewSamples(times.len()));
        }
        Ok(Self {
            positions,
            times,
            targets,
        })
    }

    /// Both velocity components of every reading.
    pub fn from_measurements(sets: &[MeasurementSet]) -> Result<Self, TrainingError> {
        let mut positions = Vec::new();
        let mut times = Vec::new();
        let mut tx = Vec::new();
        let mut ty = Vec::new();
        for s in sets {
            for (p, v) in s.points.iter().zip(&s.values) {
                positions.push(*p);
                times.push(s.time);
                tx.push(v.x);
                ty.push(v.y);
            }
        }
        Self::new(positions, times, vec![tx, ty])
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Even-stride subsample of at most `max` samples, keeping order.
    pub fn thinned(&self, max: usize) -> Self {
        if self.len() <= max {
            return self.clone();
        }
        let idx: Vec<usize> = (0..max).map(|k| k * self.len() / max).collect();
        Self {
            positions: idx.iter().map(|&i| self.positions[i]).collect(),
            times: idx.iter().map(|&i| self.times[i]).collect(),
            targets: self.targets.iter().map(|t| idx.iter().map(|&i| t[i]).collect()).collect(),
        }
    }

    fn gram(&self, kind: KernelKind, hp: &KernelHyperparams) -> DMatrix<f64> {
        let n = self.len();
        match kind {
            KernelKind::Temporal => DMatrix::from_fn(n, n, |i, j| matern32(self.times[i] - self.times[j], hp)),
            KernelKind::Spatial => DMatrix::from_fn(n, n, |i, j| rbf(&self.positions[i], &self.positions[j], hp)),
        }
    }

    /// Pooled target variance around zero mean.
    fn signal_scale(&self) -> f64 {
        let (mut sum, mut count) = (0.0, 0usize);
        for t in &self.targets {
            sum += t.iter().map(|v| v * v).sum::<f64>();
            count += t.len();
        }
        (sum / count as f64).sqrt().max(SCALE_FLOOR)
    }

    fn input_spacing(&self, kind: KernelKind) -> (f64, f64) {
        match kind {
            KernelKind::Temporal => {
                let mut t = self.times.clone();
                t.sort_by(f64::total_cmp);
                t.dedup();
                let span = t.last().unwrap() - t[0];
                let min_gap = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
                (if min_gap.is_finite() { min_gap } else { span.max(1.0) }, span.max(1.0))
            }
            KernelKind::Spatial => {
                let mut min_gap = f64::INFINITY;
                let mut span: f64 = 0.0;
                for (i, a) in self.positions.iter().enumerate() {
                    for b in &self.positions[i + 1..] {
                        let d = (a - b).norm();
                        if d > 0.0 {
                            min_gap = min_gap.min(d);
                        }
                        span = span.max(d);
                    }
                }
                let span = span.max(1.0);
                (if min_gap.is_finite() { min_gap } else { span }, span)
            }
        }
    }
}

/// `log p(z)` for `z ~ N(0, K + σn² I)`, summed over the target axes.
pub fn log_marginal_likelihood(
    data: &TrainingSet,
    kind: KernelKind,
    hp: &KernelHyperparams,
    noise_var: f64,
) -> Result<f64, TrainingError> {
    let n = data.len();
    let mut k = data.gram(kind, hp);
    for i in 0..n {
        k[(i, i)] += noise_var;
    }
    let chol = k.cholesky().ok_or(TrainingError::NotPositiveDefinite)?;
    let l = chol.l_dirty();
    let mut log_det = 0.0;
    for i in 0..n {
        let d = l[(i, i)];
        if !(d > 0.0) || !d.is_finite() {
            return Err(TrainingError::NotPositiveDefinite);
        }
        log_det += 2.0 * d.ln();
    }
    let mut total = 0.0;
    for t in &data.targets {
        let z = DVector::from_column_slice(t);
        let alpha = chol.solve(&z);
        total += -0.5 * z.dot(&alpha) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelFit {
    pub hp: KernelHyperparams,
    pub noise_var: f64,
    pub log_likelihood: f64,
    pub initial_log_likelihood: f64,
    /// False when no start improved on the initialization, in which case
    /// the initialization is returned.
    pub improved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FittedHyperparams {
    pub temporal: KernelFit,
    pub spatial: KernelFit,
}

/// Optional starting point; unset fields are derived from the data.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub seed: u64,
    pub sigma0: Option<f64>,
    pub temporal_length0: Option<f64>,
    pub spatial_length0: Option<f64>,
}

struct Bounds {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl Bounds {
    fn clamp(&self, x: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| x[k].clamp(self.lo[k], self.hi[k]))
    }
}

/// Fits `(σ, ℓ, σn²)` for one kernel in log space.
pub fn fit_kernel(data: &TrainingSet, kind: KernelKind, init: KernelHyperparams, seed: u64) -> Result<KernelFit, TrainingError> {
    let data = data.thinned(MAX_TRAINING_POINTS);
    let scale = data.signal_scale();
    let (min_gap, span) = data.input_spacing(kind);
    let bounds = Bounds {
        lo: [(1e-4 * scale).ln(), (0.1 * min_gap).ln(), (1e-8 * scale * scale).ln()],
        hi: [(10.0 * scale).ln(), (100.0 * span).ln(), (10.0 * scale * scale).ln()],
    };
    let nll = |x: &[f64; 3]| -> f64 {
        let hp = KernelHyperparams {
            sigma: x[0].exp(),
            length: x[1].exp(),
        };
        match log_marginal_likelihood(&data, kind, &hp, x[2].exp()) {
            Ok(v) if v.is_finite() => -v,
            _ => f64::INFINITY,
        }
    };
    let x0 = bounds.clamp(&[init.sigma.ln(), init.length.ln(), (0.01 * scale * scale).ln()]);
    let f0 = nll(&x0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<([f64; 3], f64)> = None;
    for start in 0..STARTS {
        let xs = if start == 0 {
            x0
        } else {
            bounds.clamp(&std::array::from_fn(|k| x0[k] + rng.random_range(-1.5..1.5)))
        };
        let (x, f) = projected_bfgs(&nll, xs, &bounds);
        // strict comparison keeps the lowest start index on ties
        if f.is_finite() && best.is_none_or(|(_, bf)| f < bf) {
            best = Some((x, f));
        }
    }
    let initial_log_likelihood = -f0;
    let (x, f, improved) = match best {
        Some((x, f)) if f < f0 || !f0.is_finite() => (x, f, true),
        _ => (x0, f0, false),
    };
    if !f.is_finite() {
        return Err(TrainingError::NotPositiveDefinite);
    }
    Ok(KernelFit {
        hp: KernelHyperparams {
            sigma: x[0].exp(),
            length: x[1].exp(),
        },
        noise_var: x[2].exp(),
        log_likelihood: -f,
        initial_log_likelihood,
        improved,
    })
}

fn gradient(f: &impl Fn(&[f64; 3]) -> f64, x: &[f64; 3], bounds: &Bounds) -> [f64; 3] {
    let h = 1e-5;
    std::array::from_fn(|k| {
        let mut p = *x;
        let mut m = *x;
        p[k] = (x[k] + h).min(bounds.hi[k]);
        m[k] = (x[k] - h).max(bounds.lo[k]);
        let (fp, fm) = (f(&p), f(&m));
        if fp.is_finite() && fm.is_finite() && p[k] > m[k] {
            (fp - fm) / (p[k] - m[k])
        } else {
            0.0
        }
    })
}

/// BFGS with central-difference gradients, projection onto the box and a
/// backtracking line search. Variables pinned at a bound with the gradient
/// pushing outward are held fixed for the iteration.
fn projected_bfgs(f: &impl Fn(&[f64; 3]) -> f64, x0: [f64; 3], bounds: &Bounds) -> ([f64; 3], f64) {
    let mut x = x0;
    let mut fx = f(&x);
    if !fx.is_finite() {
        return (x, fx);
    }
    let mut g = gradient(f, &x, bounds);
    let mut hinv = nalgebra::Matrix3::<f64>::identity();
    for _ in 0..200 {
        let free: [bool; 3] = std::array::from_fn(|k| {
            !((x[k] <= bounds.lo[k] && g[k] > 0.0) || (x[k] >= bounds.hi[k] && g[k] < 0.0))
        });
        let gv = nalgebra::Vector3::from_fn(|k, _| if free[k] { g[k] } else { 0.0 });
        if gv.norm() < 1e-7 {
            break;
        }
        let mut dir = -(hinv * gv);
        for k in 0..3 {
            if !free[k] {
                dir[k] = 0.0;
            }
        }
        if dir.dot(&gv) >= 0.0 {
            // not a descent direction: reset curvature
            hinv = nalgebra::Matrix3::identity();
            dir = -gv;
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial = bounds.clamp(&std::array::from_fn(|k| x[k] + step * dir[k]));
            let ft = f(&trial);
            let moved: f64 = (0..3).map(|k| (trial[k] - x[k]) * gv[k]).sum();
            if ft.is_finite() && ft <= fx + 1e-4 * moved {
                accepted = Some((trial, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else { break };
        let gn = gradient(f, &xn, bounds);
        let s = nalgebra::Vector3::from_fn(|k, _| xn[k] - x[k]);
        let y = nalgebra::Vector3::from_fn(|k, _| gn[k] - g[k]);
        let sy = s.dot(&y);
        if sy > 1e-12 {
            let rho = 1.0 / sy;
            let i = nalgebra::Matrix3::<f64>::identity();
            hinv = (i - s * y.transpose() * rho) * hinv * (i - y * s.transpose() * rho) + s * s.transpose() * rho;
        }
        let converged = (fx - fnew).abs() < 1e-10 * fx.abs().max(1.0) && s.norm() < 1e-8;
        x = xn;
        fx = fnew;
        g = gn;
        if converged {
            break;
        }
    }
    (x, fx)
}

/// Fits both kernels. Starting values default to the pooled target scale
/// and a tenth of the input span.
pub fn fit_hyperparams(data: &TrainingSet, options: &FitOptions) -> Result<FittedHyperparams, TrainingError> {
    let thin = data.thinned(MAX_TRAINING_POINTS);
    let sigma0 = options.sigma0.unwrap_or_else(|| thin.signal_scale());
    let (_, t_span) = thin.input_spacing(KernelKind::Temporal);
    let (_, x_span) = thin.input_spacing(KernelKind::Spatial);
    let t0 = KernelHyperparams::new(sigma0, options.temporal_length0.unwrap_or(t_span / 10.0))?;
    let x0 = KernelHyperparams::new(sigma0, options.spatial_length0.unwrap_or(x_span / 10.0))?;
    Ok(FittedHyperparams {
        temporal: fit_kernel(data, KernelKind::Temporal, t0, options.seed)?,
        spatial: fit_kernel(data, KernelKind::Spatial, x0, options.seed.wrapping_add(1))?,
    })
}

/// State-space model from fitted kernels. The signal amplitude is carried
/// by the temporal kernel; the spatial kernel keeps only its length scale
/// so that the product kernel has the temporal variance at zero lag.
pub fn derive_model(fit: &FittedHyperparams, ts: f64) -> Result<StateSpaceModel, TrainingError> {
    let spatial = KernelHyperparams::new(1.0, fit.spatial.hp.length)?;
    Ok(build_state_space(&fit.temporal.hp, &spatial, ts)?)
}

pub const MODEL_FORMAT: &str = "flowplan-state-space/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    /// Row-major.
    pub data: Vec<f64>,
}

impl MatrixRecord {
    fn from_slice_col_major(rows: usize, cols: usize, col_major: &[f64]) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(col_major[c * rows + r]);
            }
        }
        Self { rows, cols, data }
    }

    fn max_diff(&self, other: &MatrixRecord) -> f64 {
        if self.rows != other.rows || self.cols != other.cols || self.data.len() != other.data.len() {
            return f64::INFINITY;
        }
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-300))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMatrices {
    #[serde(rename = "A")]
    pub a: MatrixRecord,
    #[serde(rename = "L")]
    pub l: MatrixRecord,
    #[serde(rename = "H")]
    pub h: MatrixRecord,
    #[serde(rename = "P_inf")]
    pub p_inf: MatrixRecord,
    #[serde(rename = "P0")]
    pub p0: MatrixRecord,
    #[serde(rename = "F")]
    pub f: MatrixRecord,
    #[serde(rename = "Q")]
    pub q: MatrixRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub temporal: KernelHyperparams,
    pub spatial: KernelHyperparams,
    pub ts: f64,
    pub lambda: f64,
    pub qc: f64,
    pub matrices: ModelMatrices,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FittedHyperparams>,
}

impl ModelFile {
    pub fn from_model(model: &StateSpaceModel, fit: Option<FittedHyperparams>) -> Self {
        let m2 = |m: &Matrix2<f64>| MatrixRecord::from_slice_col_major(2, 2, m.as_slice());
        Self {
            format: MODEL_FORMAT.to_string(),
            temporal: model.temporal,
            spatial: model.spatial,
            ts: model.ts,
            lambda: model.lambda,
            qc: model.qc,
            matrices: ModelMatrices {
                a: m2(&model.a),
                l: MatrixRecord::from_slice_col_major(2, 1, model.l.as_slice()),
                h: MatrixRecord::from_slice_col_major(1, 2, model.h.as_slice()),
                p_inf: m2(&model.p_inf),
                p0: m2(&model.p0),
                f: m2(&model.f),
                q: m2(&model.q),
            },
            fit,
        }
    }

    /// Rebuilds the model from its hyperparameters and checks the stored
    /// matrices against it.
    pub fn to_model(&self) -> Result<StateSpaceModel, TrainingError> {
        if self.format != MODEL_FORMAT {
            return Err(TrainingError::BadModel(format!("unknown format `{}`", self.format)));
        }
        let model = build_state_space(&self.temporal, &self.spatial, self.ts)?;
        let rebuilt = ModelFile::from_model(&model, None);
        let pairs = [
            ("A", &self.matrices.a, &rebuilt.matrices.a),
            ("L", &self.matrices.l, &rebuilt.matrices.l),
            ("H", &self.matrices.h, &rebuilt.matrices.h),
            ("P_inf", &self.matrices.p_inf, &rebuilt.matrices.p_inf),
            ("P0", &self.matrices.p0, &rebuilt.matrices.p0),
            ("F", &self.matrices.f, &rebuilt.matrices.f),
        ];
        for (name, stored, want) in pairs {
            if stored.max_diff(want) > 1e-9 {
                return Err(TrainingError::BadModel(format!("matrix {name} disagrees with the hyperparameters")));
            }
        }
        // Q is a difference of nearly equal terms; compare on the scale of P∞
        let scale = model.p_inf.amax();
        let q_err = self
            .matrices
            .q
            .data
            .iter()
            .zip(&rebuilt.matrices.q.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if self.matrices.q.data.len() != 4 || q_err > 1e-9 * scale {
            return Err(TrainingError::BadModel("matrix Q disagrees with the hyperparameters".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainingError> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TrainingError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Median spacing between distinct timestamps, if there are at least two.
pub fn median_step(times: &[f64]) -> Option<f64> {
    let mut t = times.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup();
    let mut gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    if gaps.is_empty() {
        return None;
    }
    gaps.sort_by(f64::total_cmp);
    Some(gaps[gaps.len() / 2])
}


#[cfg(test)]
mod recovery {
    use super::tests::matern_series;
    use super::*;

    #[test]
    fn recovers_matern_hyperparameters() {
        let truth = KernelHyperparams::new(0.2, 1800.0).unwrap();
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let z = matern_series(&mut rng, &truth, 300.0, 200, 0.01);
            let n = z.len();
            let data = TrainingSet::new(vec![Vec2::zeros(); n], (0..n).map(|k| k as f64 * 300.0).collect(), vec![z]).unwrap();
            let init = KernelHyperparams::new(0.1, 6000.0).unwrap();
            let fit = fit_kernel(&data, KernelKind::Temporal, init, seed).unwrap();
            let rs = fit.hp.sigma / truth.sigma;
            let rl = fit.hp.length / truth.length;
            assert!((1.0 / 1.5..=1.5).contains(&rs) && (0.5..=2.0).contains(&rl));
        }
    }
}
