use super::{time_weights, EnvError, GridFrame, Vec2};

/// Gridded, time-sampled 2D current velocities (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentField {
    frame: GridFrame,
    times: Vec<f64>,
    /// `vectors[k * frame.len() + cell]` is the sample at `times[k]`.
    vectors: Vec<Vec2>,
}

impl CurrentField {
    pub fn new(frame: GridFrame, times: Vec<f64>, vectors: Vec<Vec2>) -> Result<Self, EnvError> {
        frame.validate()?;
        if times.is_empty() {
            return Err(EnvError::InvalidField("at least one time sample required".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(EnvError::InvalidField("time samples must be finite and strictly increasing".into()));
        }
        if vectors.len() != times.len() * frame.len() {
            return Err(EnvError::InvalidField(format!(
                "expected {} vectors, got {}",
                times.len() * frame.len(),
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.x.is_finite() || !v.y.is_finite()) {
            return Err(EnvError::InvalidField("current vectors must be finite".into()));
        }
        Ok(Self { frame, times, vectors })
    }

    /// Field that is identically zero.
    pub fn zero(frame: GridFrame) -> Result<Self, EnvError> {
        Self::new(frame, vec![0.0], vec![Vec2::zeros(); frame.len()])
    }

    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn vectors(&self) -> &[Vec2] {
        &self.vectors
    }

    pub fn stored(&self, time_index: usize, i: usize, j: usize) -> Vec2 {
        self.vectors[time_index * self.frame.len() + self.frame.index(i, j)]
    }

    /// Bilinear in space, linear in time; out-of-range queries clamp to the
    /// nearest cell and time sample.
    pub fn sample(&self, pos: &Vec2, t: f64) -> Vec2 {
        let s = self.frame.stencil(pos);
        let (k0, k1, wt) = time_weights(&self.times, t);
        let at = |k: usize| -> Vec2 {
            let base = k * self.frame.len();
            (0..4).fold(Vec2::zeros(), |acc, c| acc + self.vectors[base + s.cells[c]] * s.weights[c])
        };
        if k0 == k1 {
            at(k0)
        } else {
            at(k0) * (1.0 - wt) + at(k1) * wt
        }
    }

    /// Same field with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            frame: self.frame,
            times: self.times.clone(),
            vectors: self.vectors.iter().map(|v| v * factor).collect(),
        }
    }

    /// Same field shifted in space by `offset`.
    pub fn translated(&self, offset: Vec2) -> Self {
        let mut frame = self.frame;
        frame.origin = [frame.origin[0] + offset.x, frame.origin[1] + offset.y];
        Self {
            frame,
            times: self.times.clone(),
            vectors: self.vectors.clone(),
        }
    }

    pub fn max_speed(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn random_field(seed: u64) -> CurrentField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let frame = GridFrame::new([-2.0, 1.0], 0.5, 6, 5).unwrap();
        let times = vec![0.0, 3.0, 4.5];
        let vectors = (0..times.len() * frame.len())
            .map(|_| Vec2::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)))
            .collect();
        CurrentField::new(frame, times, vectors).unwrap()
    }

    /// Direct re-evaluation: locate the enclosing cell-center square by scanning
    /// all cells and blend the four corners with tensor-product hat functions.
    fn oracle(field: &CurrentField, p: &Vec2, t: f64) -> Vec2 {
        let f = field.frame();
        let hat = |d: f64| (1.0 - d.abs()).max(0.0);
        let (lo, hi) = f.extent();
        let half = f.cell_size * 0.5;
        let q = Vec2::new(p.x.clamp(lo.x + half, hi.x - half), p.y.clamp(lo.y + half, hi.y - half));
        let times = field.times();
        let tc = t.clamp(times[0], times[times.len() - 1]);
        let mut out = Vec2::zeros();
        for (k, tk) in times.iter().enumerate() {
            let wt = if times.len() == 1 {
                1.0
            } else {
                // piecewise-linear hat on a non-uniform axis
                let left = if k > 0 { times[k - 1] } else { f64::NEG_INFINITY };
                let right = if k + 1 < times.len() { times[k + 1] } else { f64::INFINITY };
                if tc == *tk {
                    1.0
                } else if tc < *tk && tc > left {
                    (tc - left) / (tk - left)
                } else if tc > *tk && tc < right {
                    (right - tc) / (right - tk)
                } else {
                    0.0
                }
            };
            if wt == 0.0 {
                continue;
            }
            for j in 0..f.height {
                for i in 0..f.width {
                    let c = f.center(i, j);
                    let w = hat((q.x - c.x) / f.cell_size) * hat((q.y - c.y) / f.cell_size);
                    out += field.stored(k, i, j) * (w * wt);
                }
            }
        }
        out
    }

    #[test]
    fn identity_at_cell_centers_and_samples() {
        let field = random_field(3);
        let f = *field.frame();
        for k in 0..field.times().len() {
            for j in 0..f.height {
                for i in 0..f.width {
                    let v = field.sample(&f.center(i, j), field.times()[k]);
                    assert!((v - field.stored(k, i, j)).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn midpoint_is_average() {
        let frame = GridFrame::new([0.0, 0.0], 1.0, 2, 1).unwrap();
        let field = CurrentField::new(frame, vec![0.0], vec![Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0)]).unwrap();
        let v = field.sample(&Vec2::new(1.0, 0.5), 0.0);
        assert!((v - Vec2::new(0.5, 0.5)).norm() < 1e-15);
    }

    #[test]
    fn matches_dense_resampling_oracle() {
        for seed in 0..5 {
            let field = random_field(seed);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(100 + seed);
            for _ in 0..200 {
                let p = Vec2::new(rng.random_range(-3.0..2.0), rng.random_range(0.0..4.5));
                let t = rng.random_range(-1.0..6.0);
                let a = field.sample(&p, t);
                let b = oracle(&field, &p, t);
                assert!((a - b).norm() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn rejects_non_increasing_times() {
        let frame = GridFrame::new([0.0, 0.0], 1.0, 1, 1).unwrap();
        assert!(CurrentField::new(frame, vec![1.0, 1.0], vec![Vec2::zeros(); 2]).is_err());
        assert!(CurrentField::new(frame, vec![0.0], vec![Vec2::new(f64::NAN, 0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn sample_is_lipschitz(seed in 0u64..500, x in -3.0f64..2.0, y in 0.0f64..4.5, dx in -0.3f64..0.3, dy in -0.3f64..0.3, t in 0.0f64..4.5) {
            let field = random_field(seed);
            let f = *field.frame();
            // bilinear interpolation: |grad| <= sqrt(2) * max adjacent difference / cell_size
            let mut max_diff: f64 = 0.0;
            for k in 0..field.times().len() {
                for j in 0..f.height {
                    for i in 0..f.width {
                        if i + 1 < f.width {
                            max_diff = max_diff.max((field.stored(k, i + 1, j) - field.stored(k, i, j)).norm());
                        }
                        if j + 1 < f.height {
                            max_diff = max_diff.max((field.stored(k, i, j + 1) - field.stored(k, i, j)).norm());
                        }
                    }
                }
            }
            let lip = 2f64.sqrt() * max_diff / f.cell_size;
            let p = Vec2::new(x, y);
            let d = Vec2::new(dx, dy);
            let diff = (field.sample(&(p + d), t) - field.sample(&p, t)).norm();
            prop_assert!(diff <= lip * d.norm() + 1e-12);
        }
    }
}
