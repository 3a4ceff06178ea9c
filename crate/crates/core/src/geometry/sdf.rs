use super::{GridFrame, OccupancyGrid, Vec2};

/// Signed Euclidean distance per cell center, in meters.
///
/// Free cells hold the distance to the nearest occupied cell center, occupied
/// cells hold minus the distance to the nearest free cell center. When one of
/// the two sets is empty the value saturates at the grid diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedDistanceField {
    frame: GridFrame,
    values: Vec<f64>,
}

const INF: f64 = 1e30;

/// Exact signed Euclidean distance transform of an occupancy grid.
pub fn build_sdf(grid: &OccupancyGrid) -> SignedDistanceField {
    let frame = *grid.frame();
    let cap = frame.diagonal();
    let to_occupied = distance_to(&frame, grid.cells(), true);
    let to_free = distance_to(&frame, grid.cells(), false);
    let values = grid
        .cells()
        .iter()
        .zip(to_occupied.iter().zip(&to_free))
        .map(|(&occ, (&d_occ, &d_free))| {
            if occ {
                -d_free.min(cap)
            } else {
                d_occ.min(cap)
            }
        })
        .collect();
    SignedDistanceField { frame, values }
}

/// Distance (meters) from each cell center to the nearest cell whose
/// occupancy equals `target`.
fn distance_to(frame: &GridFrame, cells: &[bool], target: bool) -> Vec<f64> {
    let (w, h) = (frame.width, frame.height);
    let mut sq: Vec<f64> = cells.iter().map(|&c| if c == target { 0.0 } else { INF }).collect();

    let mut f = vec![0.0; w.max(h)];
    let mut d = vec![0.0; w.max(h)];
    let mut v = vec![0usize; w.max(h)];
    let mut z = vec![0.0; w.max(h) + 1];

    for j in 0..h {
        for i in 0..w {
            f[i] = sq[frame.index(i, j)];
        }
        edt_1d(&f[..w], &mut d[..w], &mut v, &mut z);
        for i in 0..w {
            sq[frame.index(i, j)] = d[i];
        }
    }
    for i in 0..w {
        for j in 0..h {
            f[j] = sq[frame.index(i, j)];
        }
        edt_1d(&f[..h], &mut d[..h], &mut v, &mut z);
        for j in 0..h {
            sq[frame.index(i, j)] = d[j];
        }
    }
    sq.into_iter()
        .map(|s| if s >= INF { f64::INFINITY } else { s.sqrt() * frame.cell_size })
        .collect()
}

/// Lower envelope of parabolas (Felzenszwalb & Huttenlocher) for one row of
/// squared distances, in cell units.
fn edt_1d(f: &[f64], d: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    // sites with infinite cost never contribute; start the envelope at the first finite one
    let Some(first) = f.iter().position(|&x| x < INF) else {
        d.iter_mut().for_each(|x| *x = INF);
        return;
    };
    let mut k = 0usize;
    v[0] = first;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in first + 1..n {
        if f[q] >= INF {
            continue;
        }
        let qf = q as f64;
        loop {
            let p = v[k];
            let pf = p as f64;
            let s = ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf);
            // z[0] is -inf, so this never underflows
            if s <= z[k] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = f64::INFINITY;
            break;
        }
    }
    k = 0;
    for (q, out) in d.iter_mut().enumerate().take(n) {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let p = v[k] as f64;
        *out = (qf - p) * (qf - p) + f[v[k]];
    }
}

impl SignedDistanceField {
    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[self.frame.index(i, j)]
    }

    /// Bilinearly interpolated signed distance at `p`.
    pub fn distance(&self, p: &Vec2) -> f64 {
        self.distance_and_gradient(p).0
    }

    /// Interpolated distance and its spatial gradient (zero along clamped axes).
    pub fn distance_and_gradient(&self, p: &Vec2) -> (f64, Vec2) {
        let s = self.frame.stencil(p);
        let mut d = 0.0;
        let mut g = Vec2::zeros();
        for k in 0..4 {
            let v = self.values[s.cells[k]];
            d += s.weights[k] * v;
            g.x += s.dweights_dx[k] * v;
            g.y += s.dweights_dy[k] * v;
        }
        (d, g)
    }

    /// True when every point sampled along the segment (spacing at most
    /// `spacing`) has interpolated distance strictly above `clearance`.
    pub fn segment_clear(&self, a: &Vec2, b: &Vec2, clearance: f64, spacing: f64) -> bool {
        let len = (b - a).norm();
        let n = ((len / spacing).ceil() as usize).max(1);
        (0..=n).all(|k| {
            let p = a + (b - a) * (k as f64 / n as f64);
            self.distance(&p) > clearance
        })
    }
}
