use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, GridFrame, Vec2};

/// Boolean occupancy grid. `true` marks an occupied (obstacle) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    frame: GridFrame,
    cells: Vec<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl OccupancyGrid {
    pub fn new(frame: GridFrame, cells: Vec<bool>) -> Result<Self, EnvError> {
        frame.validate()?;
        if cells.len() != frame.len() {
            return Err(EnvError::InvalidGrid(format!(
                "expected {} cells, got {}",
                frame.len(),
                cells.len()
            )));
        }
        Ok(Self { frame, cells })
    }

    pub fn empty(frame: GridFrame) -> Result<Self, EnvError> {
        let n = frame.len();
        Self::new(frame, vec![false; n])
    }

    /// Rasterizes circles and axis-aligned rectangles: a cell is occupied when
    /// its center lies inside any shape.
    pub fn from_shapes(frame: GridFrame, circles: &[Circle], rects: &[Rect]) -> Result<Self, EnvError> {
        let mut grid = Self::empty(frame)?;
        for j in 0..frame.height {
            for i in 0..frame.width {
                let c = frame.center(i, j);
                let hit = circles
                    .iter()
                    .any(|s| (c - Vec2::from(s.center)).norm() <= s.radius)
                    || rects
                        .iter()
                        .any(|r| c.x >= r.min[0] && c.x <= r.max[0] && c.y >= r.min[1] && c.y <= r.max[1]);
                if hit {
                    grid.cells[frame.index(i, j)] = true;
                }
            }
        }
        Ok(grid)
    }

    pub fn frame(&self) -> &GridFrame {
        &self.frame
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn occupied(&self, i: usize, j: usize) -> bool {
        self.cells[self.frame.index(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, occupied: bool) {
        let k = self.frame.index(i, j);
        self.cells[k] = occupied;
    }

    /// Occupancy of the cell containing `p` (clamped into the grid).
    pub fn occupied_at(&self, p: &Vec2) -> bool {
        let (i, j) = self.frame.cell_of(p);
        self.occupied(i, j)
    }

    pub fn free_cell_count(&self) -> usize {
        self.cells.iter().filter(|c| !**c).count()
    }

    /// Reads a portable grey map (`P2` plain text or `P5` binary). Any nonzero
    /// pixel is occupied. Image row 0 is the top of the map (largest y).
    pub fn read_pgm(path: &Path, origin: [f64; 2], cell_size: f64) -> Result<Self, EnvError> {
        let bytes = fs::read(path)?;
        Self::parse_pgm(&bytes, origin, cell_size)
    }

    pub fn parse_pgm(bytes: &[u8], origin: [f64; 2], cell_size: f64) -> Result<Self, EnvError> {
        let mut pos = 0usize;
        let magic = next_token(bytes, &mut pos).ok_or_else(|| EnvError::Map("missing magic".into()))?;
        let binary = match magic.as_str() {
            "P2" => false,
            "P5" => true,
            other => return Err(EnvError::Map(format!("unsupported magic `{other}`, expected P2 or P5"))),
        };
        let mut header = [0usize; 3];
        for h in header.iter_mut() {
            let tok = next_token(bytes, &mut pos).ok_or_else(|| EnvError::Map("truncated header".into()))?;
            *h = tok
                .parse()
                .map_err(|_| EnvError::Map(format!("bad header value `{tok}`")))?;
        }
        let [width, height, maxval] = header;
        if maxval == 0 || maxval > 65535 {
            return Err(EnvError::Map(format!("bad maxval {maxval}")));
        }
        let frame = GridFrame::new(origin, cell_size, width, height)?;
        let n = width * height;
        let mut pixels = Vec::with_capacity(n);
        if binary {
            // exactly one whitespace byte separates the header from raster data
            pos += 1;
            let wide = maxval > 255;
            let step = if wide { 2 } else { 1 };
            let data = bytes
                .get(pos..pos + n * step)
                .ok_or_else(|| EnvError::Map("truncated raster".into()))?;
            for k in 0..n {
                let v = if wide {
                    u16::from_be_bytes([data[2 * k], data[2 * k + 1]]) as usize
                } else {
                    data[k] as usize
                };
                pixels.push(v);
            }
        } else {
            for _ in 0..n {
                let tok = next_token(bytes, &mut pos).ok_or_else(|| EnvError::Map("truncated raster".into()))?;
                pixels.push(
                    tok.parse::<usize>()
                        .map_err(|_| EnvError::Map(format!("bad pixel `{tok}`")))?,
                );
            }
        }
        let mut cells = vec![false; n];
        for row in 0..height {
            let j = height - 1 - row;
            for i in 0..width {
                cells[frame.index(i, j)] = pixels[row * width + i] != 0;
            }
        }
        Self::new(frame, cells)
    }

    /// Plain (`P2`) grey map with occupied cells at 255.
    pub fn to_pgm(&self) -> String {
        let f = &self.frame;
        let mut out = format!("P2\n{} {}\n255\n", f.width, f.height);
        for row in 0..f.height {
            let j = f.height - 1 - row;
            let line: Vec<&str> = (0..f.width)
                .map(|i| if self.occupied(i, j) { "255" } else { "0" })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}
