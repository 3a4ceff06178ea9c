use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EnvError, Vec2};

pub const CSV_HEADER: [&str; 6] = ["t", "x", "y", "vx", "vy", "r"];

/// Current readings sharing one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub time: f64,
    pub points: Vec<Vec2>,
    pub values: Vec<Vec2>,
    /// Per-axis noise variance, (m/s)^2.
    pub noise_variance: f64,
}

impl MeasurementSet {
    pub fn new(time: f64, points: Vec<Vec2>, values: Vec<Vec2>, noise_variance: f64) -> Result<Self, EnvError> {
        if points.len() != values.len() {
            return Err(EnvError::InvalidField(format!(
                "{} points but {} values",
                points.len(),
                values.len()
            )));
        }
        if !(noise_variance > 0.0) {
            return Err(EnvError::InvalidField(format!("noise variance must be > 0, got {noise_variance}")));
        }
        Ok(Self {
            time,
            points,
            values,
            noise_variance,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    t: f64,
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    r: f64,
}

pub fn ingest_measurements(path: &Path) -> Result<Vec<MeasurementSet>, EnvError> {
    read_measurements(std::fs::File::open(path)?)
}

/// Parses the `t,x,y,vx,vy,r` CSV schema into one set per distinct timestamp,
/// ascending. Rows sharing a timestamp are merged wherever they appear; the
/// merged set keeps the largest reported variance.
pub fn read_measurements<R: Read>(reader: R) -> Result<Vec<MeasurementSet>, EnvError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| parse_error(&e))?.clone();
    if headers.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(EnvError::Parse {
            line: 1,
            message: format!("expected header `{}`", CSV_HEADER.join(",")),
        });
    }
    let mut rows: Vec<(u64, Row)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| parse_error(&e))?;
        let line = rec.position().map_or(0, |p| p.line());
        let row: Row = rec.deserialize(Some(&headers)).map_err(|e| EnvError::Parse {
            line,
            message: e.to_string(),
        })?;
        if [row.t, row.x, row.y, row.vx, row.vy, row.r].iter().any(|v| !v.is_finite()) {
            return Err(EnvError::Parse {
                line,
                message: "non-finite value".into(),
            });
        }
        if !(row.r > 0.0) {
            return Err(EnvError::Parse {
                line,
                message: format!("noise variance must be > 0, got {}", row.r),
            });
        }
        rows.push((line, row));
    }
    // stable: rows with equal timestamps keep file order
    rows.sort_by(|a, b| a.1.t.total_cmp(&b.1.t));

    let mut sets: Vec<MeasurementSet> = Vec::new();
    for (_, row) in rows {
        let p = Vec2::new(row.x, row.y);
        let v = Vec2::new(row.vx, row.vy);
        match sets.last_mut() {
            Some(last) if last.time == row.t => {
                last.points.push(p);
                last.values.push(v);
                last.noise_variance = last.noise_variance.max(row.r);
            }
            _ => sets.push(MeasurementSet {
                time: row.t,
                points: vec![p],
                values: vec![v],
                noise_variance: row.r,
            }),
        }
    }
    Ok(sets)
}

pub fn write_measurements<W: Write>(writer: W, sets: &[MeasurementSet]) -> Result<(), EnvError> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(CSV_HEADER).map_err(|e| parse_error(&e))?;
    for set in sets {
        for (p, v) in set.points.iter().zip(&set.values) {
            wtr.serialize(Row {
                t: set.time,
                x: p.x,
                y: p.y,
                vx: v.x,
                vy: v.y,
                r: set.noise_variance,
            })
            .map_err(|e| parse_error(&e))?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn parse_error(e: &csv::Error) -> EnvError {
    let line = e.position().map_or(0, |p| p.line());
    EnvError::Parse {
        line,
        message: e.to_string(),
    }
}
