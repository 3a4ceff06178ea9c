//! Scenario configuration files.
//!
//! Relative paths inside a config are resolved against the config file's
//! directory.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    build_sdf, ingest_measurements, synth_current_field, Circle, CurrentField, EnvError, GridFrame, MeasurementSet,
    OccupancyGrid, Rect, SignedDistanceField, SyntheticKind, SyntheticSpec, TidalModulation, Vec2,
};
use crate::optimizer::{GraphSettings, OptimizerSettings};
use crate::rrt::RrtParams;
use crate::tracker::KernelHyperparams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub origin: [f64; 2],
    pub cell_size: f64,
    #[serde(default)]
    pub width: usize,
    #[serde(default)]
    pub height: usize,
    #[serde(default)]
    pub circles: Vec<Circle>,
    #[serde(default)]
    pub rects: Vec<Rect>,
    /// PGM occupancy image; when set, width and height come from the file.
    #[serde(default)]
    pub pgm: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoint {
    pub position: [f64; 2],
    #[serde(default)]
    pub velocity: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub n_support: usize,
    pub total_time: f64,
}

/// Synthetic current description; frame and time axis default to the map
/// grid and `[0, total_time]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCurrentConfig {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    #[serde(default)]
    pub frame: Option<GridFrame>,
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    #[serde(default)]
    pub tidal: Option<TidalModulation>,
    #[serde(default)]
    pub eddies: usize,
    #[serde(default)]
    pub eddy_speed: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CurrentSource {
    Synthetic(SyntheticCurrentConfig),
    /// Recorded readings; the true field is unknown.
    Recorded(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    #[serde(default)]
    pub positions: Vec<[f64; 2]>,
    /// Per-axis noise variance of synthesized readings; defaults to the
    /// tracker's `r`.
    #[serde(default)]
    pub noise_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    #[serde(default = "default_temporal")]
    pub temporal: KernelHyperparams,
    #[serde(default = "default_spatial")]
    pub spatial: KernelHyperparams,
    /// Measurement noise variance assumed by the filter, (m/s)².
    #[serde(default = "default_r")]
    pub r: f64,
    /// Association gate; three spatial length scales when unset.
    #[serde(default)]
    pub gate_radius: Option<f64>,
    /// Readings to fit the kernels on instead of using the values above.
    #[serde(default)]
    pub training_data: Option<PathBuf>,
}

fn default_temporal() -> KernelHyperparams {
    KernelHyperparams {
        sigma: 0.2,
        length: 1800.0,
    }
}

fn default_spatial() -> KernelHyperparams {
    KernelHyperparams {
        sigma: 1.0,
        length: 300.0,
    }
}

fn default_r() -> f64 {
    1e-4
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            temporal: default_temporal(),
            spatial: default_spatial(),
            r: default_r(),
            gate_radius: None,
            training_data: None,
        }
    }
}

impl TrackerConfig {
    pub fn gate(&self) -> f64 {
        self.gate_radius.unwrap_or(3.0 * self.spatial.length)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    steps: Option<usize>,
    map: MapConfig,
    start: Endpoint,
    goal: Endpoint,
    trajectory: TrajectoryConfig,
    #[serde(default)]
    factors: GraphSettings,
    current: toml::Value,
    #[serde(default)]
    sensors: Option<SensorConfig>,
    #[serde(default)]
    tracker: TrackerConfig,
    #[serde(default)]
    optimizer: OptimizerSettings,
    #[serde(default)]
    rrt: Option<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub seed: u64,
    /// Replanning step budget; `n_support - 1` reaches the goal.
    pub steps: usize,
    pub map: MapConfig,
    pub start: Endpoint,
    pub goal: Endpoint,
    pub trajectory: TrajectoryConfig,
    pub factors: GraphSettings,
    pub current: CurrentSource,
    pub sensors: SensorConfig,
    pub tracker: TrackerConfig,
    pub optimizer: OptimizerSettings,
    pub rrt: RrtParams,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let default_name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        Self::parse(&text, &base, &default_name)
    }

    pub fn parse(text: &str, base_dir: &Path, default_name: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        let current = parse_current(raw.current)?;
        let rrt = match raw.rrt {
            None => RrtParams {
                seed: raw.seed,
                ..RrtParams::default()
            },
            Some(v) => {
                let has_seed = v.get("seed").is_some();
                let mut p: RrtParams = v.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
                if !has_seed {
                    p.seed = raw.seed;
                }
                p
            }
        };
        let cfg = Self {
            name: raw.name.unwrap_or_else(|| default_name.to_string()),
            seed: raw.seed,
            steps: raw.steps.unwrap_or(raw.trajectory.n_support.saturating_sub(1)),
            map: raw.map,
            start: raw.start,
            goal: raw.goal,
            trajectory: raw.trajectory,
            factors: raw.factors,
            current,
            sensors: raw.sensors.unwrap_or(SensorConfig {
                positions: Vec::new(),
                noise_variance: None,
            }),
            tracker: raw.tracker,
            optimizer: raw.optimizer,
            rrt,
            base_dir: base_dir.to_path_buf(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Replaces the seed everywhere it is used.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.rrt.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.trajectory.n_support < 2 {
            return bad(format!("n_support must be >= 2, got {}", self.trajectory.n_support));
        }
        if !(self.trajectory.total_time > 0.0) {
            return bad(format!("total_time must be > 0, got {}", self.trajectory.total_time));
        }
        let f = &self.factors;
        for (name, v) in [
            ("gp_qc", f.gp_qc),
            ("start_sigma", f.start_sigma),
            ("start_velocity_sigma", f.start_velocity_sigma),
            ("goal_sigma", f.goal_sigma),
            ("goal_velocity_sigma", f.goal_velocity_sigma),
            ("obstacle_sigma", f.obstacle_sigma),
            ("current_sigma", f.current_sigma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("factors.{name} must be > 0, got {v}"));
            }
        }
        if !(f.obstacle_epsilon >= 0.0) || !(f.current_epsilon >= 0.0) {
            return bad("factor thresholds must be >= 0".into());
        }
        self.optimizer
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rrt.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.tracker
            .temporal
            .validate()
            .and(self.tracker.spatial.validate())
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(self.tracker.r > 0.0) {
            return bad(format!("tracker.r must be > 0, got {}", self.tracker.r));
        }
        if let Some(nv) = self.sensors.noise_variance {
            if !(nv >= 0.0) {
                return bad(format!("sensors.noise_variance must be >= 0, got {nv}"));
            }
        }
        if self.map.pgm.is_none() {
            GridFrame::new(self.map.origin, self.map.cell_size, self.map.width, self.map.height)?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn dt(&self) -> f64 {
        self.trajectory.total_time / (self.trajectory.n_support - 1) as f64
    }

    pub fn start_position(&self) -> Vec2 {
        Vec2::new(self.start.position[0], self.start.position[1])
    }

    pub fn goal_position(&self) -> Vec2 {
        Vec2::new(self.goal.position[0], self.goal.position[1])
    }

    pub fn sensor_points(&self) -> Vec<Vec2> {
        self.sensors.positions.iter().map(|p| Vec2::new(p[0], p[1])).collect()
    }

    pub fn sensor_noise_variance(&self) -> f64 {
        self.sensors.noise_variance.unwrap_or(self.tracker.r)
    }

    pub fn build_grid(&self) -> Result<OccupancyGrid, ConfigError> {
        match &self.map.pgm {
            Some(p) => Ok(OccupancyGrid::read_pgm(&self.resolve(p), self.map.origin, self.map.cell_size)?),
            None => {
                let frame = GridFrame::new(self.map.origin, self.map.cell_size, self.map.width, self.map.height)?;
                Ok(OccupancyGrid::from_shapes(frame, &self.map.circles, &self.map.rects)?)
            }
        }
    }

    pub fn build_sdf(&self) -> Result<(OccupancyGrid, Arc<SignedDistanceField>), ConfigError> {
        let grid = self.build_grid()?;
        let sdf = Arc::new(build_sdf(&grid));
        Ok((grid, sdf))
    }

    /// The true field for synthetic sources.
    pub fn build_current(&self, frame: &GridFrame) -> Result<Option<CurrentField>, ConfigError> {
        match &self.current {
            CurrentSource::Recorded(_) => Ok(None),
            CurrentSource::Synthetic(c) => {
                let spec = SyntheticSpec {
                    kind: c.kind.clone(),
                    frame: c.frame.unwrap_or(*frame),
                    times: c.times.clone().unwrap_or_else(|| vec![0.0, self.trajectory.total_time]),
                    tidal: c.tidal,
                    eddies: c.eddies,
                    eddy_speed: c.eddy_speed,
                    seed: c.seed.unwrap_or(self.seed),
                };
                Ok(Some(synth_current_field(&spec)?))
            }
        }
    }

    pub fn recorded_measurements(&self) -> Result<Option<Vec<MeasurementSet>>, ConfigError> {
        match &self.current {
            CurrentSource::Recorded(p) => Ok(Some(ingest_measurements(&self.resolve(p))?)),
            CurrentSource::Synthetic(_) => Ok(None),
        }
    }
}

fn parse_current(value: toml::Value) -> Result<CurrentSource, ConfigError> {
    if let Some(file) = value.get("file") {
        let file = file
            .as_str()
            .ok_or_else(|| ConfigError::Invalid("current.file must be a string".into()))?;
        if value.as_table().is_some_and(|t| t.len() > 1) {
            return Err(ConfigError::Invalid("current.file cannot be combined with a synthetic kind".into()));
        }
        return Ok(CurrentSource::Recorded(PathBuf::from(file)));
    }
    // validates the kind name first for a precise error
    let kind_only = {
        let mut t = toml::Table::new();
        if let Some(table) = value.as_table() {
            for (k, v) in table {
                if !matches!(k.as_str(), "frame" | "times" | "tidal" | "eddies" | "eddy_speed" | "seed") {
                    t.insert(k.clone(), v.clone());
                }
            }
        }
        toml::Value::Table(t)
    };
    SyntheticKind::from_toml(kind_only)?;
    let cfg: SyntheticCurrentConfig = value.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
    Ok(CurrentSource::Synthetic(cfg))
}
