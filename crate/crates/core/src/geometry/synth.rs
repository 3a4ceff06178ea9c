//! Deterministic synthetic current fields standing in for measured harbour data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CurrentField, EnvError, GridFrame, Vec2};

/// Spatial pattern of a synthetic field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SyntheticKind {
    /// Same vector everywhere.
    Uniform { velocity: [f64; 2] },
    /// Counter-clockwise vortex; speed peaks at `core_radius` from `center`.
    Rotational {
        center: [f64; 2],
        peak_speed: f64,
        core_radius: f64,
    },
    /// Gaussian jet along `direction_deg` centered on the line through
    /// `center`. Rescaled so the largest magnitude over cell centers is
    /// exactly `peak_speed`.
    ChannelJet {
        center: [f64; 2],
        direction_deg: f64,
        half_width: f64,
        peak_speed: f64,
        #[serde(default)]
        background: [f64; 2],
    },
    /// Two variants of a base field; variant B negates every vector whose cell
    /// center lies inside `flip`.
    ScenarioPair {
        base: Box<SyntheticKind>,
        flip: FlipDisk,
        variant: PairVariant,
    },
    /// Sum of several patterns.
    Superpose { parts: Vec<SyntheticKind> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipDisk {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairVariant {
    A,
    B,
}

/// Periodic amplitude factor `1 - depth * (1 - cos(2 pi t / period))`; equals
/// one at `t = 0`. Depths above 0.5 reverse the flow at slack tide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TidalModulation {
    pub period: f64,
    pub depth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    #[serde(flatten)]
    pub kind: SyntheticKind,
    pub frame: GridFrame,
    pub times: Vec<f64>,
    #[serde(default)]
    pub tidal: Option<TidalModulation>,
    /// Number of random Gaussian eddies added on top of the pattern.
    #[serde(default)]
    pub eddies: usize,
    #[serde(default)]
    pub eddy_speed: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Uniform { .. } => "uniform",
            Self::Rotational { .. } => "rotational",
            Self::ChannelJet { .. } => "channel-jet",
            Self::ScenarioPair { .. } => "scenario-pair",
            Self::Superpose { .. } => "superpose",
        }
    }

    /// Parses a kind from its TOML/JSON table; unknown names are reported as
    /// [`EnvError::UnknownFieldKind`].
    pub fn from_toml(value: toml::Value) -> Result<Self, EnvError> {
        let name = value
            .get("kind")
            .and_then(|k| k.as_str())
            .unwrap_or_default()
            .to_string();
        if !KNOWN.contains(&name.as_str()) {
            return Err(EnvError::UnknownFieldKind(name));
        }
        value
            .try_into()
            .map_err(|e: toml::de::Error| EnvError::InvalidField(e.to_string()))
    }

    /// Copy with every jet amplitude rescaled so its peak over cell centers
    /// equals the requested `peak_speed`.
    fn prepared(&self, frame: &GridFrame) -> Self {
        match self {
            Self::ChannelJet {
                center,
                direction_deg,
                half_width,
                peak_speed,
                background,
            } => Self::ChannelJet {
                center: *center,
                direction_deg: *direction_deg,
                half_width: *half_width,
                peak_speed: peak_speed / jet_normalizer(frame, center, jet_direction(*direction_deg), *half_width),
                background: *background,
            },
            Self::ScenarioPair { base, flip, variant } => Self::ScenarioPair {
                base: Box::new(base.prepared(frame)),
                flip: *flip,
                variant: *variant,
            },
            Self::Superpose { parts } => Self::Superpose {
                parts: parts.iter().map(|k| k.prepared(frame)).collect(),
            },
            other => other.clone(),
        }
    }

    /// Pattern value at a point, before modulation and eddies. Jet amplitudes
    /// are taken as-is; see [`Self::prepared`].
    fn evaluate(&self, p: &Vec2) -> Vec2 {
        match self {
            Self::Uniform { velocity } => Vec2::from(*velocity),
            Self::Rotational {
                center,
                peak_speed,
                core_radius,
            } => {
                let r = p - Vec2::from(*center);
                let rn = r.norm() / core_radius;
                if rn == 0.0 {
                    return Vec2::zeros();
                }
                let speed = peak_speed * rn * (0.5 * (1.0 - rn * rn)).exp();
                Vec2::new(-r.y, r.x) / r.norm() * speed
            }
            Self::ChannelJet {
                center,
                direction_deg,
                half_width,
                peak_speed,
                background,
            } => {
                let dir = jet_direction(*direction_deg);
                dir * (peak_speed * jet_profile(p, center, dir, *half_width)) + Vec2::from(*background)
            }
            Self::ScenarioPair { base, flip, variant } => {
                let v = base.evaluate(p);
                if *variant == PairVariant::B && (p - Vec2::from(flip.center)).norm() <= flip.radius {
                    -v
                } else {
                    v
                }
            }
            Self::Superpose { parts } => parts.iter().fold(Vec2::zeros(), |acc, k| acc + k.evaluate(p)),
        }
    }
}

const KNOWN: [&str; 5] = ["uniform", "rotational", "channel-jet", "scenario-pair", "superpose"];

fn jet_direction(deg: f64) -> Vec2 {
    let a = deg.to_radians();
    Vec2::new(a.cos(), a.sin())
}

fn jet_profile(p: &Vec2, center: &[f64; 2], dir: Vec2, half_width: f64) -> f64 {
    let r = p - Vec2::from(*center);
    let across = r.x * -dir.y + r.y * dir.x;
    (-0.5 * (across / half_width).powi(2)).exp()
}

/// Largest profile value over cell centers, so the peak is attained on the grid.
fn jet_normalizer(frame: &GridFrame, center: &[f64; 2], dir: Vec2, half_width: f64) -> f64 {
    let mut best: f64 = 0.0;
    for j in 0..frame.height {
        for i in 0..frame.width {
            best = best.max(jet_profile(&frame.center(i, j), center, dir, half_width));
        }
    }
    if best > 0.0 {
        best
    } else {
        1.0
    }
}

impl TidalModulation {
    pub fn factor(&self, t: f64) -> f64 {
        1.0 - self.depth * (1.0 - (std::f64::consts::TAU * t / self.period).cos())
    }
}

struct Eddy {
    center: Vec2,
    radius: f64,
    speed: f64,
}

/// Samples the spec on its grid at every requested time.
pub fn synth_current_field(spec: &SyntheticSpec) -> Result<CurrentField, EnvError> {
    spec.frame.validate()?;
    validate_kind(&spec.kind)?;
    if let Some(tidal) = &spec.tidal {
        if !(tidal.period > 0.0) {
            return Err(EnvError::InvalidField("tidal period must be > 0".into()));
        }
    }
    let frame = spec.frame;
    let (lo, hi) = frame.extent();
    let span = (hi - lo).norm();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let eddies: Vec<Eddy> = (0..spec.eddies)
        .map(|_| Eddy {
            center: Vec2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y)),
            radius: span * rng.random_range(0.05..0.15),
            speed: spec.eddy_speed * rng.random_range(-1.0..1.0),
        })
        .collect();

    let kind = spec.kind.prepared(&frame);
    let mut base = Vec::with_capacity(frame.len());
    for j in 0..frame.height {
        for i in 0..frame.width {
            let p = frame.center(i, j);
            let mut v = kind.evaluate(&p);
            for e in &eddies {
                let r = p - e.center;
                let rn = r.norm() / e.radius;
                if rn > 0.0 {
                    v += Vec2::new(-r.y, r.x) / r.norm() * (e.speed * rn * (0.5 * (1.0 - rn * rn)).exp());
                }
            }
            base.push(v);
        }
    }

    let mut vectors = Vec::with_capacity(frame.len() * spec.times.len());
    for &t in &spec.times {
        let m = spec.tidal.map_or(1.0, |tm| tm.factor(t));
        vectors.extend(base.iter().map(|v| v * m));
    }
    CurrentField::new(frame, spec.times.clone(), vectors)
}

fn validate_kind(kind: &SyntheticKind) -> Result<(), EnvError> {
    match kind {
        SyntheticKind::Rotational { core_radius, .. } if !(*core_radius > 0.0) => {
            Err(EnvError::InvalidField("core_radius must be > 0".into()))
        }
        SyntheticKind::ChannelJet { half_width, .. } if !(*half_width > 0.0) => {
            Err(EnvError::InvalidField("half_width must be > 0".into()))
        }
        SyntheticKind::ScenarioPair { base, flip, .. } => {
            if !(flip.radius > 0.0) {
                return Err(EnvError::InvalidField("flip radius must be > 0".into()));
            }
            validate_kind(base)
        }
        SyntheticKind::Superpose { parts } => parts.iter().try_for_each(validate_kind),
        _ => Ok(()),
    }
}
