//! Replanning loop: RRT* seed, then per step track the current, rebuild the
//! graph with fresh estimates, re-optimize and advance the start anchor.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factors::{current_deviation, STILL_SPEED};
use crate::geometry::{CurrentField, EnvError, MeasurementSet, OccupancyGrid, SignedDistanceField, Vec2};
use crate::gp_prior::{GpError, SupportState, Trajectory};
use crate::optimizer::{build_problem, optimize, GraphInputs, OptimizeError, Termination};
use crate::rrt::{self, RrtError};
use crate::scenario::{ConfigError, ScenarioConfig};
use crate::tracker::{build_state_space, track_step, CurrentBelief, StateSpaceModel, TrackerError};
use crate::training::{derive_model, fit_hyperparams, FitOptions, TrainingError, TrainingSet};

#[derive(Debug, Error)]
pub enum PlannerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no path: {0}")]
    NoPath(#[from] RrtError),
    #[error("optimizer failed at step {step}: {source}")]
    Optimizer { step: usize, source: OptimizeError },
    #[error("tracker failed at step {step}: {source}")]
    Tracker { step: usize, source: TrackerError },
    #[error(transparent)]
    Training(#[from] TrainingError),
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PlannerError {
    /// Process exit code: 2 no path, 3 optimizer failure, 4 bad config,
    /// 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::NoPath(RrtError::InvalidParams(_)) => 4,
            Self::NoPath(_) => 2,
            Self::Optimizer { .. } => 3,
            Self::Config(_) | Self::Training(_) => 4,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "no_path",
            3 => "optimizer_failure",
            4 => "config_error",
            _ => "error",
        }
    }
}

/// Where the current values used for consumption come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsumptionBasis {
    /// The synthetic ground-truth field.
    Truth,
    /// The tracker's estimates; used when only recorded readings exist.
    Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumptionReport {
    /// Raw per-point values divided by their maximum (all zero when the
    /// maximum is zero).
    pub normalized: Vec<f64>,
    pub raw: Vec<f64>,
    pub total: f64,
    /// Sum of `-(v̂_a · v_c) / ‖v_a‖`; positive when the vehicle mostly
    /// fights the current.
    pub signed: f64,
}

/// Consumption of `states` given one current vector per state.
pub fn consumption_from_currents(states: &[SupportState], currents: &[Vec2]) -> ConsumptionReport {
    let raw: Vec<f64> = states
        .iter()
        .zip(currents)
        .map(|(s, vc)| current_deviation(s, s, vc).norm())
        .collect();
    let signed = states
        .iter()
        .zip(currents)
        .map(|(s, vc)| {
            let speed = s.velocity.norm();
            if speed < STILL_SPEED {
                0.0
            } else {
                -(s.velocity / speed).dot(vc) / speed
            }
        })
        .sum();
    let max = raw.iter().cloned().fold(0.0, f64::max);
    let normalized = raw.iter().map(|&r| if max > 0.0 { r / max } else { 0.0 }).collect();
    ConsumptionReport {
        total: raw.iter().sum(),
        normalized,
        raw,
        signed,
    }
}

/// Consumption of a trajectory against the true field at each support.
pub fn consumption_report(traj: &Trajectory, field: &CurrentField) -> ConsumptionReport {
    let vc: Vec<Vec2> = traj.states().iter().map(|s| field.sample(&s.position, s.time)).collect();
    consumption_from_currents(traj.states(), &vc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    /// Optimized plan from this step's anchor to the goal.
    pub plan: Trajectory,
    /// Current estimates (and standard deviations) at the plan's supports.
    pub vc: Vec<Vec2>,
    pub vc_std: Vec<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Every accepted step lowered the cost.
    pub monotone: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub current_factor: bool,
    pub steps: Vec<StepRecord>,
    /// Executed supports followed by the last plan's remaining supports.
    pub trajectory: Trajectory,
    /// Number of leading supports of `trajectory` actually executed.
    pub executed: usize,
    pub reached_goal: bool,
    pub basis: ConsumptionBasis,
    pub consumption: ConsumptionReport,
    /// Smallest signed distance along the trajectory under dense
    /// interpolation, when a map is present.
    pub min_clearance: f64,
}

/// Everything the two runs share.
pub struct Setup {
    pub config: ScenarioConfig,
    pub grid: OccupancyGrid,
    pub sdf: Arc<SignedDistanceField>,
    pub truth: Option<CurrentField>,
    pub recorded: Option<Vec<MeasurementSet>>,
    pub model: StateSpaceModel,
    pub seed_path: rrt::Path,
    pub initial: Trajectory,
}

impl Setup {
    pub fn new(config: ScenarioConfig) -> Result<Self, PlannerError> {
        config.validate()?;
        let (grid, sdf) = config.build_sdf()?;
        let truth = config.build_current(grid.frame())?;
        let recorded = config.recorded_measurements()?;
        let dt = config.dt();
        let model = match &config.tracker.training_data {
            Some(p) => {
                let sets = crate::geometry::ingest_measurements(&config.resolve(p))?;
                let data = TrainingSet::from_measurements(&sets)?;
                let fit = fit_hyperparams(
                    &data,
                    &FitOptions {
                        seed: config.seed,
                        ..FitOptions::default()
                    },
                )?;
                derive_model(&fit, dt)?
            }
            None => build_state_space(&config.tracker.temporal, &config.tracker.spatial, dt)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?,
        };
        let seed_path = rrt::plan(&sdf, config.start_position(), config.goal_position(), &config.rrt)?;
        let initial = rrt::path_to_trajectory(
            &seed_path,
            config.trajectory.n_support,
            config.trajectory.total_time,
            0.0,
        )?;
        Ok(Self {
            config,
            grid,
            sdf,
            truth,
            recorded,
            model,
            seed_path,
            initial,
        })
    }

    /// Readings available at `time`: synthesized from the true field at the
    /// sensors, or the latest recorded set in `(time - dt, time]`.
    fn measurements(&self, time: f64, rng: &mut ChaCha8Rng) -> Result<Option<MeasurementSet>, PlannerError> {
        let cfg = &self.config;
        if let Some(sets) = &self.recorded {
            let dt = cfg.dt();
            return Ok(sets
                .iter()
                .rev()
                .find(|s| s.time <= time + 1e-9 && s.time > time - dt + 1e-9)
                .cloned());
        }
        let Some(field) = &self.truth else { return Ok(None) };
        let points = cfg.sensor_points();
        if points.is_empty() {
            return Ok(None);
        }
        let sd = cfg.sensor_noise_variance().sqrt();
        let values = points
            .iter()
            .map(|p| {
                let nx: f64 = StandardNormal.sample(rng);
                let ny: f64 = StandardNormal.sample(rng);
                field.sample(p, time) + Vec2::new(nx, ny) * sd
            })
            .collect();
        Ok(Some(MeasurementSet::new(time, points, values, cfg.tracker.r)?))
    }

    pub fn run(&self, current_factor: bool) -> Result<RunRecord, PlannerError> {
        let cfg = &self.config;
        let dt = cfg.dt();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5e75);
        let goal_state = SupportState::new(
            cfg.trajectory.total_time,
            cfg.goal_position(),
            cfg.goal.velocity.map_or(Vec2::zeros(), |v| Vec2::new(v[0], v[1])),
        );
        let mut plan = self.initial.clone();
        let mut anchor = *plan.start();
        let mut start_pinned = false;
        if let Some(v) = cfg.start.velocity {
            anchor.velocity = Vec2::new(v[0], v[1]);
            start_pinned = true;
        }
        let mut belief = CurrentBelief::prior(plan.positions(), &self.model, plan.start().time - dt);
        let mut steps = Vec::new();
        let mut executed: Vec<SupportState> = Vec::new();
        let mut executed_vc: Vec<Vec2> = Vec::new();
        let mut last_vc: Vec<Vec2> = Vec::new();

        for k in 0..cfg.steps {
            let time = plan.start().time;
            let ms = self.measurements(time, &mut rng)?;
            let positions = plan.positions();
            belief = track_step(&belief, &self.model, ms.as_ref(), &positions, cfg.tracker.gate())
                .map_err(|source| PlannerError::Tracker { step: k, source })?;
            let est = belief
                .query(&positions, &self.model)
                .map_err(|source| PlannerError::Tracker { step: k, source })?;
            let vc: Vec<Vec2> = est.iter().map(|e| e.0).collect();
            let inputs = GraphInputs {
                n_states: plan.len(),
                dt,
                start: anchor,
                goal: goal_state,
                start_has_velocity: start_pinned,
                goal_has_velocity: cfg.goal.velocity.is_some(),
                sdf: Some(self.sdf.clone()),
                currents: current_factor.then_some(vc.as_slice()),
            };
            let problem = build_problem(&cfg.factors, &inputs).map_err(|source| PlannerError::Optimizer { step: k, source })?;
            let (opt, report) =
                optimize(&problem, &plan, &cfg.optimizer).map_err(|source| PlannerError::Optimizer { step: k, source })?;
            let trace = &report.cost_trace;
            steps.push(StepRecord {
                step: k,
                time,
                plan: opt.clone(),
                vc: vc.clone(),
                vc_std: est.iter().map(|e| e.1).collect(),
                initial_cost: trace[0],
                final_cost: report.final_cost(),
                iterations: report.iterations,
                termination: report.termination,
                monotone: trace.windows(2).all(|w| w[1] <= w[0]),
            });
            executed.push(*opt.start());
            executed_vc.push(vc[0]);
            last_vc = vc;
            plan = opt;
            if plan.len() == 2 {
                break;
            }
            plan = plan.advanced(1)?;
            anchor = *plan.start();
            start_pinned = true;
            last_vc.remove(0);
        }

        let n_exec = executed.len();
        let tail_start = if plan.len() == 2 && n_exec > 0 && executed.last() == Some(plan.start()) {
            1
        } else {
            0
        };
        let mut states = executed;
        states.extend_from_slice(&plan.states()[tail_start..]);
        let mut vc_all = executed_vc;
        vc_all.extend(last_vc.iter().skip(tail_start));
        vc_all.resize(states.len(), *vc_all.last().unwrap_or(&Vec2::zeros()));
        let trajectory = Trajectory::new(states)?;
        let (basis, consumption) = match &self.truth {
            Some(field) => (ConsumptionBasis::Truth, consumption_report(&trajectory, field)),
            None => (
                ConsumptionBasis::Estimate,
                consumption_from_currents(trajectory.states(), &vc_all),
            ),
        };
        let reached_goal = n_exec + 1 >= cfg.trajectory.n_support;
        Ok(RunRecord {
            current_factor,
            steps,
            min_clearance: min_clearance(&trajectory, &self.sdf, 20)?,
            executed: n_exec,
            reached_goal,
            trajectory,
            basis,
            consumption,
        })
    }
}

/// Smallest signed distance over supports and `per_interval` GP-interpolated
/// points between each pair.
pub fn min_clearance(traj: &Trajectory, sdf: &SignedDistanceField, per_interval: usize) -> Result<f64, GpError> {
    let model = crate::gp_prior::GpPriorModel::isotropic(1.0)?;
    let mut best = f64::INFINITY;
    for w in traj.states().windows(2) {
        best = best.min(sdf.distance(&w[0].position));
        let dt = w[1].time - w[0].time;
        for k in 1..=per_interval {
            let tau = dt * k as f64 / (per_interval + 1) as f64;
            best = best.min(sdf.distance(&model.interpolate(&w[0], &w[1], tau)?.position));
        }
    }
    Ok(best.min(sdf.distance(&traj.end().position)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub total_consumption: f64,
    pub signed_consumption: f64,
    pub steps: usize,
    pub executed_supports: usize,
    pub reached_goal: bool,
    pub final_cost: f64,
    pub terminations: Vec<Termination>,
    pub monotone: bool,
    pub min_clearance: f64,
    pub path_length: f64,
}

impl RunSummary {
    pub fn from_record(r: &RunRecord) -> Self {
        let pos = r.trajectory.positions();
        Self {
            total_consumption: r.consumption.total,
            signed_consumption: r.consumption.signed,
            steps: r.steps.len(),
            executed_supports: r.executed,
            reached_goal: r.reached_goal,
            final_cost: r.steps.last().map_or(f64::NAN, |s| s.final_cost),
            terminations: r.steps.iter().map(|s| s.termination).collect(),
            monotone: r.steps.iter().all(|s| s.monotone),
            min_clearance: r.min_clearance,
            path_length: pos.windows(2).map(|w| (w[1] - w[0]).norm()).sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    /// `ok` or the failure kind.
    pub status: String,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis: Option<ConsumptionBasis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aware: Option<RunSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agnostic: Option<RunSummary>,
    /// `100 (agnostic - aware) / agnostic`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub improvement_percent: Option<f64>,
}

/// Both runs of a scenario (the aware one may be skipped).
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub aware: Option<RunRecord>,
    pub agnostic: RunRecord,
}

impl Comparison {
    pub fn improvement_percent(&self) -> Option<f64> {
        let a = self.aware.as_ref()?.consumption.total;
        let b = self.agnostic.consumption.total;
        (b > 0.0).then(|| 100.0 * (b - a) / b)
    }

    pub fn summary(&self, config: &ScenarioConfig) -> Summary {
        Summary {
            name: config.name.clone(),
            seed: config.seed,
            status: "ok".into(),
            exit_code: 0,
            message: None,
            basis: Some(self.agnostic.basis),
            aware: self.aware.as_ref().map(RunSummary::from_record),
            agnostic: Some(RunSummary::from_record(&self.agnostic)),
            improvement_percent: self.improvement_percent(),
        }
    }
}

pub fn failure_summary(config: Option<&ScenarioConfig>, err: &PlannerError) -> Summary {
    Summary {
        name: config.map_or_else(String::new, |c| c.name.clone()),
        seed: config.map_or(0, |c| c.seed),
        status: err.kind().into(),
        exit_code: err.exit_code(),
        message: Some(err.to_string()),
        basis: None,
        aware: None,
        agnostic: None,
        improvement_percent: None,
    }
}

pub fn run_scenario(config: ScenarioConfig, with_aware: bool) -> Result<(Setup, Comparison), PlannerError> {
    let setup = Setup::new(config)?;
    let aware = if with_aware { Some(setup.run(true)?) } else { None };
    let agnostic = setup.run(false)?;
    Ok((setup, Comparison { aware, agnostic }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub consumption: f64,
}

pub fn trajectory_rows(r: &RunRecord) -> Vec<TrajectoryRow> {
    r.trajectory
        .states()
        .iter()
        .zip(&r.consumption.normalized)
        .map(|(s, &c)| TrajectoryRow {
            t: s.time,
            x: s.position.x,
            y: s.position.y,
            vx: s.velocity.x,
            vy: s.velocity.y,
            consumption: c,
        })
        .collect()
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<(), PlannerError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Vec<TrajectoryRow>, PlannerError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

#[derive(Debug, Serialize)]
struct CurrentRow {
    run: &'static str,
    step: usize,
    t: f64,
    index: usize,
    x: f64,
    y: f64,
    vcx: f64,
    vcy: f64,
    std: f64,
}

fn write_currents_csv(path: &Path, runs: &[(&'static str, &RunRecord)]) -> Result<(), PlannerError> {
    let mut w = csv::Writer::from_path(path)?;
    for (name, r) in runs {
        for s in &r.steps {
            for (i, (st, (v, sd))) in s.plan.states().iter().zip(s.vc.iter().zip(&s.vc_std)).enumerate() {
                w.serialize(CurrentRow {
                    run: name,
                    step: s.step,
                    t: s.time,
                    index: i,
                    x: st.position.x,
                    y: st.position.y,
                    vcx: v.x,
                    vcy: v.y,
                    std: *sd,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, summary: &Summary) -> Result<(), PlannerError> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes trajectories, current estimates, the summary, the plot and a copy
/// of the config into `out_dir`.
pub fn emit_outputs(setup: &Setup, cmp: &Comparison, out_dir: &Path, config_text: &str) -> Result<(), PlannerError> {
    std::fs::create_dir_all(out_dir)?;
    let mut runs: Vec<(&'static str, &RunRecord)> = Vec::new();
    if let Some(a) = &cmp.aware {
        write_trajectory_csv(&out_dir.join("trajectory_aware.csv"), &trajectory_rows(a))?;
        runs.push(("aware", a));
    }
    write_trajectory_csv(&out_dir.join("trajectory_agnostic.csv"), &trajectory_rows(&cmp.agnostic))?;
    runs.push(("agnostic", &cmp.agnostic));
    write_currents_csv(&out_dir.join("currents.csv"), &runs)?;
    write_summary(&out_dir.join("summary.json"), &cmp.summary(&setup.config))?;
    std::fs::write(out_dir.join("plot.svg"), render_svg(setup, cmp))?;
    std::fs::write(out_dir.join("config.toml"), config_text)?;
    Ok(())
}

/// Blue (low) to red (high).
fn ramp(c: f64) -> String {
    let c = c.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * c).round() as u8;
    let g = (90.0 + 60.0 * (1.0 - (2.0 * c - 1.0).abs())).round() as u8;
    let b = (255.0 - 215.0 * c).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

pub fn render_svg(setup: &Setup, cmp: &Comparison) -> String {
    let frame = setup.grid.frame();
    let (lo, hi) = frame.extent();
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let scale = 800.0 / w.max(h);
    let (pw, ph) = (w * scale, h * scale);
    let px = |p: &Vec2| ((p.x - lo.x) * scale, (hi.y - p.y) * scale);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {pw:.2} {ph:.2}">"#,
        pw + 0.5,
        ph + 0.5
    );
    let _ = writeln!(s, r##"<rect x="0" y="0" width="{pw:.2}" height="{ph:.2}" fill="#f4f8fb"/>"##);

    // obstacles as horizontal runs of occupied cells
    let cs = frame.cell_size * scale;
    let _ = writeln!(s, r##"<g fill="#555">"##);
    for j in 0..frame.height {
        let mut i = 0;
        while i < frame.width {
            if !setup.grid.occupied(i, j) {
                i += 1;
                continue;
            }
            let i0 = i;
            while i < frame.width && setup.grid.occupied(i, j) {
                i += 1;
            }
            let x = i0 as f64 * cs;
            let y = (frame.height - 1 - j) as f64 * cs;
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{cs:.2}"/>"#,
                (i - i0) as f64 * cs
            );
        }
    }
    let _ = writeln!(s, "</g>");

    if let Some(field) = &setup.truth {
        let n = 20usize;
        let vmax = field.max_speed().max(1e-12);
        let len = w.max(h) / n as f64 * 0.8 * scale;
        let _ = writeln!(s, r##"<g stroke="#7aa6c2" stroke-width="1.2" fill="none">"##);
        for a in 0..n {
            for b in 0..n {
                let p = Vec2::new(
                    lo.x + w * (a as f64 + 0.5) / n as f64,
                    lo.y + h * (b as f64 + 0.5) / n as f64,
                );
                let v = field.sample(&p, 0.0) / vmax;
                if v.norm() < 1e-3 {
                    continue;
                }
                let (x0, y0) = px(&p);
                let (x1, y1) = (x0 + v.x * len, y0 - v.y * len);
                let (ux, uy) = ((x1 - x0) * 0.3, (y1 - y0) * 0.3);
                let _ = writeln!(
                    s,
                    r#"<path d="M{x0:.2},{y0:.2} L{x1:.2},{y1:.2} M{:.2},{:.2} L{x1:.2},{y1:.2} L{:.2},{:.2}"/>"#,
                    x1 - ux - uy * 0.5,
                    y1 - uy + ux * 0.5,
                    x1 - ux + uy * 0.5,
                    y1 - uy - ux * 0.5
                );
            }
        }
        let _ = writeln!(s, "</g>");
    }

    let mut draw = |r: &RunRecord, dash: &str| {
        let pts: Vec<String> = r
            .trajectory
            .positions()
            .iter()
            .map(|p| {
                let (x, y) = px(p);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#222" stroke-width="1.5"{dash}/>"##,
            pts.join(" ")
        );
        for (p, c) in r.trajectory.positions().iter().zip(&r.consumption.normalized) {
            let (x, y) = px(p);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{}"/>"#, ramp(*c));
        }
    };
    draw(&cmp.agnostic, r#" stroke-dasharray="4 3""#);
    if let Some(a) = &cmp.aware {
        draw(a, "");
    }

    for (p, color) in [
        (setup.config.start_position(), "#1a9641"),
        (setup.config.goal_position(), "#d7191c"),
    ] {
        let (x, y) = px(&p);
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" fill="{color}"/>"#,
            x - 5.0,
            y - 5.0
        );
    }
    for k in 0..=10 {
        let c = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="14" height="8" fill="{}"/>"#,
            10.0 + 14.0 * k as f64,
            ph - 18.0,
            ramp(c)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Recomputes a summary from a run directory's trajectories and config copy.
pub fn recompute_report(run_dir: &Path) -> Result<Summary, PlannerError> {
    let mut config = ScenarioConfig::load(&run_dir.join("config.toml"))?;
    let previous: Option<Summary> = std::fs::read_to_string(run_dir.join("summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    if let Some(p) = &previous {
        config = config.with_seed(p.seed);
    }
    let (grid, _) = config.build_sdf()?;
    let field = config.build_current(grid.frame())?;
    let load = |name: &str| -> Result<Option<Trajectory>, PlannerError> {
        let p = run_dir.join(name);
        if !p.exists() {
            return Ok(None);
        }
        let rows = read_trajectory_csv(&p)?;
        let states = rows
            .iter()
            .map(|r| SupportState::new(r.t, Vec2::new(r.x, r.y), Vec2::new(r.vx, r.vy)))
            .collect();
        Ok(Some(Trajectory::new(states)?))
    };
    let aware = load("trajectory_aware.csv")?;
    let agnostic = load("trajectory_agnostic.csv")?;
    let mut summary = previous.unwrap_or(Summary {
        name: config.name.clone(),
        seed: config.seed,
        status: "ok".into(),
        exit_code: 0,
        message: None,
        basis: None,
        aware: None,
        agnostic: None,
        improvement_percent: None,
    });
    let Some(field) = field else { return Ok(summary) };
    let total = |t: &Option<Trajectory>| t.as_ref().map(|t| consumption_report(t, &field));
    let (ra, rb) = (total(&aware), total(&agnostic));
    if let (Some(s), Some(r)) = (summary.aware.as_mut(), &ra) {
        s.total_consumption = r.total;
        s.signed_consumption = r.signed;
    }
    if let (Some(s), Some(r)) = (summary.agnostic.as_mut(), &rb) {
        s.total_consumption = r.total;
        s.signed_consumption = r.signed;
    }
    summary.basis = Some(ConsumptionBasis::Truth);
    summary.improvement_percent = match (&ra, &rb) {
        (Some(a), Some(b)) if b.total > 0.0 => Some(100.0 * (b.total - a.total) / b.total),
        _ => None,
    };
    Ok(summary)
}
