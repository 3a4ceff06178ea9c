use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowplan::geometry::{ingest_measurements, Vec2};
use flowplan::planner::{emit_outputs, failure_summary, recompute_report, run_scenario, write_summary, PlannerError};
use flowplan::scenario::ScenarioConfig;
use flowplan::tracker::track_step;
use flowplan::tracker::CurrentBelief;
use flowplan::training::{derive_model, fit_hyperparams, median_step, FitOptions, ModelFile, TrainingSet};

#[derive(Parser)]
#[command(name = "flowplan", version, about = "Current-aware trajectory planning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan through a scenario and write trajectories, estimates and a plot.
    Plan {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Only run the planner without the current factor.
        #[arg(long)]
        disable_current_factor: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fit tracker hyperparameters to a measurement CSV.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampling period of the derived model; median time step when unset.
        #[arg(long)]
        ts: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the tracker over a measurement CSV and print estimates at points.
    Track {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// CSV with `x,y` columns.
        #[arg(long)]
        points: PathBuf,
        /// Association gate in meters; three spatial length scales when unset.
        #[arg(long)]
        gate: Option<f64>,
    },
    /// Recompute a run directory's summary from its outputs.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Planner(#[from] PlannerError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            Self::Planner(e) => e.exit_code() as u8,
            Self::Other(_) => 1,
        }
    }
}

fn other<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Other(e.to_string())
}

fn plan(config_path: &Path, out: &Path, disable: bool, seed: Option<u64>, steps: Option<usize>) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(other)?;
    let mut config = match ScenarioConfig::load(config_path) {
        Ok(c) => c,
        Err(e) => {
            let e = PlannerError::from(e);
            write_summary(&out.join("summary.json"), &failure_summary(None, &e))?;
            return Err(e.into());
        }
    };
    if let Some(s) = seed {
        config = config.with_seed(s);
    }
    if let Some(s) = steps {
        config.steps = s;
    }
    let text = std::fs::read_to_string(config_path).map_err(other)?;
    match run_scenario(config.clone(), !disable) {
        Ok((setup, cmp)) => {
            emit_outputs(&setup, &cmp, out, &text)?;
            let s = cmp.summary(&setup.config);
            if let Some(a) = &s.aware {
                println!("aware    consumption {:.4}", a.total_consumption);
            }
            if let Some(b) = &s.agnostic {
                println!("agnostic consumption {:.4}", b.total_consumption);
            }
            if let Some(p) = s.improvement_percent {
                println!("improvement {p:.2}%");
            }
            Ok(())
        }
        Err(e) => {
            write_summary(&out.join("summary.json"), &failure_summary(Some(&config), &e))?;
            Err(e.into())
        }
    }
}

fn train(data: &Path, out: &Path, ts: Option<f64>, seed: u64) -> Result<(), CliError> {
    let sets = ingest_measurements(data).map_err(other)?;
    let set = TrainingSet::from_measurements(&sets).map_err(other)?;
    let fit = fit_hyperparams(
        &set,
        &FitOptions {
            seed,
            ..FitOptions::default()
        },
    )
    .map_err(other)?;
    let times: Vec<f64> = sets.iter().map(|s| s.time).collect();
    let ts = ts.or_else(|| median_step(&times)).unwrap_or(1.0);
    let model = derive_model(&fit, ts).map_err(other)?;
    ModelFile::from_model(&model, Some(fit)).save(out).map_err(other)?;
    println!(
        "temporal sigma {:.6} length {:.3}; spatial length {:.3}",
        fit.temporal.hp.sigma, fit.temporal.hp.length, fit.spatial.hp.length
    );
    Ok(())
}

fn track(model: &Path, data: &Path, points: &Path, gate: Option<f64>) -> Result<(), CliError> {
    let model = ModelFile::load(model).and_then(|m| m.to_model()).map_err(other)?;
    let sets = ingest_measurements(data).map_err(other)?;
    let mut reader = csv::Reader::from_path(points).map_err(other)?;
    let pts: Vec<Vec2> = reader
        .deserialize::<(f64, f64)>()
        .map(|r| r.map(|(x, y)| Vec2::new(x, y)))
        .collect::<Result<_, _>>()
        .map_err(other)?;
    let gate = gate.unwrap_or(3.0 * model.spatial.length);
    let Some(first) = sets.first() else {
        return Err(CliError::Other("measurement file is empty".into()));
    };
    let mut belief = CurrentBelief::prior(pts.clone(), &model, first.time - model.ts);
    let mut out = csv::Writer::from_writer(std::io::stdout());
    out.write_record(["t", "x", "y", "vx", "vy", "std"]).map_err(other)?;
    for ms in &sets {
        let m = model.with_step(ms.time - belief.time).map_err(other)?;
        belief = track_step(&belief, &m, Some(ms), &pts, gate).map_err(other)?;
        for (p, (v, sd)) in pts.iter().zip(belief.query(&pts, &m).map_err(other)?) {
            out.serialize((ms.time, p.x, p.y, v.x, v.y, sd)).map_err(other)?;
        }
    }
    out.flush().map_err(other)?;
    Ok(())
}

fn report(run: &Path) -> Result<(), CliError> {
    let summary = recompute_report(run)?;
    write_summary(&run.join("summary.json"), &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).map_err(other)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Plan {
            config,
            out,
            disable_current_factor,
            seed,
            steps,
        } => plan(&config, &out, disable_current_factor, seed, steps),
        Command::Train { data, out, ts, seed } => train(&data, &out, ts, seed),
        Command::Track {
            model,
            data,
            points,
            gate,
        } => track(&model, &data, &points, gate),
        Command::Report { run } => report(&run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
