use std::path::{Path, PathBuf};

use flowplan::geometry::{CurrentField, GridFrame, Vec2};
use flowplan::gp_prior::Trajectory;
use flowplan::planner::{
    consumption_report, read_trajectory_csv, run_scenario, trajectory_rows, write_trajectory_csv, Setup,
};
use flowplan::scenario::ScenarioConfig;

fn scenarios() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&scenarios().join(name)).unwrap()
}

const SMALL: &str = r#"
seed = 4
[map]
origin = [0.0, 0.0]
cell_size = 10.0
width = 80
height = 50
[start]
position = [60.0, 250.0]
[goal]
position = [740.0, 250.0]
[trajectory]
n_support = 15
total_time = 1400.0
[current]
kind = "uniform"
velocity = [0.0, 0.0]
[sensors]
positions = [[200.0, 200.0], [400.0, 300.0], [600.0, 200.0]]
noise_variance = 0.0
"#;

#[test]
fn zero_current_matches_the_agnostic_run() {
    let cfg = ScenarioConfig::parse(SMALL, Path::new("."), "small").unwrap();
    let (_, cmp) = run_scenario(cfg, true).unwrap();
    let aware = cmp.aware.unwrap();
    let agnostic = cmp.agnostic;
    for (a, b) in aware.steps.iter().zip(&agnostic.steps) {
        assert!((a.final_cost - b.final_cost).abs() < 1e-6);
        assert!(a.vc.iter().all(|v| *v == Vec2::zeros()));
    }
    assert_eq!(aware.trajectory, agnostic.trajectory);
    assert_eq!(aware.consumption.total, 0.0);
}

#[test]
fn replay_is_deterministic() {
    let cfg = load("crossing_a.toml");
    let setup = Setup::new(cfg.clone()).unwrap();
    let first = setup.run(true).unwrap();
    let second = Setup::new(cfg).unwrap().run(true).unwrap();
    assert_eq!(first, second);
    assert_eq!(first.steps.len(), setup.config.steps);
}

#[test]
fn flipped_pair_diverges() {
    let (_, a) = run_scenario(load("crossing_a.toml"), true).unwrap();
    let (_, b) = run_scenario(load("crossing_b.toml"), true).unwrap();
    let (ta, tb) = (a.aware.unwrap().trajectory, b.aware.unwrap().trajectory);
    let gap = ta
        .positions()
        .iter()
        .zip(tb.positions())
        .map(|(p, q)| (p - q).amax())
        .fold(0.0, f64::max);
    assert!(gap > 5.0 * 10.0, "max gap {gap}");
}

#[test]
fn aware_never_worse_on_shipped_scenarios() {
    for name in ["crossing_a.toml", "crossing_b.toml", "harbour_island.toml"] {
        let (_, cmp) = run_scenario(load(name), true).unwrap();
        let aware = cmp.aware.as_ref().unwrap();
        assert!(
            aware.consumption.total <= cmp.agnostic.consumption.total,
            "{name}: {} > {}",
            aware.consumption.total,
            cmp.agnostic.consumption.total
        );
        for r in [aware, &cmp.agnostic] {
            assert!(r.reached_goal);
            let max = r.consumption.normalized.iter().cloned().fold(0.0, f64::max);
            assert_eq!(max, 1.0);
            assert!(r.consumption.normalized.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }
}

#[test]
fn doubling_the_field_raises_agnostic_consumption_on_shipped_scenarios() {
    for name in ["crossing_a.toml", "crossing_b.toml", "harbour_island.toml"] {
        let setup = Setup::new(load(name)).unwrap();
        let field = setup.truth.clone().unwrap();
        let run = setup.run(false).unwrap();
        let base = consumption_report(&run.trajectory, &field).total;
        let doubled = consumption_report(&run.trajectory, &field.scaled(2.0)).total;
        assert!(doubled >= base, "{name}: {doubled} < {base}");
    }
}

#[test]
fn doubling_can_lower_consumption_when_current_runs_with_the_vehicle() {
    // ‖v - vc‖ |sin α| is not homogeneous in vc: a mostly following current
    // shrinks the relative velocity when scaled up.
    let frame = GridFrame::new([0.0, 0.0], 1.0, 4, 4).unwrap();
    let field = CurrentField::new(frame, vec![0.0], vec![Vec2::new(0.5, 0.1); 16]).unwrap();
    let traj = Trajectory::from_parts(0.0, 1.0, &[(Vec2::new(1.0, 1.0), Vec2::new(1.0, 0.0)); 2]).unwrap();
    let base = consumption_report(&traj, &field).total;
    let doubled = consumption_report(&traj, &field.scaled(2.0)).total;
    assert!(doubled < base);
}

#[test]
fn trajectory_csv_round_trips() {
    let cfg = ScenarioConfig::parse(SMALL, Path::new("."), "small").unwrap();
    let (_, cmp) = run_scenario(cfg, false).unwrap();
    let rows = trajectory_rows(&cmp.agnostic);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.csv");
    write_trajectory_csv(&path, &rows).unwrap();
    let back = read_trajectory_csv(&path).unwrap();
    assert_eq!(back.len(), rows.len());
    for (a, b) in rows.iter().zip(&back) {
        for (x, y) in [(a.t, b.t), (a.x, b.x), (a.y, b.y), (a.vx, b.vx), (a.vy, b.vy), (a.consumption, b.consumption)] {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}

fn cli() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_flowplan"))
}

#[test]
fn cli_writes_outputs_and_a_wellformed_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let status = cli()
        .args(["plan", "--config"])
        .arg(scenarios().join("harbour_island.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for f in ["trajectory_aware.csv", "trajectory_agnostic.csv", "currents.csv", "summary.json", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let svg = std::fs::read_to_string(out.join("plot.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.root_element().tag_name().name(), "svg");
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);

    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let report = cli().args(["report", "--run"]).arg(&out).output().unwrap();
    assert!(report.status.success());
    let again: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let pct = |v: &serde_json::Value| v["improvement_percent"].as_f64().unwrap();
    assert!((pct(&summary) - pct(&again)).abs() < 1e-9);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("kind = \"uniform\"", "kind = \"whirlpool\"")).unwrap();
    let out = dir.path().join("bad_run");
    let r = cli().args(["plan", "--config"]).arg(&bad).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(4));
    assert!(out.join("summary.json").exists());

    // goal sealed inside a ring of rock
    let walled = SMALL.replace(
        "height = 50",
        "height = 50\nrects = [{ min = [680.0, 190.0], max = [800.0, 200.0] }, { min = [680.0, 300.0], max = [800.0, 310.0] }, { min = [680.0, 190.0], max = [690.0, 310.0] }]",
    );
    let path = dir.path().join("walled.toml");
    std::fs::write(&path, walled).unwrap();
    let out = dir.path().join("walled_run");
    let r = cli().args(["plan", "--config"]).arg(&path).arg("--out").arg(&out).output().unwrap();
    assert_eq!(r.status.code(), Some(2), "{}", String::from_utf8_lossy(&r.stderr));
    let names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("summary.json")]);
}

#[test]
fn cli_train_then_track() {
    use flowplan::geometry::{write_measurements, MeasurementSet};
    let dir = tempfile::tempdir().unwrap();
    let sensors = [Vec2::new(0.0, 0.0), Vec2::new(300.0, 0.0), Vec2::new(0.0, 300.0)];
    let sets: Vec<MeasurementSet> = (0..80)
        .map(|k| {
            let t = k as f64 * 300.0;
            let values = sensors
                .iter()
                .map(|p| {
                    let phase = t / 4000.0 + p.x / 900.0 + p.y / 700.0;
                    Vec2::new(0.2 * phase.sin(), 0.1 * (1.3 * phase).cos())
                })
                .collect();
            MeasurementSet::new(t, sensors.to_vec(), values, 1e-4).unwrap()
        })
        .collect();
    let data = dir.path().join("obs.csv");
    write_measurements(std::fs::File::create(&data).unwrap(), &sets).unwrap();
    let model = dir.path().join("model.json");
    let r = cli().args(["train", "--data"]).arg(&data).arg("--out").arg(&model).output().unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));

    let points = dir.path().join("points.csv");
    std::fs::write(&points, "x,y\n100.0,100.0\n0.0,0.0\n").unwrap();
    let r = cli()
        .args(["track", "--model"])
        .arg(&model)
        .arg("--data")
        .arg(&data)
        .arg("--points")
        .arg(&points)
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(r.stdout).unwrap();
    let last = text.lines().last().unwrap();
    let cols: Vec<f64> = last.split(',').map(|c| c.parse().unwrap()).collect();
    // the second point is a sensor: its estimate sits on the last reading
    let want = sets.last().unwrap().values[0];
    assert!((cols[3] - want.x).abs() < 0.02 && (cols[4] - want.y).abs() < 0.02, "{last}");
    assert_eq!(text.lines().count(), 1 + 2 * sets.len());
}
