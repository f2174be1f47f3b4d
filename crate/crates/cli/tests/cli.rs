use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

/// One synthetic day and a short horizon keep the robust LPs small.
const SMALL: &str = r#"{
  "weather": { "synthetic": { "days": 1 } },
  "controller": { "horizon": 3 }
}"#;

fn ghmpc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ghmpc"))
        .args(args)
        .current_dir(dir)
        .env("GHMPC_LOG", "error")
        .output()
        .expect("binary runs")
}

fn workspace(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("config.json"), config).unwrap();
    dir
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn reports_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("report_") && n.ends_with(".json"))
        .collect();
    names.sort();
    names
}

#[test]
fn validate_config_prints_the_resolved_config() {
    let dir = workspace(SMALL);
    let out = ghmpc(dir.path(), &["validate-config", "-c", "config.json", "--set", "seed=9"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["controller"]["horizon"], 3);
    assert_eq!(v["weather"]["synthetic"]["days"], 1);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = workspace(r#"{ "controler": { "horizon": 3 } }"#);
    let cases: [&[&str]; 5] = [
        &["validate-config", "-c", "config.json"],
        &["validate-config", "--set", "controller.horizn=4"],
        &["validate-config", "--set", "controller.horizon=0"],
        &["validate-config", "--set", "uncertainty.eps=1.5"],
        &["validate-config", "-c", "missing.json"],
    ];
    for args in cases {
        let out = ghmpc(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", stderr(&out));
        assert!(stderr(&out).starts_with("error: "));
    }
}

#[test]
fn too_few_calibration_samples_is_a_data_error() {
    let dir = workspace(SMALL);
    let out = ghmpc(dir.path(), &["learn", "-c", "config.json", "--set", "uncertainty.n_calib=44"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("45"), "{}", stderr(&out));
}

#[test]
fn learning_is_reproducible() {
    let a = workspace(SMALL);
    let b = workspace(SMALL);
    for d in [&a, &b] {
        let out = ghmpc(d.path(), &["learn", "-c", "config.json"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    }
    for name in ["svc_temperature.json", "svc_solar.json", "learning_report.json"] {
        let x = fs::read(a.path().join("models").join(name)).unwrap();
        let y = fs::read(b.path().join("models").join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between runs");
    }
}

#[test]
fn perfect_training_forecasts_give_a_zero_radius() {
    let dir = workspace(SMALL);
    let out = ghmpc(
        dir.path(),
        &[
            "learn",
            "-c",
            "config.json",
            "--set",
            "uncertainty.training.synthetic.temp_error_sd_c=0",
            "--set",
            "uncertainty.training.synthetic.cloud_error_sd_okta=0",
        ],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report: Value = serde_json::from_slice(&fs::read(dir.path().join("models/learning_report.json")).unwrap()).unwrap();
    for ch in report["channels"].as_array().unwrap() {
        assert_eq!(ch["theta"].as_f64(), Some(0.0), "{ch}");
    }
}

#[test]
fn simulate_without_models_points_at_learn() {
    let dir = workspace(SMALL);
    let out = ghmpc(dir.path(), &["simulate", "-c", "config.json", "--strategies", "ddrmpc"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("ghmpc learn"), "{}", stderr(&out));
}

#[test]
fn baseline_alone_gives_one_report() {
    let dir = workspace(SMALL);
    let out = ghmpc(dir.path(), &["simulate", "-c", "config.json", "--strategies", "pb"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let reports = dir.path().join("reports");
    assert_eq!(reports_in(&reports).len(), 1);
    let csv = fs::read_to_string(reports.join("tradeoff.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert!(lines[1].starts_with("pb,"));
}

#[test]
fn full_pipeline_and_plot_data() {
    let dir = workspace(SMALL);
    let learn = ghmpc(dir.path(), &["learn", "-c", "config.json"]);
    assert_eq!(learn.status.code(), Some(0), "{}", stderr(&learn));
    let sim = ghmpc(dir.path(), &["simulate", "-c", "config.json"]);
    assert_eq!(sim.status.code(), Some(0), "{}", stderr(&sim));
    let reports = dir.path().join("reports");
    let names = reports_in(&reports);
    assert_eq!(names.len(), 5, "{names:?}");
    for s in ["pb", "rbc", "cempc", "ddrmpc", "rmpc_omega6"] {
        assert!(names.iter().any(|n| n.starts_with(&format!("report_{s}_"))), "no {s} report");
    }
    let table = fs::read_to_string(reports.join("tradeoff.csv")).unwrap();
    assert_eq!(table.lines().count(), 6);

    let pb = reports.join(names.iter().find(|n| n.starts_with("report_pb_")).unwrap());
    let plot = ghmpc(dir.path(), &["plotdata", pb.to_str().unwrap()]);
    assert_eq!(plot.status.code(), Some(0), "{}", stderr(&plot));
    let text = String::from_utf8(plot.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("timestamp,series,value"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 24 * 3);
    let bound_at = |ts: &str| -> f64 {
        rows.iter().find(|r| r[0] == ts && r[1] == "bound").unwrap()[2].parse().unwrap()
    };
    // local time is UTC-5: the day bound runs 06:00 to 22:00 local
    assert_eq!(bound_at("2018-01-01T10:00:00Z"), 18.0);
    assert_eq!(bound_at("2018-01-01T11:00:00Z"), 25.0);
    assert_eq!(bound_at("2018-01-02T02:00:00Z"), 25.0);
    assert_eq!(bound_at("2018-01-02T03:00:00Z"), 18.0);

    // all reports at once: strategy-tagged series, one bound
    let out_file = dir.path().join("plot.csv");
    let all = ghmpc(dir.path(), &["plotdata", "reports", "-o", out_file.to_str().unwrap()]);
    assert_eq!(all.status.code(), Some(0), "{}", stderr(&all));
    let text = fs::read_to_string(out_file).unwrap();
    assert_eq!(text.lines().filter(|l| l.contains(",bound,")).count(), 24);
    assert!(text.contains(",air_temp:ddrmpc,"));
    assert!(text.contains(",u:rbc,"));
}

#[test]
fn omega_sweep_runs_every_budget() {
    let dir = workspace(SMALL);
    let out = ghmpc(dir.path(), &["simulate", "-c", "config.json", "--strategies", "pb", "--omega-sweep"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let names = reports_in(&dir.path().join("reports"));
    for k in 0..=6 {
        assert!(names.iter().any(|n| n.starts_with(&format!("report_rmpc_omega{k}_"))), "omega {k} missing: {names:?}");
    }
    assert_eq!(names.len(), 8);
}

#[test]
fn nested_typos_in_a_config_file_are_rejected() {
    let dir = workspace(r#"{ "controller": { "horizn": 3 } }"#);
    let out = ghmpc(dir.path(), &["validate-config", "-c", "config.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}
