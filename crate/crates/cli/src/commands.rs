use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use greenhouse_core::config::{ExperimentConfig, Strategy};
use greenhouse_core::control::{ControllerKind, StrategyController};
use greenhouse_core::io::{read_json, write_atomic, write_json};
use greenhouse_core::sim::{compare_strategies, run_closed_loop, ScenarioRun, SimulationReport};
use greenhouse_core::uncertainty::{learn_svc, SetKind, UncertaintySet};
use greenhouse_core::weather::{extract_errors, format_timestamp, ErrorField};
use greenhouse_core::Error;
use serde_json::json;

use crate::{load_config, Failure, GlobalArgs};

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Comma-separated subset of pb, rbc, cempc, ddrmpc, rmpc.
    #[arg(long, value_delimiter = ',')]
    pub strategies: Option<Vec<Strategy>>,
    /// Run RMPC for every budget 0, 1, ..., 6.
    #[arg(long)]
    pub omega_sweep: bool,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// Report JSON files, or directories searched for `report_*.json`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Print to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() != std::io::ErrorKind::BrokenPipe {
            log::warn!("writing to stdout: {e}");
        }
    }
}

fn data_base(g: &GlobalArgs) -> PathBuf {
    g.config
        .as_deref()
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_default()
}

fn model_path(cfg: &ExperimentConfig, field: ErrorField) -> PathBuf {
    cfg.output.models_dir.join(format!("svc_{}.json", field.name()))
}

pub fn validate_config(g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    emit(&(cfg.to_json()? + "\n"));
    Ok(())
}

pub fn learn(g: &GlobalArgs) -> Result<(), Failure> {
    let cfg = load_config(g)?;
    let fields: BTreeSet<_> = cfg.uncertainty.fields.iter().map(|f| f.name()).collect();
    if fields.len() != cfg.uncertainty.fields.len() {
        return Err(Failure::Config("uncertainty.fields lists a channel twice".into()));
    }
    let series = cfg.training_weather(&data_base(g))?;
    let horizon = cfg.controller.horizon;
    let opts = cfg.learn_options();
    let mut channels = Vec::new();
    for &field in &cfg.uncertainty.fields {
        let (samples, gaps) = extract_errors(&series, horizon, field)?;
        let model = learn_svc(&samples, &opts)?;
        let theta = model.theta.unwrap_or(f64::NAN);
        emit(&format!(
            "{}: N_train={} N_calib={} theta={theta:.6} support_vectors={}\n",
            field.name(),
            model.n_train,
            model.n_calib.unwrap_or(0),
            model.support_vectors.len()
        ));
        channels.push(json!({
            "field": field,
            "n_samples": samples.len(),
            "n_train": model.n_train,
            "n_calib": model.n_calib,
            "theta": model.theta,
            "support_vectors": model.support_vectors.len(),
            "kkt_residual": model.kkt_residual,
            "dual_iterations": model.iterations,
            "windows_skipped": gaps.windows_skipped,
        }));
        let path = model_path(&cfg, field);
        write_json(&path, &UncertaintySet::svc(model, field))?;
        log::info!("wrote {}", path.display());
    }
    let report = json!({
        "horizon": horizon,
        "eps": opts.eps,
        "beta": opts.beta,
        "nu": opts.nu,
        "seed": cfg.seed,
        "channels": channels,
    });
    write_json(cfg.output.models_dir.join("learning_report.json"), &report)?;
    Ok(())
}

fn load_sets(cfg: &ExperimentConfig) -> Result<Vec<UncertaintySet>, Failure> {
    let mut sets = Vec::new();
    for &field in &cfg.uncertainty.fields {
        let path = model_path(cfg, field);
        if !path.exists() {
            return Err(Failure::Data(format!(
                "no learned uncertainty set at {}; run `ghmpc learn` with the same config first",
                path.display()
            )));
        }
        let set: UncertaintySet = read_json(&path)?;
        let stale = match &set.kind {
            SetKind::Svc(m) => m.theta.is_none() || set.channel != field,
            _ => set.channel != field,
        };
        if stale || set.dim() != cfg.controller.horizon {
            return Err(Failure::Data(format!(
                "{} does not match the config (channel {}, horizon {}); rerun `ghmpc learn`",
                path.display(),
                field.name(),
                cfg.controller.horizon
            )));
        }
        sets.push(set);
    }
    Ok(sets)
}

pub fn simulate(g: &GlobalArgs, args: &SimulateArgs) -> Result<(), Failure> {
    let mut cfg = load_config(g)?;
    if let Some(s) = &args.strategies {
        cfg.strategies = s.clone();
    }
    if args.omega_sweep {
        cfg.omegas = (0..=6).map(f64::from).collect();
        if !cfg.strategies.contains(&Strategy::Rmpc) {
            cfg.strategies.push(Strategy::Rmpc);
        }
    }
    cfg.validate()?;

    let sets = if cfg.strategies.contains(&Strategy::Ddrmpc) {
        Some(load_sets(&cfg)?)
    } else {
        None
    };
    let series = cfg.simulation_weather(&data_base(g))?;
    let model = cfg.build_model()?;
    let mut kinds = cfg.controller_kinds(sets.as_deref())?;
    if !kinds.contains(&ControllerKind::Pb) {
        log::info!("adding the perfect-forecast bound as the trade-off baseline");
        kinds.insert(0, ControllerKind::Pb);
    }
    let periods = cfg.periods(&series)?;
    let x0 = cfg.initial_state();

    for period in &periods {
        let dir = if periods.len() > 1 {
            cfg.output.reports_dir.join(&period.label)
        } else {
            cfg.output.reports_dir.clone()
        };
        let mut reports: Vec<SimulationReport> = Vec::new();
        for kind in &kinds {
            let clock = Instant::now();
            let controller = StrategyController::new(kind.clone(), cfg.controller, model.clone())?;
            let report = run_closed_loop(ScenarioRun {
                strategy: kind.label(),
                controller: Box::new(controller),
                config: cfg.controller,
                weather: &series,
                model: model.clone(),
                x0: x0.clone(),
                period: period.clone(),
            })?;
            log::info!(
                "{} over {}: {} steps in {:.1} s",
                report.strategy,
                period.label,
                report.metrics.steps,
                clock.elapsed().as_secs_f64()
            );
            if report.solver.fallback_steps > 0 {
                log::warn!(
                    "{}: {} steps fell back to the rule-based input",
                    report.strategy,
                    report.solver.fallback_steps
                );
            }
            report.write(&dir)?;
            reports.push(report);
        }
        let pb = reports
            .iter()
            .find(|r| r.strategy == ControllerKind::Pb.label())
            .expect("baseline is always run");
        let table = compare_strategies(&reports, pb)?;
        table.write(&dir)?;
        emit(&format!("period {}\n{}", period.label, table.to_csv()));
    }
    Ok(())
}

fn collect_reports(paths: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let entries = std::fs::read_dir(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
            let mut found: Vec<PathBuf> = entries
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| {
                    let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    name.starts_with("report_") && name.ends_with(".json")
                })
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        return Err(Failure::Data("no report files found".into()));
    }
    Ok(files)
}

/// Long-format rows. With several reports every series name carries the
/// strategy; the bound is emitted once per period.
pub fn plotdata(args: &PlotArgs) -> Result<(), Failure> {
    let files = collect_reports(&args.reports)?;
    let reports = files
        .iter()
        .map(read_json::<SimulationReport>)
        .collect::<Result<Vec<_>, Error>>()?;
    let tag = |name: &str, r: &SimulationReport| {
        if reports.len() > 1 {
            format!("{name}:{}", r.strategy)
        } else {
            name.to_string()
        }
    };
    let mut out = String::from("timestamp,series,value\n");
    let mut bounds_done = BTreeSet::new();
    for r in &reports {
        let bound = bounds_done.insert((r.period.start, r.period.end));
        for rec in &r.records {
            let ts = format_timestamp(rec.timestamp);
            let _ = writeln!(out, "{ts},{},{}", tag("air_temp", r), rec.states[0]);
            if bound {
                let _ = writeln!(out, "{ts},bound,{}", rec.bound);
            }
            let _ = writeln!(out, "{ts},{},{}", tag("u", r), rec.u);
        }
    }
    match &args.output {
        Some(path) => write_atomic(path, out.as_bytes())?,
        None => emit(&out),
    }
    Ok(())
}
