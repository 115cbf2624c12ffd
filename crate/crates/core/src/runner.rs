//! Dispatches a configuration to its experiment and writes the artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::{json, Value};

use crate::config::{ExperimentConfig, ExperimentKind, OutputFormat};
use crate::csv::CsvTable;
use crate::error::{Error, Result};
use crate::error_growth;
use crate::experiments::{self, ExperimentOptions, StabilizationReport};
use crate::kalman;
use crate::model;
use crate::particle::{self, ParticleSettings};
use crate::rng::{self, StreamTag};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PREDICATE_FAILED: i32 = 2;

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub directory: PathBuf,
    /// Written files, relative to `directory`, in write order.
    pub files: Vec<String>,
    /// Each checked expectation and whether it held.
    pub checks: Vec<(String, bool)>,
    pub summary: Value,
}

struct Sink {
    dir: PathBuf,
    csv: bool,
    json: bool,
    files: Vec<String>,
}

impl Sink {
    fn csv(&mut self, name: &str, table: &CsvTable) -> Result<()> {
        if self.csv {
            table.write_to(&self.dir.join(name))?;
            self.files.push(name.into());
        }
        Ok(())
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        if self.json {
            write_json(&self.dir.join(name), value)?;
            self.files.push(name.into());
        }
        Ok(())
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

/// Runs `cfg`, writing into `<output.directory>/<experiment>/`.
pub fn run_from_config(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let dir = Path::new(&cfg.output.directory).join(cfg.experiment.name());
    run_into(cfg, &dir)
}

/// Runs `cfg`, writing every artifact and `manifest.json` into `dir`.
pub fn run_into(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutcome> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    let started = Instant::now();
    let mut sink = Sink {
        dir: dir.to_path_buf(),
        csv: cfg.output.wants(OutputFormat::Csv),
        json: cfg.output.wants(OutputFormat::Json),
        files: Vec::new(),
    };
    let (summary, checks) = dispatch(cfg, &mut sink)?;
    let passed = checks.iter().all(|(_, ok)| *ok);
    let exit_code = if passed { EXIT_OK } else { EXIT_PREDICATE_FAILED };
    let manifest = json!({
        "experiment": cfg.experiment.name(),
        "config_sha256": cfg.hash(),
        "seed": cfg.numerics.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "wall_time_seconds": started.elapsed().as_secs_f64(),
        "config": cfg.to_json(),
        "files": sink.files,
        "checks": checks.iter().map(|(name, ok)| json!({"name": name, "passed": ok})).collect::<Vec<_>>(),
        "exit_code": exit_code,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    let mut files = sink.files;
    files.push("manifest.json".into());
    Ok(RunOutcome {
        exit_code,
        directory: dir.to_path_buf(),
        files,
        checks,
        summary,
    })
}

fn options(cfg: &ExperimentConfig) -> ExperimentOptions {
    ExperimentOptions {
        threshold: cfg.numerics.threshold,
        ess_threshold: cfg.numerics.ess_threshold,
        ..ExperimentOptions::default()
    }
}

fn report_checks(cfg: &ExperimentConfig, report: &StabilizationReport, checks: &mut Vec<(String, bool)>) {
    if let Some(want) = cfg.expect.stabilized {
        checks.push((format!("stabilized == {want}"), report.stabilized == want));
    }
    if let Some(max) = cfg.expect.max_plateau {
        let ok = report.plateau.is_some_and(|p| p <= max);
        checks.push((format!("plateau <= {max}"), ok));
    }
}

fn write_report(sink: &mut Sink, report: &StabilizationReport, sidecar: &Value) -> Result<()> {
    sink.csv("report.csv", &report.to_csv())?;
    if let Some(ens) = report.ensemble_csv() {
        sink.csv("ensemble.csv", &ens)?;
    }
    sink.json("report.json", sidecar)
}

fn dispatch(cfg: &ExperimentConfig, sink: &mut Sink) -> Result<(Value, Vec<(String, bool)>)> {
    let n = &cfg.numerics;
    let mut checks = Vec::new();
    let summary = match cfg.experiment {
        ExperimentKind::Simulate => {
            let model = cfg.model()?;
            let x0 = match &n.x0 {
                Some(x) => nalgebra::DVector::from_vec(x.clone()),
                None => cfg.prior_true()?.sample(&mut rng::stream(n.seed, StreamTag::InitialState, 0)),
            };
            let signal = model::simulate_signal(&model, &x0, n.dt, n.t_end, n.seed)?;
            let path = model::simulate_observation(&signal, &model, n.seed)?;
            sink.csv("path.csv", &path.to_csv())?;
            json!({"steps": path.steps(), "observation_sha256": path.observation_checksum()})
        }
        ExperimentKind::Kalman => {
            let model = cfg.model()?;
            let prior = cfg.prior_true()?;
            let path = experiments::simulate_realization(&model, &prior, n.t_end, n.dt, n.seed)?;
            let traj = kalman::run_kalman_bucy(&path, &prior, &model)?;
            let innovation = kalman::innovation_path(&path, &traj, &model)?;
            let qv: f64 = innovation.windows(2).map(|w| (&w[1] - &w[0]).norm_squared()).sum();
            sink.csv("path.csv", &path.to_csv())?;
            sink.csv("kalman.csv", &traj.to_csv())?;
            let last = traj.posterior(traj.len() - 1);
            let v = json!({
                "innovation_quadratic_variation": qv,
                "final_mean": last.mean.as_slice(),
                "final_cov": last.cov.row_iter().map(|r| r.iter().cloned().collect::<Vec<f64>>()).collect::<Vec<_>>(),
                "observation_sha256": path.observation_checksum(),
            });
            sink.json("kalman.json", &v)?;
            v
        }
        ExperimentKind::Pf => {
            let model = cfg.model()?;
            let prior = cfg.prior_true()?;
            let path = experiments::simulate_realization(&model, &prior, n.t_end, n.dt, n.seed)?;
            let settings = ParticleSettings {
                particles: n.particles,
                ess_threshold: n.ess_threshold,
                seed: rng::sub_seed(n.seed, StreamTag::Replica, 1),
                checkpoints: n.checkpoints.clone(),
            };
            let run = particle::run_particle_filter(&path, &prior, &model, &settings)?;
            sink.csv("path.csv", &path.to_csv())?;
            sink.csv("pf_summary.csv", &run.summary_csv())?;
            for (k, (_, cloud)) in run.checkpoints.iter().enumerate() {
                sink.csv(&format!("cloud_{k:03}.csv"), &cloud.to_csv())?;
            }
            let resamples = run.summaries.iter().filter(|s| s.resampled).count();
            let v = json!({
                "particles": run.particles,
                "resampling_events": resamples,
                "checkpoint_times": run.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(),
                "observation_sha256": path.observation_checksum(),
            });
            sink.json("pf.json", &v)?;
            v
        }
        ExperimentKind::Twin => {
            let model = cfg.model()?;
            let report = experiments::run_twin_filter_with(
                &model,
                &cfg.prior_true()?,
                &cfg.prior_wrong()?,
                n.t_end,
                n.dt,
                n.seed,
                cfg.filter,
                &options(cfg),
            )?;
            let sidecar = report.sidecar_json();
            write_report(sink, &report, &sidecar)?;
            report_checks(cfg, &report, &mut checks);
            sidecar
        }
        ExperimentKind::App2d => {
            let a = &cfg.app2d;
            let r = experiments::run_planar(a.lambda1, a.lambda2, a.h, a.obs_mode, n.t_end, n.dt, n.seed, &options(cfg))?;
            let sidecar = r.sidecar_json();
            write_report(sink, &r.report, &sidecar)?;
            report_checks(cfg, &r.report, &mut checks);
            if let Some(want) = cfg.expect.detectable {
                checks.push((format!("detectable == {want}"), r.detectable.holds == want));
            }
            sidecar
        }
        ExperimentKind::PriorDiv => {
            let model = cfg.model()?;
            let d = experiments::run_prior_divergence(&model, &cfg.prior_true()?, &cfg.prior_wrong()?, n.t_end, n.dt)?;
            sink.csv("prior_div.csv", &d.to_csv())?;
            let v = json!({"fitted_rate": d.fitted_rate, "final_gap": d.gap.last()});
            sink.json("prior_div.json", &v)?;
            v
        }
        ExperimentKind::NlBound => {
            let model = cfg.model()?;
            let report = experiments::run_nonlinear_boundedness(
                &model,
                &cfg.prior_true()?,
                &cfg.prior_wrong()?,
                n.t_end,
                n.dt,
                n.replicas,
                n.seed,
                n.particles,
                &options(cfg),
            )?;
            let sidecar = report.sidecar_json();
            write_report(sink, &report, &sidecar)?;
            report_checks(cfg, &report, &mut checks);
            sidecar
        }
        ExperimentKind::ErrorGrowth => {
            let eg = &cfg.error_growth;
            let table = error_growth::compare_models(&eg.params(), eg.s, n.t_end, n.dt)?;
            sink.csv("error_growth.csv", &table.to_csv())?;
            let mut v = json!({"s_imperfect": eg.s});
            if let Some(fit) = &eg.fit {
                let result = error_growth::fit_error_model(fit.kind, &fit.t, &fit.v, n.seed)?;
                v["fit"] = serde_json::to_value(&result).map_err(|e| Error::Io(e.to_string()))?;
            }
            sink.json("error_growth.json", &v)?;
            v
        }
        ExperimentKind::Are => {
            let model = cfg.model()?;
            let det = kalman::check_detectability(&model.drift, &model.observation);
            let stab = kalman::check_stabilizability(&model.drift, &model.diffusion);
            let mut v = json!({"detectable": det, "stabilizable": stab});
            if det.holds && stab.holds {
                let sol = kalman::solve_are(&model, cfg.are.tol, cfg.are.max_t)?;
                v["are"] = sol.to_json();
            }
            if let Some(want) = cfg.expect.detectable {
                checks.push((format!("detectable == {want}"), det.holds == want));
            }
            sink.json("are.json", &v)?;
            v
        }
    };
    Ok((summary, checks))
}

/// Command-line overrides applied to the raw JSON before validation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out: Option<String>,
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub particles: Option<usize>,
}

fn section<'a>(root: &'a mut serde_json::Map<String, Value>, key: &str) -> &'a mut serde_json::Map<String, Value> {
    let slot = root.entry(key).or_insert_with(|| json!({}));
    if !slot.is_object() {
        *slot = json!({});
    }
    slot.as_object_mut().expect("object just ensured")
}

/// Writes each override into `value`; `particles` also resizes a particle twin filter.
pub fn apply_overrides(value: &mut Value, o: &Overrides) -> Result<()> {
    let root = value
        .as_object_mut()
        .ok_or_else(|| Error::Config(vec!["configuration must be a JSON object".into()]))?;
    if let Some(kind) = o.experiment {
        root.insert("experiment".into(), json!(kind.name()));
    }
    if let Some(dir) = &o.out {
        section(root, "output").insert("directory".into(), json!(dir));
    }
    let numerics = section(root, "numerics");
    if let Some(seed) = o.seed {
        numerics.insert("seed".into(), json!(seed));
    }
    if let Some(dt) = o.dt {
        numerics.insert("dt".into(), json!(dt));
    }
    if let Some(t) = o.t_end {
        numerics.insert("T".into(), json!(t));
    }
    if let Some(n) = o.particles {
        numerics.insert("particles".into(), json!(n));
        if let Some(filter) = root.get_mut("filter").and_then(Value::as_object_mut) {
            if filter.get("kind").and_then(Value::as_str) == Some("particle") {
                filter.insert("particles".into(), json!(n));
            }
        }
    }
    Ok(())
}

/// Parses `text` (or an empty object), applies `o`, validates and runs.
pub fn run_with_overrides(text: Option<&str>, o: &Overrides) -> Result<RunOutcome> {
    let mut value: Value = match text {
        Some(t) => serde_json::from_str(t).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?,
        None => json!({}),
    };
    apply_overrides(&mut value, o)?;
    let cfg = crate::config::parse_config_value(&value)?;
    run_from_config(&cfg)
}
