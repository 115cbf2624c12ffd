//! JSON experiment configuration.
//!
//! Parsing is strict: unknown keys, shape errors and missing required fields
//! are all collected and reported together.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::error_growth::{self, ErrorGrowthParams, ErrorModelKind};
use crate::experiments::{FilterKind, ObsMode};
use crate::linalg;
use crate::model::{grid_steps, GaussianMeasure, ModelSpec, Nonlinearity};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_T: f64 = 30.0;
pub const DEFAULT_PARTICLES: usize = 1024;
pub const DEFAULT_REPLICAS: usize = 32;
pub const DEFAULT_OUTPUT_DIR: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Simulate,
    Kalman,
    Pf,
    Twin,
    App2d,
    PriorDiv,
    NlBound,
    ErrorGrowth,
    Are,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Simulate,
        ExperimentKind::Kalman,
        ExperimentKind::Pf,
        ExperimentKind::Twin,
        ExperimentKind::App2d,
        ExperimentKind::PriorDiv,
        ExperimentKind::NlBound,
        ExperimentKind::ErrorGrowth,
        ExperimentKind::Are,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Kalman => "kalman",
            ExperimentKind::Pf => "pf",
            ExperimentKind::Twin => "twin",
            ExperimentKind::App2d => "app2d",
            ExperimentKind::PriorDiv => "prior-div",
            ExperimentKind::NlBound => "nl-bound",
            ExperimentKind::ErrorGrowth => "error-growth",
            ExperimentKind::Are => "are",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            ExperimentKind::Simulate => "simulate one signal and observation path",
            ExperimentKind::Kalman => "Kalman-Bucy filter on a simulated path",
            ExperimentKind::Pf => "bootstrap particle filter on a simulated path",
            ExperimentKind::Twin => "two filters from different priors on one observation path",
            ExperimentKind::App2d => "two-dimensional unstable example under an observation scheme",
            ExperimentKind::PriorDiv => "W2 gap between two unconditioned prior flows",
            ExperimentKind::NlBound => "replica-averaged twin particle filters on a bounded-perturbation model",
            ExperimentKind::ErrorGrowth => "error-growth model comparison and optional fit",
            ExperimentKind::Are => "algebraic Riccati equation with Hautus checks",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    fn needs_model(self) -> bool {
        !matches!(self, ExperimentKind::App2d | ExperimentKind::ErrorGrowth)
    }

    fn needs_true_prior(self) -> bool {
        matches!(
            self,
            ExperimentKind::Kalman
                | ExperimentKind::Pf
                | ExperimentKind::Twin
                | ExperimentKind::PriorDiv
                | ExperimentKind::NlBound
        )
    }

    fn needs_wrong_prior(self) -> bool {
        matches!(self, ExperimentKind::Twin | ExperimentKind::PriorDiv | ExperimentKind::NlBound)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelConfig {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "H")]
    pub h: Vec<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub drift_nonlinear: Nonlinearity,
    pub obs_nonlinear: Nonlinearity,
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        ModelSpec::new(
            to_matrix(&self.f),
            self.drift_nonlinear.clone(),
            to_matrix(&self.h),
            self.obs_nonlinear.clone(),
            to_matrix(&self.sigma),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorConfig {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

impl PriorConfig {
    pub fn build(&self) -> Result<GaussianMeasure> {
        GaussianMeasure::new(DVector::from_vec(self.mean.clone()), to_matrix(&self.cov))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorsConfig {
    #[serde(rename = "true", skip_serializing_if = "Option::is_none")]
    pub truth: Option<PriorConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wrong: Option<PriorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Numerics {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub seed: u64,
    pub particles: usize,
    pub ess_threshold: f64,
    pub checkpoints: Vec<f64>,
    pub replicas: usize,
    pub threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputConfig {
    pub directory: String,
    pub formats: Vec<OutputFormat>,
}

impl OutputConfig {
    pub fn wants(&self, f: OutputFormat) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct App2dConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub h: f64,
    pub obs_mode: ObsMode,
}

impl Default for App2dConfig {
    fn default() -> Self {
        App2dConfig {
            lambda1: -1.0,
            lambda2: 1.0,
            h: 1.0,
            obs_mode: ObsMode::UnstableOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitConfig {
    pub kind: ErrorModelKind,
    pub t: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorGrowthConfig {
    pub alpha: f64,
    #[serde(rename = "V0")]
    pub v0: f64,
    #[serde(rename = "V_inf")]
    pub v_inf: f64,
    pub a_lorenz: f64,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitConfig>,
}

impl ErrorGrowthConfig {
    pub fn params(&self) -> ErrorGrowthParams {
        ErrorGrowthParams {
            alpha: self.alpha,
            s: 0.0,
            v_inf: self.v_inf,
            a_lorenz: self.a_lorenz,
            v0: self.v0,
        }
    }
}

impl Default for ErrorGrowthConfig {
    fn default() -> Self {
        let p = ErrorGrowthParams::comparison_defaults();
        ErrorGrowthConfig {
            alpha: p.alpha,
            v0: p.v0,
            v_inf: p.v_inf,
            a_lorenz: p.a_lorenz,
            s: 6.0,
            fit: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreConfig {
    pub tol: f64,
    pub max_t: f64,
}

impl Default for AreConfig {
    fn default() -> Self {
        AreConfig { tol: 1e-12, max_t: 200.0 }
    }
}

/// Predicates that turn a completed run into exit status 2 when violated.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Expectation {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stabilized: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detectable: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_plateau: Option<f64>,
}

impl Expectation {
    pub fn is_empty(&self) -> bool {
        self.stabilized.is_none() && self.detectable.is_none() && self.max_plateau.is_none()
    }
}

/// A fully resolved configuration; every default is explicit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    pub numerics: Numerics,
    pub priors: PriorsConfig,
    pub output: OutputConfig,
    pub filter: FilterKind,
    pub app2d: App2dConfig,
    pub error_growth: ErrorGrowthConfig,
    pub are: AreConfig,
    #[serde(skip_serializing_if = "Expectation::is_empty")]
    pub expect: Expectation,
}

impl ExperimentConfig {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact resolved configuration.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn model(&self) -> Result<ModelSpec> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["model block is required".into()]))?
            .build()
    }

    pub fn prior_true(&self) -> Result<GaussianMeasure> {
        self.priors
            .truth
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["priors.true is required".into()]))?
            .build()
    }

    pub fn prior_wrong(&self) -> Result<GaussianMeasure> {
        self.priors
            .wrong
            .as_ref()
            .ok_or_else(|| Error::Config(vec!["priors.wrong is required".into()]))?
            .build()
    }
}

fn to_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

fn shape(rows: &[Vec<f64>]) -> (usize, usize) {
    (rows.len(), rows.first().map_or(0, Vec::len))
}

/// Violation collector with a key-path prefix.
struct Checker {
    errors: Vec<String>,
}

impl Checker {
    fn err(&mut self, msg: String) {
        self.errors.push(msg);
    }

    fn object<'a>(&mut self, v: &'a Value, path: &str, allowed: &[&str]) -> Option<&'a Map<String, Value>> {
        let Some(map) = v.as_object() else {
            self.err(format!("`{path}` must be an object"));
            return None;
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                let full = if path.is_empty() { key.clone() } else { format!("{path}.{key}") };
                self.err(format!("unknown key `{full}`"));
            }
        }
        Some(map)
    }

    fn f64_at(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<f64> {
        let v = map.get(key)?;
        match v.as_f64() {
            Some(x) if x.is_finite() => Some(x),
            _ => {
                self.err(format!("`{path}.{key}` must be a finite number"));
                None
            }
        }
    }

    fn u64_at(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<u64> {
        let v = map.get(key)?;
        match v.as_u64() {
            Some(x) => Some(x),
            None => {
                self.err(format!("`{path}.{key}` must be a nonnegative integer"));
                None
            }
        }
    }

    fn vec_at(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<Vec<f64>> {
        let v = map.get(key)?;
        let out: Option<Vec<f64>> = v
            .as_array()
            .and_then(|a| a.iter().map(|x| x.as_f64().filter(|f| f.is_finite())).collect());
        if out.is_none() {
            self.err(format!("`{path}.{key}` must be an array of finite numbers"));
        }
        out
    }

    fn matrix_at(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<Vec<Vec<f64>>> {
        let v = map.get(key)?;
        let rows: Option<Vec<Vec<f64>>> = v.as_array().and_then(|rows| {
            rows.iter()
                .map(|r| r.as_array().and_then(|r| r.iter().map(|x| x.as_f64().filter(|f| f.is_finite())).collect()))
                .collect()
        });
        let Some(rows) = rows else {
            self.err(format!("`{path}.{key}` must be a nested array of finite numbers"));
            return None;
        };
        if rows.is_empty() || rows[0].is_empty() {
            self.err(format!("`{path}.{key}` must be non-empty"));
            return None;
        }
        if rows.iter().any(|r| r.len() != rows[0].len()) {
            self.err(format!("`{path}.{key}` has rows of unequal length"));
            return None;
        }
        Some(rows)
    }

    fn typed_at<T: for<'de> Deserialize<'de>>(&mut self, map: &Map<String, Value>, path: &str, key: &str) -> Option<T> {
        let v = map.get(key)?;
        match serde_json::from_value(v.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                self.err(format!("`{path}.{key}`: {e}"));
                None
            }
        }
    }
}

const TOP_KEYS: &[&str] = &[
    "experiment",
    "model",
    "numerics",
    "priors",
    "output",
    "filter",
    "app2d",
    "error_growth",
    "are",
    "expect",
];

/// Parses and validates a JSON configuration, reporting every violation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(vec![format!("invalid JSON: {e}")]))?;
    parse_config_value(&value)
}

pub fn parse_config_value(value: &Value) -> Result<ExperimentConfig> {
    let mut c = Checker { errors: Vec::new() };
    let Some(top) = c.object(value, "", TOP_KEYS) else {
        return Err(Error::Config(c.errors));
    };

    let experiment = match top.get("experiment") {
        None => {
            c.err("`experiment` is required".into());
            None
        }
        Some(v) => match v.as_str().and_then(ExperimentKind::parse) {
            Some(k) => Some(k),
            None => {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                c.err(format!("`experiment` must be one of {}", names.join(", ")));
                None
            }
        },
    };

    let model = top.get("model").and_then(|v| parse_model(&mut c, v));
    let numerics = parse_numerics(&mut c, top.get("numerics"));
    let priors = parse_priors(&mut c, top.get("priors"));
    let output = parse_output(&mut c, top.get("output"));
    let filter = match top.get("filter") {
        None => FilterKind::Kalman,
        Some(_) => c.typed_at(top, "", "filter").unwrap_or(FilterKind::Kalman),
    };
    let app2d = parse_app2d(&mut c, top.get("app2d"));
    let error_growth = parse_error_growth(&mut c, top.get("error_growth"));
    let are = parse_are(&mut c, top.get("are"));
    let expect = parse_expect(&mut c, top.get("expect"));

    if let Some(kind) = experiment {
        cross_check(&mut c, kind, model.as_ref(), numerics.as_ref(), &priors, &filter);
    }

    match (experiment, numerics) {
        (Some(experiment), Some(numerics)) if c.errors.is_empty() => Ok(ExperimentConfig {
            experiment,
            model,
            numerics,
            priors,
            output,
            filter,
            app2d,
            error_growth,
            are,
            expect,
        }),
        _ => Err(Error::Config(c.errors)),
    }
}

fn parse_model(c: &mut Checker, v: &Value) -> Option<ModelConfig> {
    let map = c.object(v, "model", &["F", "H", "sigma", "drift_nonlinear", "obs_nonlinear"])?;
    let mut missing = false;
    for key in ["F", "H", "sigma"] {
        if !map.contains_key(key) {
            c.err(format!("`model.{key}` is required"));
            missing = true;
        }
    }
    let f = c.matrix_at(map, "model", "F");
    let h = c.matrix_at(map, "model", "H");
    let sigma = c.matrix_at(map, "model", "sigma");
    let drift_nonlinear = match map.get("drift_nonlinear") {
        None => Some(Nonlinearity::Zero),
        Some(_) => c.typed_at(map, "model", "drift_nonlinear"),
    };
    let obs_nonlinear = match map.get("obs_nonlinear") {
        None => Some(Nonlinearity::Zero),
        Some(_) => c.typed_at(map, "model", "obs_nonlinear"),
    };
    if missing {
        return None;
    }
    let (f, h, sigma, drift_nonlinear, obs_nonlinear) = (f?, h?, sigma?, drift_nonlinear?, obs_nonlinear?);
    let (fr, fc) = shape(&f);
    let (hr, hc) = shape(&h);
    let (sr, sc) = shape(&sigma);
    let mut ok = true;
    if fr != fc {
        c.err(format!("`model.F` must be square, got {fr}x{fc}"));
        ok = false;
    }
    if hc != fc {
        c.err(format!("`model.H` is {hr}x{hc} but `model.F` is {fr}x{fc}; H needs {fc} columns"));
        ok = false;
    }
    if sr != fr {
        c.err(format!("`model.sigma` is {sr}x{sc} but `model.F` is {fr}x{fc}; sigma needs {fr} rows"));
        ok = false;
    }
    let cfg = ModelConfig {
        f,
        h,
        sigma,
        drift_nonlinear,
        obs_nonlinear,
    };
    if ok {
        if let Err(e) = cfg.build() {
            c.err(format!("`model`: {e}"));
            return None;
        }
    }
    ok.then_some(cfg)
}

fn parse_numerics(c: &mut Checker, v: Option<&Value>) -> Option<Numerics> {
    let keys = [
        "dt",
        "T",
        "seed",
        "particles",
        "ess_threshold",
        "checkpoints",
        "replicas",
        "threshold",
        "x0",
    ];
    let Some(v) = v else {
        c.err("`numerics.seed` is required (no implicit seeding)".into());
        return None;
    };
    let map = c.object(v, "numerics", &keys)?;
    let dt = c.f64_at(map, "numerics", "dt").unwrap_or(DEFAULT_DT);
    let t_end = c.f64_at(map, "numerics", "T").unwrap_or(DEFAULT_T);
    let seed = c.u64_at(map, "numerics", "seed");
    if !map.contains_key("seed") {
        c.err("`numerics.seed` is required (no implicit seeding)".into());
    }
    let particles = c.u64_at(map, "numerics", "particles").map_or(DEFAULT_PARTICLES, |n| n as usize);
    let ess_threshold = c.f64_at(map, "numerics", "ess_threshold").unwrap_or(0.5);
    let replicas = c.u64_at(map, "numerics", "replicas").map_or(DEFAULT_REPLICAS, |n| n as usize);
    let threshold = c.f64_at(map, "numerics", "threshold").unwrap_or(crate::experiments::DEFAULT_THRESHOLD);
    let x0 = c.vec_at(map, "numerics", "x0");

    if !(dt > 0.0) {
        c.err(format!("`numerics.dt` must be positive, got {dt}"));
    } else if !(t_end >= dt) {
        c.err(format!("`numerics.T` = {t_end} must be at least dt = {dt}"));
    } else if let Err(e) = grid_steps(dt, t_end) {
        c.err(format!("`numerics`: {e}"));
    }
    if particles < 2 {
        c.err(format!("`numerics.particles` must be at least 2, got {particles}"));
    }
    if !(0.0..=1.0).contains(&ess_threshold) {
        c.err(format!("`numerics.ess_threshold` must lie in [0, 1], got {ess_threshold}"));
    }
    if replicas == 0 {
        c.err("`numerics.replicas` must be positive".into());
    }
    if !(threshold > 0.0) {
        c.err(format!("`numerics.threshold` must be positive, got {threshold}"));
    }
    let checkpoints = match c.vec_at(map, "numerics", "checkpoints") {
        Some(cp) => {
            if cp.iter().any(|t| *t < 0.0 || *t > t_end + 1e-9) {
                c.err(format!("`numerics.checkpoints` must lie in [0, {t_end}]"));
            }
            cp
        }
        None => default_checkpoints(t_end),
    };
    Some(Numerics {
        dt,
        t_end,
        seed: seed?,
        particles,
        ess_threshold,
        checkpoints,
        replicas,
        threshold,
        x0,
    })
}

/// Integer times `0, 1, …, ⌊T⌋`.
pub fn default_checkpoints(t_end: f64) -> Vec<f64> {
    (0..=(t_end.max(0.0) + 1e-9).floor() as usize).map(|k| k as f64).collect()
}

fn parse_prior(c: &mut Checker, v: &Value, path: &str) -> Option<PriorConfig> {
    let map = c.object(v, path, &["mean", "cov"])?;
    let mean = c.vec_at(map, path, "mean");
    let cov = c.matrix_at(map, path, "cov");
    if !map.contains_key("mean") {
        c.err(format!("`{path}.mean` is required"));
    }
    if !map.contains_key("cov") {
        c.err(format!("`{path}.cov` is required"));
    }
    let (mean, cov) = (mean?, cov?);
    let (r, k) = shape(&cov);
    if r != k || r != mean.len() {
        c.err(format!(
            "`{path}`: mean has length {} but cov is {r}x{k}",
            mean.len()
        ));
        return None;
    }
    let cfg = PriorConfig { mean, cov };
    if let Err(e) = cfg.build() {
        c.err(format!("`{path}`: {e}"));
        return None;
    }
    Some(cfg)
}

fn parse_priors(c: &mut Checker, v: Option<&Value>) -> PriorsConfig {
    let mut out = PriorsConfig { truth: None, wrong: None };
    let Some(v) = v else { return out };
    let Some(map) = c.object(v, "priors", &["true", "wrong"]) else {
        return out;
    };
    out.truth = map.get("true").and_then(|v| parse_prior(c, v, "priors.true"));
    out.wrong = map.get("wrong").and_then(|v| parse_prior(c, v, "priors.wrong"));
    out
}

fn parse_output(c: &mut Checker, v: Option<&Value>) -> OutputConfig {
    let mut out = OutputConfig {
        directory: DEFAULT_OUTPUT_DIR.into(),
        formats: vec![OutputFormat::Csv, OutputFormat::Json],
    };
    let Some(v) = v else { return out };
    let Some(map) = c.object(v, "output", &["directory", "formats"]) else {
        return out;
    };
    if let Some(d) = map.get("directory") {
        match d.as_str() {
            Some(s) if !s.is_empty() => out.directory = s.into(),
            _ => c.err("`output.directory` must be a non-empty string".into()),
        }
    }
    if map.contains_key("formats") {
        if let Some(f) = c.typed_at::<Vec<OutputFormat>>(map, "output", "formats") {
            out.formats = f;
        }
    }
    out
}

fn parse_app2d(c: &mut Checker, v: Option<&Value>) -> App2dConfig {
    let mut out = App2dConfig::default();
    let Some(v) = v else { return out };
    let Some(map) = c.object(v, "app2d", &["lambda1", "lambda2", "h", "obs_mode"]) else {
        return out;
    };
    out.lambda1 = c.f64_at(map, "app2d", "lambda1").unwrap_or(out.lambda1);
    out.lambda2 = c.f64_at(map, "app2d", "lambda2").unwrap_or(out.lambda2);
    out.h = c.f64_at(map, "app2d", "h").unwrap_or(out.h);
    if map.contains_key("obs_mode") {
        if let Some(m) = c.typed_at(map, "app2d", "obs_mode") {
            out.obs_mode = m;
        }
    }
    if !(out.lambda1 < 0.0 && out.lambda2 > 0.0 && out.h > 0.0) {
        c.err(format!(
            "`app2d` needs lambda1 < 0 < lambda2 and h > 0, got ({}, {}, {})",
            out.lambda1, out.lambda2, out.h
        ));
    }
    out
}

fn parse_error_growth(c: &mut Checker, v: Option<&Value>) -> ErrorGrowthConfig {
    let mut out = ErrorGrowthConfig::default();
    let Some(v) = v else { return out };
    let Some(map) = c.object(v, "error_growth", &["alpha", "V0", "V_inf", "a_lorenz", "S", "fit"]) else {
        return out;
    };
    out.alpha = c.f64_at(map, "error_growth", "alpha").unwrap_or(out.alpha);
    out.v0 = c.f64_at(map, "error_growth", "V0").unwrap_or(out.v0);
    out.v_inf = c.f64_at(map, "error_growth", "V_inf").unwrap_or(out.v_inf);
    out.s = c.f64_at(map, "error_growth", "S").unwrap_or(out.s);
    out.a_lorenz = c
        .f64_at(map, "error_growth", "a_lorenz")
        .unwrap_or_else(|| error_growth::matched_lorenz_coefficient(out.alpha, out.v_inf));
    if !(out.v_inf > 0.0) || !(out.v0 >= 0.0) || out.v0 > out.v_inf {
        c.err(format!(
            "`error_growth` needs 0 <= V0 <= V_inf and V_inf > 0, got V0 = {}, V_inf = {}",
            out.v0, out.v_inf
        ));
    }
    if let Some(fv) = map.get("fit") {
        if let Some(fm) = c.object(fv, "error_growth.fit", &["kind", "t", "V"]) {
            let kind: Option<ErrorModelKind> = c.typed_at(fm, "error_growth.fit", "kind");
            let t = c.vec_at(fm, "error_growth.fit", "t");
            let vv = c.vec_at(fm, "error_growth.fit", "V");
            for key in ["kind", "t", "V"] {
                if !fm.contains_key(key) {
                    c.err(format!("`error_growth.fit.{key}` is required"));
                }
            }
            if let (Some(kind), Some(t), Some(v)) = (kind, t, vv) {
                if t.len() != v.len() || t.len() < 4 {
                    c.err(format!(
                        "`error_growth.fit` needs at least 4 points and equal lengths, got {} and {}",
                        t.len(),
                        v.len()
                    ));
                } else {
                    out.fit = Some(FitConfig { kind, t, v });
                }
            }
        }
    }
    out
}

fn parse_are(c: &mut Checker, v: Option<&Value>) -> AreConfig {
    let mut out = AreConfig::default();
    let Some(v) = v else { return out };
    let Some(map) = c.object(v, "are", &["tol", "max_t"]) else {
        return out;
    };
    out.tol = c.f64_at(map, "are", "tol").unwrap_or(out.tol);
    out.max_t = c.f64_at(map, "are", "max_t").unwrap_or(out.max_t);
    if !(out.tol > 0.0) || !(out.max_t > 0.0) {
        c.err("`are.tol` and `are.max_t` must be positive".into());
    }
    out
}

fn parse_expect(c: &mut Checker, v: Option<&Value>) -> Expectation {
    let mut out = Expectation::default();
    let Some(v) = v else { return out };
    let Some(map) = c.object(v, "expect", &["stabilized", "detectable", "max_plateau"]) else {
        return out;
    };
    for key in ["stabilized", "detectable"] {
        if let Some(b) = map.get(key) {
            match b.as_bool() {
                Some(b) if key == "stabilized" => out.stabilized = Some(b),
                Some(b) => out.detectable = Some(b),
                None => c.err(format!("`expect.{key}` must be a boolean")),
            }
        }
    }
    out.max_plateau = c.f64_at(map, "expect", "max_plateau");
    out
}

fn cross_check(
    c: &mut Checker,
    kind: ExperimentKind,
    model: Option<&ModelConfig>,
    numerics: Option<&Numerics>,
    priors: &PriorsConfig,
    filter: &FilterKind,
) {
    if kind.needs_model() && model.is_none() && !c.errors.iter().any(|e| e.contains("model")) {
        c.err(format!("`model` is required for experiment `{}`", kind.name()));
    }
    let d = model.map(|m| m.f.len());
    if kind.needs_true_prior() && priors.truth.is_none() && !c.errors.iter().any(|e| e.contains("priors.true")) {
        c.err(format!("`priors.true` is required for experiment `{}`", kind.name()));
    }
    if kind.needs_wrong_prior() && priors.wrong.is_none() && !c.errors.iter().any(|e| e.contains("priors.wrong")) {
        c.err(format!("`priors.wrong` is required for experiment `{}`", kind.name()));
    }
    if let Some(d) = d {
        for (name, p) in [("priors.true", &priors.truth), ("priors.wrong", &priors.wrong)] {
            if let Some(p) = p {
                if p.mean.len() != d {
                    c.err(format!("`{name}` has dimension {} but the model has d = {d}", p.mean.len()));
                }
            }
        }
        if let Some(x0) = numerics.and_then(|n| n.x0.as_ref()) {
            if x0.len() != d {
                c.err(format!("`numerics.x0` has length {} but the model has d = {d}", x0.len()));
            }
        }
    }
    if kind == ExperimentKind::Simulate
        && numerics.is_some_and(|n| n.x0.is_none())
        && priors.truth.is_none()
    {
        c.err("`simulate` needs `numerics.x0` or `priors.true`".into());
    }
    if kind.needs_wrong_prior() && kind != ExperimentKind::PriorDiv {
        if let Some(w) = &priors.wrong {
            let cov = to_matrix(&w.cov);
            let (vals, _) = linalg::sym_eigen(&cov);
            if vals.len() > 0 && !(vals.min() > linalg::PSD_REL_TOL * vals.max().max(1.0)) {
                c.err("`priors.wrong` covariance is rank-deficient; the wrong prior must have full rank".into());
            }
        }
    }
    let gaussian = model.is_some_and(|m| m.drift_nonlinear.is_gaussian_preserving() && m.obs_nonlinear.is_gaussian_preserving());
    let needs_gaussian = matches!(kind, ExperimentKind::Kalman | ExperimentKind::PriorDiv | ExperimentKind::Are)
        || (kind == ExperimentKind::Twin && *filter == FilterKind::Kalman);
    if needs_gaussian && model.is_some() && !gaussian {
        c.err(format!(
            "experiment `{}` needs zero or constant nonlinear parts",
            kind.name()
        ));
    }
    if let FilterKind::Particle { particles } = filter {
        if *particles < 2 {
            c.err("`filter.particles` must be at least 2".into());
        }
    }
}
