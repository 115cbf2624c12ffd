//! Twin-filter stabilization experiments.
//!
//! Two filters started from different priors are driven by one observation
//! realization. The posterior gap `W2(π_t^μ, π_t)` is compared with the prior
//! gap `W2(p_t^μ, p_t)` of the unconditioned laws.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::csv::{self, CsvTable};
use crate::error::{Error, Result};
use crate::kalman::{self, AreSolution, HautusResult, DEFAULT_PSI_BURN_IN, DEFAULT_PSI_WINDOW};
use crate::linalg;
use crate::model::{self, GaussianMeasure, ModelSpec, PathRecord};
use crate::particle::{self, ParticleCloud, ParticleRun, ParticleSettings};
use crate::rng::{self, StreamTag};
use crate::wasserstein;

/// Posterior gap at T below which a run counts as stabilized.
pub const DEFAULT_THRESHOLD: f64 = 1e-2;
/// Radii at which occupation fractions are reported.
pub const DEFAULT_RADII: [f64; 4] = [1e-3, 1e-2, 1e-1, 1.0];
/// Spacing of particle-cloud W2 checkpoints.
pub const DEFAULT_CHECKPOINT_SPACING: f64 = 1.0;
/// Clouds are systematically thinned to this many points before exact matching.
pub const DEFAULT_W2_POINTS: usize = 512;
/// Thinning for unconditioned ensembles.
pub const DEFAULT_PRIOR_W2_POINTS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterKind {
    Kalman,
    Particle { particles: usize },
}

/// Knobs shared by the twin experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentOptions {
    pub threshold: f64,
    pub radii: Vec<f64>,
    pub checkpoint_spacing: f64,
    pub w2_points: usize,
    pub prior_w2_points: usize,
    pub ess_threshold: f64,
    /// Also run a third particle filter from the true prior on fresh streams.
    pub noise_floor: bool,
    pub psi_window: f64,
    pub psi_burn_in: f64,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        ExperimentOptions {
            threshold: DEFAULT_THRESHOLD,
            radii: DEFAULT_RADII.to_vec(),
            checkpoint_spacing: DEFAULT_CHECKPOINT_SPACING,
            w2_points: DEFAULT_W2_POINTS,
            prior_w2_points: DEFAULT_PRIOR_W2_POINTS,
            ess_threshold: 0.5,
            noise_floor: false,
            psi_window: DEFAULT_PSI_WINDOW,
            psi_burn_in: DEFAULT_PSI_BURN_IN,
        }
    }
}

/// Empirical surrogates for the moment and ψ-stability hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisStats {
    /// `sup_t E[‖P_t^μ‖⁸]` (Frobenius norm) for the filter from the wrong prior.
    pub sup_cov_moment_wrong: f64,
    /// The same for the filter from the true prior.
    pub sup_cov_moment_true: f64,
    /// Estimated `c` in `E|ψ_{s:t}|² ≤ e^{-c(t-s)}`, if the path was long enough.
    pub psi_decay: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilizationReport {
    pub times: Vec<f64>,
    /// `W2(π_t^μ, π_t)`; the replica mean for ensembles.
    pub posterior_gap: Vec<f64>,
    /// `W2(p_t^μ, p_t)`.
    pub prior_gap: Vec<f64>,
    pub posterior_gap_stderr: Option<Vec<f64>>,
    /// Gap between two filters from the true prior on independent streams.
    pub noise_floor: Option<Vec<f64>>,
    pub fitted_posterior_rate: f64,
    pub fitted_prior_rate: f64,
    pub threshold: f64,
    pub stabilized: bool,
    /// `(R, fraction of grid points with gap > R)`.
    pub occupation: Vec<(f64, f64)>,
    pub hypothesis_stats: HypothesisStats,
    /// One digest per realization; both filters of a twin saw exactly these bytes.
    pub observation_checksums: Vec<String>,
    /// `sup_{[T/2,T]} gap / sup_{[T/4,T/2]} gap`.
    pub plateau: Option<f64>,
    pub replicas: usize,
    pub replicas_dropped: usize,
}

impl StabilizationReport {
    /// `t,posterior_gap,prior_gap`.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["t", "posterior_gap", "prior_gap"]);
        for k in 0..self.times.len() {
            t.row(&[self.times[k], self.posterior_gap[k], self.prior_gap[k]]);
        }
        t
    }

    /// `t,posterior_gap,stderr,noise_floor` for ensemble runs.
    pub fn ensemble_csv(&self) -> Option<CsvTable> {
        let stderr = self.posterior_gap_stderr.as_ref()?;
        let floor = self.noise_floor.as_ref()?;
        let mut t = CsvTable::new(&["t", "posterior_gap", "stderr", "noise_floor"]);
        for k in 0..self.times.len() {
            t.row(&[self.times[k], self.posterior_gap[k], stderr[k], floor[k]]);
        }
        Some(t)
    }

    pub fn sidecar_json(&self) -> serde_json::Value {
        let occupation: BTreeMap<String, f64> = self
            .occupation
            .iter()
            .map(|(r, f)| (csv::fmt_f64(*r), *f))
            .collect();
        let mut v = json!({
            "fitted_posterior_rate": finite_or_null(self.fitted_posterior_rate),
            "fitted_prior_rate": finite_or_null(self.fitted_prior_rate),
            "stabilized": self.stabilized,
            "threshold": self.threshold,
            "final_posterior_gap": self.posterior_gap.last(),
            "final_prior_gap": self.prior_gap.last(),
            "occupation": occupation,
            "hypothesis_stats": {
                "sup_cov_moment_wrong": finite_or_null(self.hypothesis_stats.sup_cov_moment_wrong),
                "sup_cov_moment_true": finite_or_null(self.hypothesis_stats.sup_cov_moment_true),
                "psi_decay": self.hypothesis_stats.psi_decay.map(finite_or_null),
            },
            "observation_checksums": self.observation_checksums,
            "replicas": self.replicas,
            "replicas_dropped": self.replicas_dropped,
        });
        if let Some(p) = self.plateau {
            v["plateau"] = finite_or_null(p);
        }
        if let Some(floor) = &self.noise_floor {
            v["final_noise_floor"] = json!(floor.last());
        }
        v
    }

    pub fn final_posterior_gap(&self) -> f64 {
        *self.posterior_gap.last().unwrap_or(&f64::NAN)
    }

    pub fn final_prior_gap(&self) -> f64 {
        *self.prior_gap.last().unwrap_or(&f64::NAN)
    }
}

fn finite_or_null(x: f64) -> serde_json::Value {
    if x.is_finite() {
        json!(x)
    } else {
        serde_json::Value::Null
    }
}

/// Fraction of grid points at which the posterior gap exceeds `radius`.
pub fn occupation_time(report: &StabilizationReport, radius: f64) -> f64 {
    occupation_fraction(&report.posterior_gap, radius)
}

fn occupation_fraction(gap: &[f64], radius: f64) -> f64 {
    if gap.is_empty() {
        return 0.0;
    }
    gap.iter().filter(|g| **g > radius).count() as f64 / gap.len() as f64
}

/// Least-squares slope of `ln gap` over `t ≥ T/2`, skipping zero gaps.
/// NaN when fewer than two usable points remain.
pub fn fitted_rate(times: &[f64], gap: &[f64]) -> f64 {
    let t_end = *times.last().unwrap_or(&0.0);
    let (xs, ys): (Vec<f64>, Vec<f64>) = times
        .iter()
        .zip(gap)
        .filter(|(t, g)| **t >= 0.5 * t_end && **g > 0.0 && g.is_finite())
        .map(|(t, g)| (*t, g.ln()))
        .unzip();
    linalg::ls_slope(&xs, &ys).unwrap_or(f64::NAN)
}

/// `sup_{[T/2,T]} / sup_{[T/4,T/2]}` of a series.
pub fn plateau_statistic(times: &[f64], series: &[f64]) -> f64 {
    let t_end = *times.last().unwrap_or(&0.0);
    let sup = |lo: f64, hi: f64| {
        times
            .iter()
            .zip(series)
            .filter(|(t, _)| **t >= lo - 1e-9 && **t <= hi + 1e-9)
            .map(|(_, v)| *v)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    sup(0.5 * t_end, t_end) / sup(0.25 * t_end, 0.5 * t_end)
}

fn frobenius_pow8(p: &DMatrix<f64>) -> f64 {
    p.norm().powi(8)
}

/// One signal drawn from `prior_true` and its observation path.
pub fn simulate_realization(model: &ModelSpec, prior_true: &GaussianMeasure, t_end: f64, dt: f64, seed: u64) -> Result<PathRecord> {
    let mut init = rng::stream(seed, StreamTag::InitialState, 0);
    let x0 = prior_true.sample(&mut init);
    let signal = model::simulate_signal(model, &x0, dt, t_end, seed)?;
    model::simulate_observation(&signal, model, seed)
}

fn check_priors(model: &ModelSpec, a: &GaussianMeasure, b: &GaussianMeasure) -> Result<()> {
    let d = model.state_dim();
    if a.dim() != d || b.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "priors have dimensions {} and {} but the model has d = {d}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub fn run_twin_filter(
    model: &ModelSpec,
    prior_true: &GaussianMeasure,
    prior_wrong: &GaussianMeasure,
    t_end: f64,
    dt: f64,
    seed: u64,
    filter: FilterKind,
) -> Result<StabilizationReport> {
    run_twin_filter_with(model, prior_true, prior_wrong, t_end, dt, seed, filter, &ExperimentOptions::default())
}

#[allow(clippy::too_many_arguments)]
pub fn run_twin_filter_with(
    model: &ModelSpec,
    prior_true: &GaussianMeasure,
    prior_wrong: &GaussianMeasure,
    t_end: f64,
    dt: f64,
    seed: u64,
    filter: FilterKind,
    opts: &ExperimentOptions,
) -> Result<StabilizationReport> {
    check_priors(model, prior_true, prior_wrong)?;
    let obs = simulate_realization(model, prior_true, t_end, dt, seed)?;
    match filter {
        FilterKind::Kalman => twin_kalman(model, prior_true, prior_wrong, &obs, opts),
        FilterKind::Particle { particles } => {
            let run = twin_particle(model, prior_true, prior_wrong, &obs, particles, seed, opts)?;
            Ok(run.into_report(opts))
        }
    }
}

fn twin_kalman(
    model: &ModelSpec,
    prior_true: &GaussianMeasure,
    prior_wrong: &GaussianMeasure,
    obs: &PathRecord,
    opts: &ExperimentOptions,
) -> Result<StabilizationReport> {
    let checksum = obs.observation_checksum();
    let twin = kalman::run_kalman_bucy_pair(obs, prior_true, prior_wrong, model)?;
    let posterior_gap: Vec<f64> = (0..obs.len())
        .map(|k| wasserstein::w2_from_parts(&twin.mean_gap[k], &twin.first.covs[k], &twin.second.covs[k]))
        .collect();
    let pa = model::push_forward_path(model, prior_true, obs.final_time(), obs.dt)?;
    let pb = model::push_forward_path(model, prior_wrong, obs.final_time(), obs.dt)?;
    let prior_gap = pa
        .iter()
        .zip(&pb)
        .map(|(a, b)| wasserstein::w2_gaussian(a, b))
        .collect::<Result<Vec<f64>>>()?;

    let sup = |traj: &kalman::KalmanTrajectory| traj.covs.iter().map(frobenius_pow8).fold(0.0, f64::max);
    let q_path = kalman::closed_loop_path(&twin.second, model);
    let psi_decay = kalman::estimate_psi_decay(&q_path, obs.dt, opts.psi_window, opts.psi_burn_in).ok();
    let times = obs.times.clone();
    Ok(assemble(
        times,
        posterior_gap,
        prior_gap,
        None,
        None,
        HypothesisStats {
            sup_cov_moment_wrong: sup(&twin.second),
            sup_cov_moment_true: sup(&twin.first),
            psi_decay,
        },
        vec![checksum],
        1,
        0,
        opts,
    ))
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    times: Vec<f64>,
    posterior_gap: Vec<f64>,
    prior_gap: Vec<f64>,
    stderr: Option<Vec<f64>>,
    noise_floor: Option<Vec<f64>>,
    hypothesis_stats: HypothesisStats,
    observation_checksums: Vec<String>,
    replicas: usize,
    replicas_dropped: usize,
    opts: &ExperimentOptions,
) -> StabilizationReport {
    let final_gap = *posterior_gap.last().unwrap_or(&f64::NAN);
    let plateau = stderr.as_ref().map(|_| plateau_statistic(&times, &posterior_gap));
    StabilizationReport {
        fitted_posterior_rate: fitted_rate(&times, &posterior_gap),
        fitted_prior_rate: fitted_rate(&times, &prior_gap),
        threshold: opts.threshold,
        stabilized: final_gap < opts.threshold,
        occupation: opts.radii.iter().map(|r| (*r, occupation_fraction(&posterior_gap, *r))).collect(),
        hypothesis_stats,
        observation_checksums,
        plateau,
        replicas,
        replicas_dropped,
        times,
        posterior_gap,
        prior_gap,
        posterior_gap_stderr: stderr,
        noise_floor,
    }
}

/// Checkpoint-level output of one particle twin run.
struct ParticleTwin {
    times: Vec<f64>,
    posterior_gap: Vec<f64>,
    prior_gap: Vec<f64>,
    noise_floor: Option<Vec<f64>>,
    cov_moment_wrong: Vec<f64>,
    cov_moment_true: Vec<f64>,
    psi_decay: Option<f64>,
    checksum: String,
}

impl ParticleTwin {
    fn into_report(self, opts: &ExperimentOptions) -> StabilizationReport {
        let stats = HypothesisStats {
            sup_cov_moment_wrong: self.cov_moment_wrong.iter().cloned().fold(0.0, f64::max),
            sup_cov_moment_true: self.cov_moment_true.iter().cloned().fold(0.0, f64::max),
            psi_decay: self.psi_decay,
        };
        assemble(
            self.times,
            self.posterior_gap,
            self.prior_gap,
            None,
            self.noise_floor,
            stats,
            vec![self.checksum],
            1,
            0,
            opts,
        )
    }
}

fn checkpoint_times(t_end: f64, spacing: f64) -> Vec<f64> {
    let count = (t_end / spacing + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (0..=count).map(|k| k as f64 * spacing).collect();
    if (out[out.len() - 1] - t_end).abs() > 1e-9 {
        out.push(t_end);
    }
    out
}

fn cloud_gap(a: &ParticleCloud, b: &ParticleCloud, points: usize, seed: u64) -> Result<f64> {
    let m = points.min(a.len()).min(b.len());
    let ua = wasserstein::to_uniform(a, m, seed);
    let ub = wasserstein::to_uniform(b, m, rng::sub_seed(seed, StreamTag::Wasserstein, 2));
    wasserstein::w2_empirical_seeded(&ua, &ub, seed)
}

fn twin_particle(
    model: &ModelSpec,
    prior_true: &GaussianMeasure,
    prior_wrong: &GaussianMeasure,
    obs: &PathRecord,
    particles: usize,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<ParticleTwin> {
    let checkpoints = checkpoint_times(obs.final_time(), opts.checkpoint_spacing);
    let settings = |index: u64| ParticleSettings {
        particles,
        ess_threshold: opts.ess_threshold,
        seed: rng::sub_seed(seed, StreamTag::Replica, index),
        checkpoints: checkpoints.clone(),
    };
    let checksum = obs.observation_checksum();
    let run_true = particle::run_particle_filter(obs, prior_true, model, &settings(1))?;
    let run_wrong = particle::run_particle_filter(obs, prior_wrong, model, &settings(2))?;
    let run_floor = if opts.noise_floor {
        Some(particle::run_particle_filter(obs, prior_true, model, &settings(3))?)
    } else {
        None
    };
    if obs.observation_checksum() != checksum {
        return Err(Error::Experiment("observation path changed between twin filters".into()));
    }

    let w2_seed = rng::sub_seed(seed, StreamTag::Wasserstein, 0);
    let gaps = |other: &ParticleRun| -> Result<Vec<f64>> {
        run_true
            .checkpoints
            .iter()
            .zip(&other.checkpoints)
            .enumerate()
            .map(|(k, ((_, a), (_, b)))| cloud_gap(a, b, opts.w2_points, rng::sub_seed(w2_seed, StreamTag::Wasserstein, k as u64)))
            .collect()
    };
    let posterior_gap = gaps(&run_wrong)?;
    let noise_floor = run_floor.as_ref().map(gaps).transpose()?;

    let prior_gap = if model.is_gaussian_preserving() {
        let t_end = obs.final_time();
        let pa = model::push_forward_path(model, prior_true, t_end, obs.dt)?;
        let pb = model::push_forward_path(model, prior_wrong, t_end, obs.dt)?;
        let idx = particle::checkpoint_indices(&obs.times, obs.dt, &checkpoints);
        idx.iter()
            .map(|&k| wasserstein::w2_gaussian(&pa[k], &pb[k]))
            .collect::<Result<Vec<f64>>>()?
    } else {
        let ens = |prior: &GaussianMeasure, index: u64| {
            particle::prior_ensemble(
                model,
                prior,
                particles,
                &obs.times,
                obs.dt,
                rng::sub_seed(seed, StreamTag::PriorEnsemble, index),
                &checkpoints,
            )
        };
        let ea = ens(prior_true, 0)?;
        let eb = ens(prior_wrong, 1)?;
        ea.iter()
            .zip(&eb)
            .enumerate()
            .map(|(k, (a, b))| cloud_gap(a, b, opts.prior_w2_points, rng::sub_seed(w2_seed, StreamTag::PriorEnsemble, k as u64)))
            .collect::<Result<Vec<f64>>>()?
    };

    let idx = particle::checkpoint_indices(&obs.times, obs.dt, &checkpoints);
    let moment = |run: &ParticleRun| -> Vec<f64> {
        // Sup is taken over the full grid; the checkpoint series only carries it.
        let mut running = 0.0f64;
        let all: Vec<f64> = run.summaries.iter().map(|s| frobenius_pow8(&s.moments.cov)).collect();
        let mut out = Vec::with_capacity(idx.len());
        let mut next = 0usize;
        for (k, v) in all.iter().enumerate() {
            running = running.max(*v);
            while next < idx.len() && idx[next] == k {
                out.push(running);
                next += 1;
            }
        }
        out
    };
    let q_path = particle_closed_loop(&run_wrong, model);
    let psi_decay = kalman::estimate_psi_decay(&q_path, obs.dt, opts.psi_window, opts.psi_burn_in).ok();

    Ok(ParticleTwin {
        times: checkpoints,
        posterior_gap,
        prior_gap,
        noise_floor,
        cov_moment_wrong: moment(&run_wrong),
        cov_moment_true: moment(&run_true),
        psi_decay,
        checksum,
    })
}

/// `Q_s = F - P_s HᵀH - λ_s H` with `λ_s = π_s((x - x̂) h̃ᵀ)`.
fn particle_closed_loop(run: &ParticleRun, model: &ModelSpec) -> Vec<DMatrix<f64>> {
    let h = &model.observation;
    let hth = h.transpose() * h;
    run.summaries
        .iter()
        .map(|s| {
            let mut q = &model.drift - &s.moments.cov * &hth;
            if let Some(lambda) = &s.obs_cross_cov {
                q -= lambda * h;
            }
            q
        })
        .collect()
}

/// Replica-averaged twin particle filters with a matching noise-floor run.
#[allow(clippy::too_many_arguments)]
pub fn run_nonlinear_boundedness(
    model: &ModelSpec,
    prior_true: &GaussianMeasure,
    prior_wrong: &GaussianMeasure,
    t_end: f64,
    dt: f64,
    replicas: usize,
    base_seed: u64,
    particles: usize,
    opts: &ExperimentOptions,
) -> Result<StabilizationReport> {
    check_priors(model, prior_true, prior_wrong)?;
    if replicas == 0 {
        return Err(Error::Experiment("need at least one replica".into()));
    }
    let detect = kalman::check_detectability(&model.drift, &model.observation);
    if !detect.holds {
        return Err(Error::Experiment(format!(
            "linear part (F, H) is not detectable (eigenvalue {:?}); outside the bounded-perturbation regime",
            detect.witness
        )));
    }
    let opts = ExperimentOptions {
        noise_floor: true,
        ..opts.clone()
    };
    let mut runs = Vec::with_capacity(replicas);
    let mut dropped = 0usize;
    for r in 0..replicas {
        let seed = rng::sub_seed(base_seed, StreamTag::Replica, r as u64);
        let obs = simulate_realization(model, prior_true, t_end, dt, seed)?;
        match twin_particle(model, prior_true, prior_wrong, &obs, particles, seed, &opts) {
            Ok(run) => runs.push(run),
            Err(Error::WeightCollapse { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if runs.is_empty() {
        return Err(Error::Experiment(format!("all {replicas} replicas collapsed")));
    }
    let m = runs.len() as f64;
    let len = runs[0].times.len();
    let mean_of = |f: &dyn Fn(&ParticleTwin) -> &Vec<f64>| -> Vec<f64> {
        (0..len).map(|k| runs.iter().map(|r| f(r)[k]).sum::<f64>() / m).collect()
    };
    let posterior_gap = mean_of(&|r| &r.posterior_gap);
    let stderr: Vec<f64> = (0..len)
        .map(|k| {
            if runs.len() < 2 {
                return 0.0;
            }
            let var = runs.iter().map(|r| (r.posterior_gap[k] - posterior_gap[k]).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
        .collect();
    let prior_gap = mean_of(&|r| &r.prior_gap);
    let noise_floor = mean_of(&|r| r.noise_floor.as_ref().expect("noise floor requested"));
    let wrong = mean_of(&|r| &r.cov_moment_wrong);
    let right = mean_of(&|r| &r.cov_moment_true);
    let psi: Vec<f64> = runs.iter().filter_map(|r| r.psi_decay).collect();
    let stats = HypothesisStats {
        sup_cov_moment_wrong: wrong.iter().cloned().fold(0.0, f64::max),
        sup_cov_moment_true: right.iter().cloned().fold(0.0, f64::max),
        psi_decay: (!psi.is_empty()).then(|| psi.iter().sum::<f64>() / psi.len() as f64),
    };
    let checksums = runs.iter().map(|r| r.checksum.clone()).collect();
    let times = runs[0].times.clone();
    Ok(assemble(
        times,
        posterior_gap,
        prior_gap,
        Some(stderr),
        Some(noise_floor),
        stats,
        checksums,
        runs.len(),
        dropped,
        &opts,
    ))
}

/// Which coordinates of the two-dimensional example are observed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    /// `H = [0 h]`.
    UnstableOnly,
    /// `H = [h 0]`.
    StableOnly,
    /// `H = [h h]`.
    Sum,
}

impl ObsMode {
    pub const ALL: [ObsMode; 3] = [ObsMode::UnstableOnly, ObsMode::StableOnly, ObsMode::Sum];

    pub fn name(self) -> &'static str {
        match self {
            ObsMode::UnstableOnly => "unstable_only",
            ObsMode::StableOnly => "stable_only",
            ObsMode::Sum => "sum",
        }
    }

    pub fn observation(self, h_gain: f64) -> DMatrix<f64> {
        let row = match self {
            ObsMode::UnstableOnly => [0.0, h_gain],
            ObsMode::StableOnly => [h_gain, 0.0],
            ObsMode::Sum => [h_gain, h_gain],
        };
        DMatrix::from_row_slice(1, 2, &row)
    }
}

/// `F = diag(λ1, λ2)`, `H` per `mode`, `σ = I₂`.
pub fn planar_model(lambda1: f64, lambda2: f64, h_gain: f64, mode: ObsMode) -> Result<ModelSpec> {
    ModelSpec::linear(
        DMatrix::from_diagonal(&DVector::from_vec(vec![lambda1, lambda2])),
        mode.observation(h_gain),
        DMatrix::identity(2, 2),
    )
}

/// `N(0, I)` and `N((5, 5), 4 I)`.
pub fn planar_priors() -> (GaussianMeasure, GaussianMeasure) {
    (
        GaussianMeasure::from_trusted(DVector::zeros(2), DMatrix::identity(2, 2)),
        GaussianMeasure::from_trusted(DVector::from_vec(vec![5.0, 5.0]), DMatrix::identity(2, 2) * 4.0),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarReport {
    pub mode: ObsMode,
    pub detectable: HautusResult,
    pub stabilizable: HautusResult,
    /// Present when both Hautus tests pass.
    pub are: Option<AreSolution>,
    pub report: StabilizationReport,
}

impl PlanarReport {
    pub fn stabilized(&self) -> bool {
        self.report.stabilized
    }

    pub fn sidecar_json(&self) -> serde_json::Value {
        let mut v = self.report.sidecar_json();
        v["obs_mode"] = json!(self.mode.name());
        v["detectable"] = json!(self.detectable);
        v["stabilizable"] = json!(self.stabilizable);
        v["are"] = self.are.as_ref().map_or(serde_json::Value::Null, AreSolution::to_json);
        v
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_planar(
    lambda1: f64,
    lambda2: f64,
    h_gain: f64,
    mode: ObsMode,
    t_end: f64,
    dt: f64,
    seed: u64,
    opts: &ExperimentOptions,
) -> Result<PlanarReport> {
    if !(lambda1 < 0.0 && lambda2 > 0.0 && h_gain > 0.0) {
        return Err(Error::Experiment(format!(
            "need lambda1 < 0 < lambda2 and h > 0, got ({lambda1}, {lambda2}, {h_gain})"
        )));
    }
    let model = planar_model(lambda1, lambda2, h_gain, mode)?;
    let detectable = kalman::check_detectability(&model.drift, &model.observation);
    let stabilizable = kalman::check_stabilizability(&model.drift, &model.diffusion);
    let are = if detectable.holds && stabilizable.holds {
        Some(kalman::solve_are(&model, 1e-12, 200.0)?)
    } else {
        None
    };
    let (prior_true, prior_wrong) = planar_priors();
    let report = run_twin_filter_with(&model, &prior_true, &prior_wrong, t_end, dt, seed, FilterKind::Kalman, opts)?;
    Ok(PlanarReport {
        mode,
        detectable,
        stabilizable,
        are,
        report,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorDivergence {
    pub times: Vec<f64>,
    pub gap: Vec<f64>,
    /// Slope of `ln gap` over the final half.
    pub fitted_rate: f64,
}

impl PriorDivergence {
    /// `t,prior_gap`.
    pub fn to_csv(&self) -> CsvTable {
        let mut t = CsvTable::new(&["t", "prior_gap"]);
        for (time, g) in self.times.iter().zip(&self.gap) {
            t.row(&[*time, *g]);
        }
        t
    }
}

/// `W2(p_t^a, p_t^b)` from the closed moment flows.
pub fn run_prior_divergence(model: &ModelSpec, mu_a: &GaussianMeasure, mu_b: &GaussianMeasure, t_end: f64, dt: f64) -> Result<PriorDivergence> {
    check_priors(model, mu_a, mu_b)?;
    let pa = model::push_forward_path(model, mu_a, t_end, dt)?;
    let pb = model::push_forward_path(model, mu_b, t_end, dt)?;
    let gap = pa
        .iter()
        .zip(&pb)
        .map(|(a, b)| wasserstein::w2_gaussian(a, b))
        .collect::<Result<Vec<f64>>>()?;
    let steps = pa.len() - 1;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
    Ok(PriorDivergence {
        fitted_rate: fitted_rate(&times, &gap),
        times,
        gap,
    })
}
