//! Bootstrap particle approximation of the posterior.
//!
//! Each step propagates every particle through one Euler-Maruyama signal
//! step and multiplies its weight by the discretized Kallianpur-Striebel
//! factor `exp(h(x)ᵀ ΔY - ½ |h(x)|² dt)`, evaluated at the pre-propagation
//! state. Weights live in log space during the update and are renormalized
//! with a max shift. Systematic resampling fires when the effective sample
//! size drops below a fraction of N.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::csv::{self, CsvTable};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{mat_vec_into, sample_with_factor, GaussianMeasure, ModelSpec, PathRecord};
use crate::rng::{self, StreamRng, StreamTag};

/// Weighted point set. Positions are row-major N×d.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleCloud {
    pub fn new(dim: usize, positions: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || dim == 0 {
            return Err(Error::InvalidCloud("cloud must have N >= 1 and d >= 1".into()));
        }
        if positions.len() != n * dim {
            return Err(Error::InvalidCloud(format!(
                "{} coordinates for {n} particles in dimension {dim}",
                positions.len()
            )));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCloud("positions must be finite".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidCloud("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidCloud("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(ParticleCloud { dim, positions, weights })
    }

    pub fn uniform(dim: usize, positions: Vec<f64>) -> Result<Self> {
        let n = positions.len() / dim.max(1);
        Self::new(dim, positions, vec![1.0 / n as f64; n])
    }

    /// N i.i.d. draws from `g`, uniform weights.
    pub fn sample_gaussian<R: Rng + ?Sized>(g: &GaussianMeasure, n: usize, rng: &mut R) -> Self {
        let factor = linalg::sampling_factor(&g.cov);
        let mut positions = Vec::with_capacity(n * g.dim());
        for _ in 0..n {
            positions.extend(sample_with_factor(&g.mean, &factor, rng).iter());
        }
        ParticleCloud {
            dim: g.dim(),
            positions,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (w - w0).abs() <= 1e-12 * w0)
    }

    /// `x1..xd,w`.
    pub fn to_csv(&self) -> CsvTable {
        let mut header = csv::numbered("x", self.dim);
        header.push("w".into());
        let mut table = CsvTable::new(&header);
        let mut row = Vec::with_capacity(self.dim + 1);
        for i in 0..self.len() {
            row.clear();
            row.extend_from_slice(self.particle(i));
            row.push(self.weights[i]);
            table.row(&row);
        }
        table
    }
}

/// `1 / Σ w²`, in `[1, N]` for normalized weights.
pub fn ess(cloud: &ParticleCloud) -> f64 {
    1.0 / cloud.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Weighted mean and weighted covariance (no small-sample correction).
pub fn cloud_moments(cloud: &ParticleCloud) -> GaussianMeasure {
    let d = cloud.dim;
    let mut mean = DVector::zeros(d);
    for (i, w) in cloud.weights.iter().enumerate() {
        for (m, x) in mean.iter_mut().zip(cloud.particle(i)) {
            *m += w * x;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for (i, w) in cloud.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        for ((c, x), m) in centered.iter_mut().zip(cloud.particle(i)).zip(mean.iter()) {
            *c = x - m;
        }
        for a in 0..d {
            let wa = w * centered[a];
            for b in a..d {
                cov[(a, b)] += wa * centered[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            cov[(a, b)] = cov[(b, a)];
        }
    }
    GaussianMeasure { mean, cov }
}

/// `Σ w (x - x̂) h̃(x)ᵀ`, d×n, with `h̃` evaluated on `H x`.
pub fn observation_cross_covariance(cloud: &ParticleCloud, model: &ModelSpec) -> DMatrix<f64> {
    let d = cloud.dim;
    let n = model.obs_dim();
    let mean = cloud_moments(cloud).mean;
    let mut out = DMatrix::zeros(d, n);
    let mut hx = vec![0.0; n];
    let mut pert = vec![0.0; n];
    for (i, w) in cloud.weights.iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let x = cloud.particle(i);
        mat_vec_into(&model.observation, x, &mut hx);
        pert.iter_mut().for_each(|v| *v = 0.0);
        model.observation_nonlinear.add_into(&hx, &mut pert);
        for a in 0..d {
            let ca = w * (x[a] - mean[a]);
            for b in 0..n {
                out[(a, b)] += ca * pert[b];
            }
        }
    }
    out
}

/// Systematic offspring selection of `m` indices from normalized weights using one uniform.
fn systematic_indices(weights: &[f64], m: usize, u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(m);
    let mut cumulative = 0.0;
    let mut i = 0usize;
    for j in 0..m {
        let target = (j as f64 + u) / m as f64;
        while i < n - 1 && cumulative + weights[i] <= target {
            cumulative += weights[i];
            i += 1;
        }
        out.push(i);
    }
    out
}

/// Systematic resample to `m` uniformly weighted particles; returns the
/// ancestor index of every offspring alongside the new cloud.
pub fn systematic_resample_to<R: Rng + ?Sized>(cloud: &ParticleCloud, m: usize, rng: &mut R) -> (ParticleCloud, Vec<usize>) {
    let u: f64 = rng.random();
    let ancestors = systematic_indices(&cloud.weights, m, u);
    let mut positions = Vec::with_capacity(m * cloud.dim);
    for &a in &ancestors {
        positions.extend_from_slice(cloud.particle(a));
    }
    (
        ParticleCloud {
            dim: cloud.dim,
            positions,
            weights: vec![1.0 / m as f64; m],
        },
        ancestors,
    )
}

pub fn systematic_resample<R: Rng + ?Sized>(cloud: &ParticleCloud, rng: &mut R) -> ParticleCloud {
    systematic_resample_to(cloud, cloud.len(), rng).0
}

/// One RNG stream per particle slot, so propagation noise does not depend
/// on evaluation order.
pub struct ParticleStreams {
    streams: Vec<StreamRng>,
    resampling: StreamRng,
}

impl ParticleStreams {
    pub fn new(seed: u64, n: usize) -> Self {
        ParticleStreams {
            streams: (0..n as u64)
                .map(|i| rng::stream(seed, StreamTag::ParticlePropagation, i))
                .collect(),
            resampling: rng::stream(seed, StreamTag::Resampling, 0),
        }
    }

    pub fn resampling(&mut self) -> &mut StreamRng {
        &mut self.resampling
    }
}

/// Scratch buffers for one step.
struct StepBuffers {
    drift: Vec<f64>,
    dv: Vec<f64>,
    noise: Vec<f64>,
    hx: Vec<f64>,
    log_w: Vec<f64>,
}

impl StepBuffers {
    fn new(model: &ModelSpec, n: usize) -> Self {
        StepBuffers {
            drift: vec![0.0; model.state_dim()],
            dv: vec![0.0; model.noise_dim()],
            noise: vec![0.0; model.state_dim()],
            hx: vec![0.0; model.obs_dim()],
            log_w: vec![0.0; n],
        }
    }
}

/// Reweights by the likelihood of `dy` and propagates one signal step.
pub fn pf_step(
    cloud: &ParticleCloud,
    dy: &[f64],
    dt: f64,
    model: &ModelSpec,
    streams: &mut ParticleStreams,
) -> Result<ParticleCloud> {
    let mut next = cloud.clone();
    let mut buffers = StepBuffers::new(model, cloud.len());
    step_in_place(&mut next, dy, dt, model, streams, &mut buffers, 0)?;
    Ok(next)
}

fn step_in_place(
    cloud: &mut ParticleCloud,
    dy: &[f64],
    dt: f64,
    model: &ModelSpec,
    streams: &mut ParticleStreams,
    buf: &mut StepBuffers,
    step: usize,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(Error::InvalidCloud(format!("dt must be positive, got {dt}")));
    }
    let d = cloud.dim;
    let n = cloud.len();
    if streams.streams.len() < n {
        return Err(Error::InvalidCloud(format!(
            "{} particle streams for {n} particles",
            streams.streams.len()
        )));
    }
    let sqrt_dt = dt.sqrt();
    let mut max_log = f64::NEG_INFINITY;
    for i in 0..n {
        let x = &mut cloud.positions[i * d..(i + 1) * d];
        // h·ΔY - ½|h|² dt = -|ΔY - h dt|² / (2 dt) + |ΔY|² / (2 dt); the last
        // term is shared by all particles and drops out on normalization.
        model.observe_into(x, &mut buf.hx);
        let mut sq = 0.0;
        for (h, y) in buf.hx.iter().zip(dy) {
            let r = y - h * dt;
            sq += r * r;
        }
        let w = cloud.weights[i];
        let lw = if w > 0.0 { w.ln() - sq / (2.0 * dt) } else { f64::NEG_INFINITY };
        buf.log_w[i] = lw;
        if lw > max_log {
            max_log = lw;
        }

        model.drift_into(x, &mut buf.drift);
        let rng = &mut streams.streams[i];
        for v in buf.dv.iter_mut() {
            *v = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
        }
        mat_vec_into(&model.diffusion, &buf.dv, &mut buf.noise);
        for a in 0..d {
            x[a] += buf.drift[a] * dt + buf.noise[a];
        }
    }
    if !max_log.is_finite() {
        return Err(Error::WeightCollapse { step });
    }
    let mut total = 0.0;
    for (w, lw) in cloud.weights.iter_mut().zip(&buf.log_w) {
        *w = (lw - max_log).exp();
        total += *w;
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::WeightCollapse { step });
    }
    for w in cloud.weights.iter_mut() {
        *w /= total;
    }
    if cloud.positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::WeightCollapse { step });
    }
    Ok(())
}

/// Posterior summary at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudSummary {
    pub t: f64,
    pub moments: GaussianMeasure,
    pub ess: f64,
    /// Resampling fired on the step that ended here.
    pub resampled: bool,
    /// `π(x - x̂) h̃ᵀ`, the d×n weighted cross covariance of the state with the
    /// observation perturbation; present only for non-Gaussian-preserving `h̃`.
    pub obs_cross_cov: Option<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct ParticleRun {
    pub summaries: Vec<CloudSummary>,
    /// `(t, cloud)` at each requested checkpoint, in request order.
    pub checkpoints: Vec<(f64, ParticleCloud)>,
    pub particles: usize,
}

impl ParticleRun {
    /// `t,mean1..meand,p11..pdd,ess,resampled`.
    pub fn summary_csv(&self) -> CsvTable {
        let d = self.summaries.first().map_or(0, |s| s.moments.dim());
        let mut header = vec!["t".to_string()];
        header.extend(csv::numbered("mean", d));
        header.extend(csv::matrix_columns("p", d));
        header.push("ess".into());
        header.push("resampled".into());
        let mut table = CsvTable::new(&header);
        for s in &self.summaries {
            let mut cells = vec![csv::fmt_f64(s.t)];
            cells.extend(s.moments.mean.iter().map(|v| csv::fmt_f64(*v)));
            for i in 0..d {
                for j in 0..d {
                    cells.push(csv::fmt_f64(s.moments.cov[(i, j)]));
                }
            }
            cells.push(csv::fmt_f64(s.ess));
            cells.push(if s.resampled { "1" } else { "0" }.into());
            table.raw_row(&cells);
        }
        table
    }
}

/// Settings for [`run_particle_filter`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSettings {
    pub particles: usize,
    /// Resample when `ESS < ess_threshold · N`.
    pub ess_threshold: f64,
    pub seed: u64,
    /// Times at which full clouds are retained.
    pub checkpoints: Vec<f64>,
}

impl ParticleSettings {
    pub fn new(particles: usize, seed: u64) -> Self {
        ParticleSettings {
            particles,
            ess_threshold: 0.5,
            seed,
            checkpoints: Vec::new(),
        }
    }
}

pub(crate) fn checkpoint_indices(times: &[f64], dt: f64, requested: &[f64]) -> Vec<usize> {
    let last = times.len().saturating_sub(1);
    requested
        .iter()
        .map(|t| ((t / dt).round().max(0.0) as usize).min(last))
        .collect()
}

/// Bootstrap filter over `obs`, starting from N draws of `prior`.
pub fn run_particle_filter(
    obs: &PathRecord,
    prior: &GaussianMeasure,
    model: &ModelSpec,
    settings: &ParticleSettings,
) -> Result<ParticleRun> {
    let n = settings.particles;
    if n < 2 {
        return Err(Error::InvalidCloud(format!("need N >= 2 particles, got {n}")));
    }
    if prior.dim() != model.state_dim() || obs.state_dim != model.state_dim() || obs.obs_dim != model.obs_dim() {
        return Err(Error::DimensionMismatch(
            "prior, observation path and model dimensions disagree".into(),
        ));
    }
    let mut init_rng = rng::stream(settings.seed, StreamTag::ParticleInit, 0);
    let mut cloud = ParticleCloud::sample_gaussian(prior, n, &mut init_rng);
    let mut streams = ParticleStreams::new(settings.seed, n);
    let mut buf = StepBuffers::new(model, n);
    let threshold = settings.ess_threshold * n as f64;
    let checkpoint_at = checkpoint_indices(&obs.times, obs.dt, &settings.checkpoints);

    let mut summaries = Vec::with_capacity(obs.len());
    let mut checkpoints: Vec<Option<ParticleCloud>> = vec![None; checkpoint_at.len()];
    let mut record = |k: usize, cloud: &ParticleCloud, resampled: bool, summaries: &mut Vec<CloudSummary>| {
        summaries.push(CloudSummary {
            t: obs.times[k],
            moments: cloud_moments(cloud),
            ess: ess(cloud),
            resampled,
            obs_cross_cov: (!model.observation_nonlinear.is_gaussian_preserving())
                .then(|| observation_cross_covariance(cloud, model)),
        });
        for (slot, &idx) in checkpoint_at.iter().enumerate() {
            if idx == k {
                checkpoints[slot] = Some(cloud.clone());
            }
        }
    };
    record(0, &cloud, false, &mut summaries);
    for k in 0..obs.steps() {
        step_in_place(&mut cloud, obs.increment(k), obs.dt, model, &mut streams, &mut buf, k)?;
        let mut resampled = false;
        if ess(&cloud) < threshold {
            cloud = systematic_resample(&cloud, streams.resampling());
            resampled = true;
        }
        record(k + 1, &cloud, resampled, &mut summaries);
    }
    Ok(ParticleRun {
        summaries,
        checkpoints: settings
            .checkpoints
            .iter()
            .zip(checkpoints)
            .map(|(t, c)| (*t, c.expect("checkpoint indices lie on the grid")))
            .collect(),
        particles: n,
    })
}

/// Unweighted ensemble push-forward of `prior` (the particle sampler with no
/// conditioning). Returns clouds at the requested checkpoint times.
pub fn prior_ensemble(
    model: &ModelSpec,
    prior: &GaussianMeasure,
    n: usize,
    times: &[f64],
    dt: f64,
    seed: u64,
    checkpoints: &[f64],
) -> Result<Vec<ParticleCloud>> {
    let mut init_rng = rng::stream(seed, StreamTag::PriorEnsemble, 0);
    let mut cloud = ParticleCloud::sample_gaussian(prior, n, &mut init_rng);
    let mut streams = ParticleStreams::new(rng::sub_seed(seed, StreamTag::PriorEnsemble, 1), n);
    let mut buf = StepBuffers::new(model, n);
    let zero_obs = vec![0.0; model.obs_dim()];
    let unobserved = ModelSpec {
        observation: DMatrix::zeros(model.obs_dim(), model.state_dim()),
        observation_nonlinear: crate::model::Nonlinearity::Zero,
        ..model.clone()
    };
    let at = checkpoint_indices(times, dt, checkpoints);
    let mut out: Vec<Option<ParticleCloud>> = vec![None; at.len()];
    let steps = times.len().saturating_sub(1);
    for k in 0..=steps {
        for (slot, &idx) in at.iter().enumerate() {
            if idx == k {
                out[slot] = Some(cloud.clone());
            }
        }
        if k == steps {
            break;
        }
        step_in_place(&mut cloud, &zero_obs, dt, &unobserved, &mut streams, &mut buf, k)?;
    }
    Ok(out.into_iter().map(|c| c.expect("checkpoint on grid")).collect())
}
