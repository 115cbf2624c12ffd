//! Signal/observation models and their simulation.
//!
//! The signal solves `dX = f(X) dt + σ dV` and the observation
//! `dY = h(X) dt + dW`, where `f(x) = F x + f̃(x)` and `h(x) = H x + h̃(x)`
//! split into a linear part and a bounded nonlinear perturbation drawn from a
//! closed catalogue ([`Nonlinearity`]). Paths are produced by fixed-step
//! Euler-Maruyama on a uniform grid with seeded, independent noise streams.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::csv::{self, CsvTable};
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, StreamTag};

/// Paths abort once any state component exceeds this magnitude.
///
/// A unit-rate unstable mode reaches ~1e13 by t = 30, so the guard sits above
/// that but far below where squared quantities would overflow.
pub const DEFAULT_BLOWUP_THRESHOLD: f64 = 1e15;

/// Bounded perturbation families. Drift perturbations act componentwise on
/// the state; observation perturbations act componentwise on `H x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Nonlinearity {
    Zero,
    Constant { value: Vec<f64> },
    Tanh { epsilon: f64 },
    Sine { epsilon: f64 },
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::Zero
    }
}

impl Nonlinearity {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Zero => "zero",
            Nonlinearity::Constant { .. } => "constant",
            Nonlinearity::Tanh { .. } => "tanh",
            Nonlinearity::Sine { .. } => "sine",
        }
    }

    /// Sup of the max-abs norm of the perturbation over all inputs.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Nonlinearity::Zero => 0.0,
            Nonlinearity::Constant { value } => value.iter().fold(0.0, |m, v| m.max(v.abs())),
            Nonlinearity::Tanh { epsilon } | Nonlinearity::Sine { epsilon } => epsilon.abs(),
        }
    }

    /// Zero and constant perturbations keep Gaussian laws Gaussian.
    pub fn is_gaussian_preserving(&self) -> bool {
        matches!(self, Nonlinearity::Zero | Nonlinearity::Constant { .. })
    }

    /// The constant offset for Gaussian-preserving families, `None` otherwise.
    pub fn constant_offset(&self, dim: usize) -> Option<DVector<f64>> {
        match self {
            Nonlinearity::Zero => Some(DVector::zeros(dim)),
            Nonlinearity::Constant { value } => Some(DVector::from_column_slice(value)),
            _ => None,
        }
    }

    /// `out += perturbation(arg)`.
    #[inline]
    pub fn add_into(&self, arg: &[f64], out: &mut [f64]) {
        match self {
            Nonlinearity::Zero => {}
            Nonlinearity::Constant { value } => {
                for (o, c) in out.iter_mut().zip(value) {
                    *o += c;
                }
            }
            Nonlinearity::Tanh { epsilon } => {
                for (o, a) in out.iter_mut().zip(arg) {
                    *o += epsilon * a.tanh();
                }
            }
            Nonlinearity::Sine { epsilon } => {
                for (o, a) in out.iter_mut().zip(arg) {
                    *o += epsilon * a.sin();
                }
            }
        }
    }

    fn check(&self, dim: usize, what: &str) -> std::result::Result<(), String> {
        match self {
            Nonlinearity::Constant { value } if value.len() != dim => Err(format!(
                "{what} constant has length {} but must have length {dim}",
                value.len()
            )),
            Nonlinearity::Constant { value } if value.iter().any(|v| !v.is_finite()) => {
                Err(format!("{what} constant must be finite"))
            }
            Nonlinearity::Tanh { epsilon } | Nonlinearity::Sine { epsilon }
                if !epsilon.is_finite() =>
            {
                Err(format!("{what} amplitude must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Drift, observation and diffusion coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// `F`, d×d.
    pub drift: DMatrix<f64>,
    /// `f̃`, bounded drift perturbation.
    pub drift_nonlinear: Nonlinearity,
    /// `H`, n×d.
    pub observation: DMatrix<f64>,
    /// `h̃`, bounded observation perturbation.
    pub observation_nonlinear: Nonlinearity,
    /// `σ`, d×p, constant.
    pub diffusion: DMatrix<f64>,
}

impl ModelSpec {
    pub fn new(
        drift: DMatrix<f64>,
        drift_nonlinear: Nonlinearity,
        observation: DMatrix<f64>,
        observation_nonlinear: Nonlinearity,
        diffusion: DMatrix<f64>,
    ) -> Result<Self> {
        let m = ModelSpec {
            drift,
            drift_nonlinear,
            observation,
            observation_nonlinear,
            diffusion,
        };
        let problems = m.problems();
        if problems.is_empty() {
            Ok(m)
        } else {
            Err(Error::DimensionMismatch(problems.join("; ")))
        }
    }

    /// Purely linear model `dX = F X dt + σ dV`, `dY = H X dt + dW`.
    pub fn linear(drift: DMatrix<f64>, observation: DMatrix<f64>, diffusion: DMatrix<f64>) -> Result<Self> {
        Self::new(drift, Nonlinearity::Zero, observation, Nonlinearity::Zero, diffusion)
    }

    /// Every consistency violation, empty when the model is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.drift.nrows();
        if d == 0 {
            out.push("state dimension must be positive".into());
        }
        if self.drift.ncols() != d {
            out.push(format!(
                "F must be square, got {}x{}",
                self.drift.nrows(),
                self.drift.ncols()
            ));
        }
        if self.observation.nrows() == 0 {
            out.push("observation dimension must be positive".into());
        }
        if self.observation.ncols() != d {
            out.push(format!(
                "H is {}x{} but F is {}x{}",
                self.observation.nrows(),
                self.observation.ncols(),
                self.drift.nrows(),
                self.drift.ncols()
            ));
        }
        if self.diffusion.nrows() != d || self.diffusion.ncols() == 0 {
            out.push(format!(
                "sigma is {}x{} but must be {d}xp with p > 0",
                self.diffusion.nrows(),
                self.diffusion.ncols()
            ));
        }
        for (name, m) in [("F", &self.drift), ("H", &self.observation), ("sigma", &self.diffusion)] {
            if m.iter().any(|v| !v.is_finite()) {
                out.push(format!("{name} has non-finite entries"));
            }
        }
        if let Err(e) = self.drift_nonlinear.check(d, "drift perturbation") {
            out.push(e);
        }
        if let Err(e) = self.observation_nonlinear.check(self.observation.nrows(), "observation perturbation") {
            out.push(e);
        }
        out
    }

    pub fn state_dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.observation.nrows()
    }

    pub fn noise_dim(&self) -> usize {
        self.diffusion.ncols()
    }

    /// `σσᵀ`.
    pub fn diffusion_cov(&self) -> DMatrix<f64> {
        &self.diffusion * self.diffusion.transpose()
    }

    /// Both perturbations are zero or constant.
    pub fn is_gaussian_preserving(&self) -> bool {
        self.drift_nonlinear.is_gaussian_preserving() && self.observation_nonlinear.is_gaussian_preserving()
    }

    /// `out = F x + f̃(x)`.
    #[inline]
    pub fn drift_into(&self, x: &[f64], out: &mut [f64]) {
        mat_vec_into(&self.drift, x, out);
        self.drift_nonlinear.add_into(x, out);
    }

    /// `out = H x + h̃(x)`.
    #[inline]
    pub fn observe_into(&self, x: &[f64], out: &mut [f64]) {
        mat_vec_into(&self.observation, x, out);
        if !matches!(self.observation_nonlinear, Nonlinearity::Zero) {
            // h̃ acts on H x, which `out` currently holds.
            let hx: Vec<f64> = out.to_vec();
            self.observation_nonlinear.add_into(&hx, out);
        }
    }

    pub fn drift_at(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        self.drift_into(x.as_slice(), out.as_mut_slice());
        out
    }

    pub fn observe_at(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.obs_dim());
        self.observe_into(x.as_slice(), out.as_mut_slice());
        out
    }

    pub(crate) fn require_gaussian_preserving(&self) -> Result<()> {
        for n in [&self.drift_nonlinear, &self.observation_nonlinear] {
            if !n.is_gaussian_preserving() {
                return Err(Error::NonGaussianPushForward {
                    family: n.name().to_string(),
                });
            }
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn mat_vec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let (r, c) = m.shape();
    out[..r].iter_mut().for_each(|v| *v = 0.0);
    // Column-major storage: walk columns for contiguous access.
    for j in 0..c {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        let col = &m.as_slice()[j * r..(j + 1) * r];
        for i in 0..r {
            out[i] += col[i] * xj;
        }
    }
}

/// Gaussian law: mean vector and symmetric PSD covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMeasure {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianMeasure {
    /// Validates symmetry (relative 1e-12) and positive semidefiniteness
    /// (relative 1e-10); small negative eigenvalues are clamped to zero.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("mean has non-finite entries".into()));
        }
        let asym = linalg::relative_asymmetry(&cov);
        if !(asym <= 1e-12) {
            return Err(Error::NotSymmetric { asymmetry: asym });
        }
        let cov = linalg::psd_repair(&cov).map_err(|min| Error::NotPositiveSemidefinite { min_eigenvalue: min })?;
        Ok(GaussianMeasure { mean, cov })
    }

    /// Symmetrizes without an eigenvalue check. For values produced by
    /// integrators that already maintain PSD.
    pub(crate) fn from_trusted(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        GaussianMeasure {
            mean,
            cov: linalg::symmetrize(&cov),
        }
    }

    pub fn dirac(mean: DVector<f64>) -> Self {
        let d = mean.len();
        GaussianMeasure {
            mean,
            cov: DMatrix::zeros(d, d),
        }
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `|mean|² + trace(cov)`.
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.cov.trace()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let factor = linalg::sampling_factor(&self.cov);
        sample_with_factor(&self.mean, &factor, rng)
    }
}

pub(crate) fn sample_with_factor<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    factor: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(mean.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + factor * z
}

/// One realization on a uniform grid: signal states and cumulative observations.
///
/// Observation increments are kept alongside the cumulative path: for
/// strongly unstable signals `Y` grows large and differencing it would lose
/// the noise digits the filters need.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub dt: f64,
    pub state_dim: usize,
    pub obs_dim: usize,
    /// Row-major (K+1)×d.
    pub states: Vec<f64>,
    /// Row-major (K+1)×n, `Y_{t_0} = 0`.
    pub observations: Vec<f64>,
    /// Row-major K×n, `Y_{t_{k+1}} - Y_{t_k}`.
    pub obs_increments: Vec<f64>,
    pub seed: u64,
}

impl PathRecord {
    /// Number of grid points K+1.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.times.len().saturating_sub(1)
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.state_dim..(k + 1) * self.state_dim]
    }

    pub fn observation(&self, k: usize) -> &[f64] {
        &self.observations[k * self.obs_dim..(k + 1) * self.obs_dim]
    }

    /// Increment over `[t_k, t_{k+1}]`.
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.obs_increments[k * self.obs_dim..(k + 1) * self.obs_dim]
    }

    pub fn final_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }

    /// `t,x1..xd,y1..yn`.
    pub fn to_csv(&self) -> CsvTable {
        let mut header = vec!["t".to_string()];
        header.extend(csv::numbered("x", self.state_dim));
        header.extend(csv::numbered("y", self.obs_dim));
        let mut table = CsvTable::new(&header);
        let mut row = Vec::with_capacity(1 + self.state_dim + self.obs_dim);
        for k in 0..self.len() {
            row.clear();
            row.push(self.times[k]);
            row.extend_from_slice(self.state(k));
            row.extend_from_slice(self.observation(k));
            table.row(&row);
        }
        table
    }

    /// Stable digest of the observation increments (hex SHA-256).
    pub fn observation_checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.obs_increments {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Number of steps K with `K dt = T`, or an error if `dt` does not divide `T`.
pub fn grid_steps(dt: f64, t_end: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidGrid(format!("T must be positive, got {t_end}")));
    }
    let k = (t_end / dt).round();
    if k < 1.0 || (k * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::InvalidGrid(format!("dt = {dt} does not divide T = {t_end}")));
    }
    Ok(k as usize)
}

pub fn simulate_signal(model: &ModelSpec, x0: &DVector<f64>, dt: f64, t_end: f64, seed: u64) -> Result<PathRecord> {
    simulate_signal_with_guard(model, x0, dt, t_end, seed, DEFAULT_BLOWUP_THRESHOLD)
}

/// Euler-Maruyama: `X_{k+1} = X_k + f(X_k) dt + σ ΔV_k`, `ΔV_k ~ N(0, dt I_p)`.
pub fn simulate_signal_with_guard(
    model: &ModelSpec,
    x0: &DVector<f64>,
    dt: f64,
    t_end: f64,
    seed: u64,
    blowup_threshold: f64,
) -> Result<PathRecord> {
    let problems = model.problems();
    if !problems.is_empty() {
        return Err(Error::DimensionMismatch(problems.join("; ")));
    }
    let d = model.state_dim();
    let p = model.noise_dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "initial state has length {} but the model has d = {d}",
            x0.len()
        )));
    }
    let steps = grid_steps(dt, t_end)?;
    let mut rng = rng::stream(seed, StreamTag::Signal, 0);
    let sqrt_dt = dt.sqrt();

    let mut states = Vec::with_capacity((steps + 1) * d);
    states.extend_from_slice(x0.as_slice());
    let mut x = x0.as_slice().to_vec();
    let mut drift = vec![0.0; d];
    let mut dv = vec![0.0; p];
    let mut noise = vec![0.0; d];
    for k in 0..steps {
        model.drift_into(&x, &mut drift);
        for v in dv.iter_mut() {
            *v = sqrt_dt * rng.sample::<f64, _>(StandardNormal);
        }
        mat_vec_into(&model.diffusion, &dv, &mut noise);
        for i in 0..d {
            x[i] += drift[i] * dt + noise[i];
        }
        if x.iter().any(|v| !v.is_finite() || v.abs() > blowup_threshold) {
            return Err(Error::PathBlowUp { t: (k + 1) as f64 * dt });
        }
        states.extend_from_slice(&x);
    }
    let n = model.obs_dim();
    Ok(PathRecord {
        times: (0..=steps).map(|k| k as f64 * dt).collect(),
        dt,
        state_dim: d,
        obs_dim: n,
        states,
        observations: vec![0.0; (steps + 1) * n],
        obs_increments: vec![0.0; steps * n],
        seed,
    })
}

/// `Y_{k+1} = Y_k + h(X_k) dt + ΔW_k` with `ΔW` drawn from the observation
/// stream of `seed`, which is disjoint from every signal stream.
pub fn simulate_observation(signal: &PathRecord, model: &ModelSpec, seed: u64) -> Result<PathRecord> {
    let mut rng = rng::stream(seed, StreamTag::Observation, 0);
    observe_path(signal, model, Some(&mut rng))
}

/// Noise-free reduction `Y_T = Σ h(X_k) dt`. Test hook.
#[doc(hidden)]
pub fn simulate_observation_noise_free(signal: &PathRecord, model: &ModelSpec) -> Result<PathRecord> {
    observe_path::<rng::StreamRng>(signal, model, None)
}

fn observe_path<R: Rng>(signal: &PathRecord, model: &ModelSpec, mut rng: Option<&mut R>) -> Result<PathRecord> {
    if model.state_dim() != signal.state_dim {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{} but the signal has dimension {}",
            model.obs_dim(),
            model.state_dim(),
            signal.state_dim
        )));
    }
    if signal.states.len() != signal.len() * signal.state_dim || signal.is_empty() {
        return Err(Error::DimensionMismatch("signal states are not populated".into()));
    }
    let n = model.obs_dim();
    let steps = signal.steps();
    let dt = signal.dt;
    let sqrt_dt = dt.sqrt();
    let mut observations = Vec::with_capacity((steps + 1) * n);
    let mut increments = Vec::with_capacity(steps * n);
    let mut y = vec![0.0; n];
    let mut hx = vec![0.0; n];
    observations.extend_from_slice(&y);
    for k in 0..steps {
        model.observe_into(signal.state(k), &mut hx);
        for i in 0..n {
            let dw = match rng.as_deref_mut() {
                Some(r) => sqrt_dt * r.sample::<f64, _>(StandardNormal),
                None => 0.0,
            };
            let inc = hx[i] * dt + dw;
            increments.push(inc);
            y[i] += inc;
        }
        observations.extend_from_slice(&y);
    }
    Ok(PathRecord {
        obs_dim: n,
        observations,
        obs_increments: increments,
        ..signal.clone()
    })
}

/// Law of the signal at time T with no observations, for Gaussian-preserving
/// models: RK4 on `m' = F m + f̃`, `P' = F P + P Fᵀ + σσᵀ`.
pub fn push_forward_moments(model: &ModelSpec, mu0: &GaussianMeasure, t_end: f64, dt: f64) -> Result<GaussianMeasure> {
    let path = push_forward_path(model, mu0, t_end, dt)?;
    let last = path.into_iter().last().expect("grid has at least two points");
    GaussianMeasure::new(last.mean, last.cov)
}

/// Prior moments at every grid point `k dt`, `k = 0..=K`.
pub fn push_forward_path(model: &ModelSpec, mu0: &GaussianMeasure, t_end: f64, dt: f64) -> Result<Vec<GaussianMeasure>> {
    model.require_gaussian_preserving()?;
    let d = model.state_dim();
    if mu0.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "prior has dimension {} but the model has d = {d}",
            mu0.dim()
        )));
    }
    let steps = grid_steps(dt, t_end)?;
    let offset = model.drift_nonlinear.constant_offset(d).expect("checked Gaussian-preserving");
    let q = model.diffusion_cov();
    let f = &model.drift;
    let mean_rhs = |m: &DVector<f64>| f * m + &offset;
    let cov_rhs = |p: &DMatrix<f64>| f * p + p * f.transpose() + &q;

    let mut out = Vec::with_capacity(steps + 1);
    let mut m = mu0.mean.clone();
    let mut p = mu0.cov.clone();
    out.push(GaussianMeasure::from_trusted(m.clone(), p.clone()));
    for _ in 0..steps {
        let (m1, p1) = (mean_rhs(&m), cov_rhs(&p));
        let (m2, p2) = (mean_rhs(&(&m + &m1 * (dt / 2.0))), cov_rhs(&(&p + &p1 * (dt / 2.0))));
        let (m3, p3) = (mean_rhs(&(&m + &m2 * (dt / 2.0))), cov_rhs(&(&p + &p2 * (dt / 2.0))));
        let (m4, p4) = (mean_rhs(&(&m + &m3 * dt)), cov_rhs(&(&p + &p3 * dt)));
        m += (m1 + m2 * 2.0 + m3 * 2.0 + m4) * (dt / 6.0);
        p += (p1 + p2 * 2.0 + p3 * 2.0 + p4) * (dt / 6.0);
        p = linalg::symmetrize(&p);
        out.push(GaussianMeasure::from_trusted(m.clone(), p.clone()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    fn planar(obs: [f64; 2], sigma: DMatrix<f64>) -> ModelSpec {
        ModelSpec::linear(
            DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0])),
            DMatrix::from_row_slice(1, 2, &obs),
            sigma,
        )
        .unwrap()
    }

    #[test]
    fn deterministic_decay_within_euler_budget() {
        let m = ModelSpec::linear(scalar(-1.0), scalar(0.0), scalar(0.0)).unwrap();
        let dt = 1e-3;
        let path = simulate_signal(&m, &DVector::from_element(1, 1.0), dt, 1.0, 0).unwrap();
        let x1 = path.state(path.steps())[0];
        // (1 - dt)^K vs e^{-1}: global error ~ e^{-1} dt / 2.
        assert!((x1 - (-1.0f64).exp()).abs() < dt);
        assert!((x1 - (1.0 - dt).powi(1000)).abs() < 1e-14);
    }

    #[test]
    fn unstable_flow_separates_components() {
        let m = planar([0.0, 1.0], DMatrix::zeros(2, 2));
        let dt = 1e-4;
        let path = simulate_signal(&m, &DVector::from_vec(vec![1.0, 1.0]), dt, 2.0, 0).unwrap();
        let x = path.state(path.steps());
        assert!((x[0] - (-2.0f64).exp()).abs() < 1e-3);
        assert!((x[1] - 2.0f64.exp()).abs() / 2.0f64.exp() < 1e-3);
    }

    #[test]
    fn refinement_halves_endpoint_error() {
        let m = ModelSpec::linear(scalar(-1.0), scalar(0.0), scalar(0.0)).unwrap();
        let exact = (-1.0f64).exp();
        let err = |dt: f64| {
            let p = simulate_signal(&m, &DVector::from_element(1, 1.0), dt, 1.0, 0).unwrap();
            (p.state(p.steps())[0] - exact).abs()
        };
        let ratio = err(1e-2) / err(5e-3);
        assert!((ratio - 2.0).abs() < 0.5, "ratio {ratio}");
    }

    #[test]
    fn identical_seed_gives_bit_identical_path() {
        let m = planar([0.0, 1.0], DMatrix::identity(2, 2));
        let x0 = DVector::from_vec(vec![0.3, -0.2]);
        let a = simulate_signal(&m, &x0, 1e-2, 5.0, 11).unwrap();
        let b = simulate_signal(&m, &x0, 1e-2, 5.0, 11).unwrap();
        let c = simulate_signal(&m, &x0, 1e-2, 5.0, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.states, c.states);
        let ya = simulate_observation(&a, &m, 11).unwrap();
        let yb = simulate_observation(&b, &m, 11).unwrap();
        assert_eq!(ya.observations, yb.observations);
    }

    #[test]
    fn blow_up_is_reported_with_time() {
        let m = ModelSpec::linear(scalar(10.0), scalar(1.0), scalar(0.0)).unwrap();
        match simulate_signal(&m, &DVector::from_element(1, 1.0), 1e-2, 10.0, 0) {
            Err(Error::PathBlowUp { t }) => assert!(t > 3.0 && t < 10.0, "t = {t}"),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn grid_must_divide_horizon() {
        assert!(grid_steps(0.3, 1.0).is_err());
        assert_eq!(grid_steps(1e-3, 30.0).unwrap(), 30_000);
        assert!(grid_steps(0.0, 1.0).is_err());
    }

    #[test]
    fn observation_starts_at_zero_and_is_riemann_sum_without_noise() {
        let m = planar([0.0, 1.0], DMatrix::identity(2, 2));
        let sig = simulate_signal(&m, &DVector::from_vec(vec![1.0, 1.0]), 1e-2, 1.0, 3).unwrap();
        let obs = simulate_observation_noise_free(&sig, &m).unwrap();
        assert_eq!(obs.observation(0), &[0.0]);
        let riemann: f64 = (0..sig.steps()).map(|k| sig.state(k)[1] * sig.dt).sum();
        assert!((obs.observation(obs.steps())[0] - riemann).abs() < 1e-12);
    }

    #[test]
    fn observation_of_second_component_ignores_first() {
        let m = planar([0.0, 1.0], DMatrix::zeros(2, 2));
        let a = simulate_signal(&m, &DVector::from_vec(vec![5.0, 1.0]), 1e-2, 1.0, 0).unwrap();
        let b = simulate_signal(&m, &DVector::from_vec(vec![-3.0, 1.0]), 1e-2, 1.0, 0).unwrap();
        let ya = simulate_observation(&a, &m, 9).unwrap();
        let yb = simulate_observation(&b, &m, 9).unwrap();
        assert_eq!(ya.observations, yb.observations);
    }

    #[test]
    fn pure_noise_observation_has_quadratic_variation_nt() {
        let m = ModelSpec::linear(DMatrix::zeros(2, 2), DMatrix::zeros(3, 2), DMatrix::zeros(2, 2)).unwrap();
        let sig = simulate_signal(&m, &DVector::zeros(2), 1e-3, 10.0, 0).unwrap();
        let obs = simulate_observation(&sig, &m, 5).unwrap();
        let qv: f64 = obs.obs_increments.iter().map(|v| v * v).sum();
        assert!((qv - 30.0).abs() / 30.0 < 0.05, "qv {qv}");
    }

    #[test]
    fn observation_dimension_mismatch_is_rejected() {
        let m2 = planar([0.0, 1.0], DMatrix::identity(2, 2));
        let m1 = ModelSpec::linear(scalar(-1.0), scalar(1.0), scalar(1.0)).unwrap();
        let sig = simulate_signal(&m1, &DVector::zeros(1), 1e-2, 1.0, 0).unwrap();
        assert!(matches!(simulate_observation(&sig, &m2, 0), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn push_forward_identity_flow() {
        let m = ModelSpec::linear(DMatrix::zeros(2, 2), DMatrix::zeros(1, 2), DMatrix::zeros(2, 2)).unwrap();
        let mu = GaussianMeasure::new(
            DVector::from_vec(vec![1.0, -2.0]),
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let out = push_forward_moments(&m, &mu, 3.0, 1e-2).unwrap();
        assert_eq!(out, mu);
    }

    #[test]
    fn push_forward_reaches_stationary_ou_variance() {
        let m = ModelSpec::linear(scalar(-1.0), scalar(0.0), scalar(1.0)).unwrap();
        let mu = GaussianMeasure::new(DVector::zeros(1), scalar(1e-12)).unwrap();
        let out = push_forward_moments(&m, &mu, 10.0, 1e-3).unwrap();
        assert!((out.cov[(0, 0)] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn push_forward_prior_means_drift_apart_like_exp_t() {
        let m = planar([0.0, 1.0], DMatrix::identity(2, 2));
        let a = GaussianMeasure::isotropic(DVector::from_vec(vec![0.0, 0.0]), 1.0).unwrap();
        let b = GaussianMeasure::isotropic(DVector::from_vec(vec![0.0, 1.0]), 1.0).unwrap();
        let t = 5.0;
        let pa = push_forward_moments(&m, &a, t, 1e-3).unwrap();
        let pb = push_forward_moments(&m, &b, t, 1e-3).unwrap();
        let gap = pb.mean[1] - pa.mean[1];
        assert!((gap - t.exp()).abs() / t.exp() < 1e-10);
    }

    #[test]
    fn push_forward_rejects_bounded_nonlinear_drift() {
        let m = ModelSpec::new(
            scalar(-1.0),
            Nonlinearity::Tanh { epsilon: 0.5 },
            scalar(1.0),
            Nonlinearity::Zero,
            scalar(1.0),
        )
        .unwrap();
        let mu = GaussianMeasure::isotropic(DVector::zeros(1), 1.0).unwrap();
        assert!(matches!(
            push_forward_moments(&m, &mu, 1.0, 1e-2),
            Err(Error::NonGaussianPushForward { .. })
        ));
    }

    #[test]
    fn constant_drift_shifts_mean() {
        let m = ModelSpec::new(
            scalar(0.0),
            Nonlinearity::Constant { value: vec![2.0] },
            scalar(1.0),
            Nonlinearity::Zero,
            scalar(0.0),
        )
        .unwrap();
        let mu = GaussianMeasure::dirac(DVector::zeros(1));
        let out = push_forward_moments(&m, &mu, 1.5, 1e-2).unwrap();
        assert!((out.mean[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_measure_validation() {
        assert!(matches!(
            GaussianMeasure::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(matches!(
            GaussianMeasure::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        let g = GaussianMeasure::new(DVector::zeros(2), DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-14]))
            .unwrap();
        assert!(g.cov[(1, 1)] >= 0.0);
        assert_eq!(g.second_moment(), 1.0);
    }

    #[test]
    fn sup_norms_follow_parameters() {
        assert_eq!(Nonlinearity::Zero.sup_norm(), 0.0);
        assert_eq!(Nonlinearity::Tanh { epsilon: 0.5 }.sup_norm(), 0.5);
        assert_eq!(Nonlinearity::Sine { epsilon: -0.2 }.sup_norm(), 0.2);
        assert_eq!(Nonlinearity::Constant { value: vec![1.0, -3.0] }.sup_norm(), 3.0);
    }

    #[test]
    fn model_reports_every_shape_problem() {
        let m = ModelSpec::linear(DMatrix::zeros(2, 2), DMatrix::zeros(1, 3), DMatrix::zeros(3, 1));
        let Err(Error::DimensionMismatch(msg)) = m else { panic!() };
        assert!(msg.contains("H is 1x3") && msg.contains("sigma is 3x1"), "{msg}");
    }
}
