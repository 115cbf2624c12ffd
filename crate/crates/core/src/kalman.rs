//! Kalman-Bucy filtering for linear-Gaussian models.
//!
//! The conditional mean solves
//! `dx̂ = (F x̂ + f̃) dt + P Hᵀ (dY - (H x̂ + h̃) dt)` and the conditional
//! covariance the Riccati ODE `P' = σσᵀ + F P + P Fᵀ - P HᵀH P`. Covariances
//! are stepped with classical RK4 and repaired to symmetric PSD after every
//! step. The mean's deterministic drift is stepped with the same RK4 stages;
//! the observation forcing `P_k Hᵀ ΔY_k` enters at the left endpoint.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::csv::{self, CsvTable};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{GaussianMeasure, ModelSpec, PathRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanTrajectory {
    pub times: Vec<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl KalmanTrajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn posterior(&self, k: usize) -> GaussianMeasure {
        GaussianMeasure {
            mean: self.means[k].clone(),
            cov: self.covs[k].clone(),
        }
    }

    /// `t,mean1..meand,p11,p12,...,pdd`.
    pub fn to_csv(&self) -> CsvTable {
        let d = self.means.first().map_or(0, |m| m.len());
        let mut header = vec!["t".to_string()];
        header.extend(csv::numbered("mean", d));
        header.extend(csv::matrix_columns("p", d));
        let mut table = CsvTable::new(&header);
        let mut row = Vec::with_capacity(1 + d + d * d);
        for k in 0..self.len() {
            row.clear();
            row.push(self.times[k]);
            row.extend(self.means[k].iter());
            let p = &self.covs[k];
            for i in 0..d {
                for j in 0..d {
                    row.push(p[(i, j)]);
                }
            }
            table.row(&row);
        }
        table
    }
}

/// Model constants shared by every filter step.
struct Coefficients {
    f: DMatrix<f64>,
    ht: DMatrix<f64>,
    hth: DMatrix<f64>,
    q: DMatrix<f64>,
    f_offset: DVector<f64>,
    h_offset: DVector<f64>,
}

impl Coefficients {
    fn new(model: &ModelSpec) -> Result<Self> {
        model.require_gaussian_preserving()?;
        let problems = model.problems();
        if !problems.is_empty() {
            return Err(Error::DimensionMismatch(problems.join("; ")));
        }
        let d = model.state_dim();
        let n = model.obs_dim();
        let ht = model.observation.transpose();
        Ok(Coefficients {
            hth: &ht * &model.observation,
            ht,
            f: model.drift.clone(),
            q: model.diffusion_cov(),
            f_offset: model.drift_nonlinear.constant_offset(d).expect("Gaussian-preserving"),
            h_offset: model.observation_nonlinear.constant_offset(n).expect("Gaussian-preserving"),
        })
    }

    fn riccati_rhs(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        &self.q + &self.f * p + p * self.f.transpose() - p * &self.hth * p
    }

    /// RK4 stage covariances `[P_k, P_k + dt/2 k1, P_k + dt/2 k2, P_k + dt k3]` and `P_{k+1}`.
    fn riccati_stages(&self, p: &DMatrix<f64>, dt: f64) -> ([DMatrix<f64>; 4], DMatrix<f64>) {
        let k1 = self.riccati_rhs(p);
        let p2 = p + &k1 * (dt / 2.0);
        let k2 = self.riccati_rhs(&p2);
        let p3 = p + &k2 * (dt / 2.0);
        let k3 = self.riccati_rhs(&p3);
        let p4 = p + &k3 * dt;
        let k4 = self.riccati_rhs(&p4);
        let next = p + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        ([p.clone(), p2, p3, p4], next)
    }

    /// Closed-loop drift `(F - P HᵀH) m + f̃ - P Hᵀ h̃`.
    fn mean_rhs(&self, p: &DMatrix<f64>, m: &DVector<f64>) -> DVector<f64> {
        let a = &self.f - p * &self.hth;
        let b = &self.f_offset - p * (&self.ht * &self.h_offset);
        a * m + b
    }

    fn mean_drift_step(&self, stages: &[DMatrix<f64>; 4], m: &DVector<f64>, dt: f64) -> DVector<f64> {
        let k1 = self.mean_rhs(&stages[0], m);
        let k2 = self.mean_rhs(&stages[1], &(m + &k1 * (dt / 2.0)));
        let k3 = self.mean_rhs(&stages[2], &(m + &k2 * (dt / 2.0)));
        let k4 = self.mean_rhs(&stages[3], &(m + &k3 * dt));
        m + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
    }

    fn gain_forcing(&self, p: &DMatrix<f64>, dy: &[f64]) -> DVector<f64> {
        p * (&self.ht * DVector::from_column_slice(dy))
    }
}

fn check_obs(obs: &PathRecord, model: &ModelSpec) -> Result<()> {
    if obs.state_dim != model.state_dim() || obs.obs_dim != model.obs_dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation path is (d={}, n={}) but the model is (d={}, n={})",
            obs.state_dim,
            obs.obs_dim,
            model.state_dim(),
            model.obs_dim()
        )));
    }
    if obs.obs_increments.len() != obs.steps() * obs.obs_dim {
        return Err(Error::GridMismatch("observation increments do not match the grid".into()));
    }
    Ok(())
}

fn check_prior(prior: &GaussianMeasure, model: &ModelSpec) -> Result<()> {
    if prior.dim() != model.state_dim() {
        return Err(Error::DimensionMismatch(format!(
            "prior has dimension {} but the model has d = {}",
            prior.dim(),
            model.state_dim()
        )));
    }
    Ok(())
}

fn repaired(p: &DMatrix<f64>, step: usize) -> Result<DMatrix<f64>> {
    linalg::psd_repair(p).map_err(|_| Error::RiccatiStepFailure { step })
}

pub fn run_kalman_bucy(obs: &PathRecord, prior: &GaussianMeasure, model: &ModelSpec) -> Result<KalmanTrajectory> {
    let c = Coefficients::new(model)?;
    check_obs(obs, model)?;
    check_prior(prior, model)?;
    let dt = obs.dt;
    let mut means = Vec::with_capacity(obs.len());
    let mut covs = Vec::with_capacity(obs.len());
    let mut m = prior.mean.clone();
    let mut p = prior.cov.clone();
    means.push(m.clone());
    covs.push(p.clone());
    for k in 0..obs.steps() {
        let dy = obs.increment(k);
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObservation { step: k });
        }
        let (stages, p_next) = c.riccati_stages(&p, dt);
        let forcing = c.gain_forcing(&p, dy);
        m = c.mean_drift_step(&stages, &m, dt) + forcing;
        p = repaired(&p_next, k + 1)?;
        means.push(m.clone());
        covs.push(p.clone());
    }
    Ok(KalmanTrajectory {
        times: obs.times.clone(),
        means,
        covs,
    })
}

/// Two Kalman-Bucy filters from different priors on one observation path.
#[derive(Debug, Clone)]
pub struct TwinKalman {
    pub first: KalmanTrajectory,
    pub second: KalmanTrajectory,
    /// `x̂_second - x̂_first` at every grid point.
    pub mean_gap: Vec<DVector<f64>>,
}

/// Runs filter `a` directly and filter `b` as `a` plus propagated offsets.
///
/// The covariance offset `D = P_b - P_a` obeys `D' = Q_a D + D Q_bᵀ` with
/// `Q = F - P HᵀH`, and the mean offset obeys the exact difference of the two
/// update rules, `δ_{k+1} = δ_k + RK4[Q_b δ - D (HᵀH x̂_a + Hᵀh̃)] + D_k Hᵀ ΔY_k`.
/// Both decay on their own scale instead of being small differences of
/// large quantities.
pub fn run_kalman_bucy_pair(
    obs: &PathRecord,
    prior_a: &GaussianMeasure,
    prior_b: &GaussianMeasure,
    model: &ModelSpec,
) -> Result<TwinKalman> {
    let c = Coefficients::new(model)?;
    check_obs(obs, model)?;
    check_prior(prior_a, model)?;
    check_prior(prior_b, model)?;
    let dt = obs.dt;
    let len = obs.len();
    let mut first = KalmanTrajectory {
        times: obs.times.clone(),
        means: Vec::with_capacity(len),
        covs: Vec::with_capacity(len),
    };
    let mut second = first.clone();
    let mut gaps = Vec::with_capacity(len);

    let mut ma = prior_a.mean.clone();
    let mut pa = prior_a.cov.clone();
    let mut dp = &prior_b.cov - &prior_a.cov;
    let mut delta = &prior_b.mean - &prior_a.mean;
    let h_forcing = &c.ht * &c.h_offset;
    let closed = |p: &DMatrix<f64>| &c.f - p * &c.hth;
    let cov_gap_rhs = |pa_s: &DMatrix<f64>, d_s: &DMatrix<f64>| {
        let pb_s = pa_s + d_s;
        closed(pa_s) * d_s + d_s * closed(&pb_s).transpose()
    };
    let gap_rhs = |pa_s: &DMatrix<f64>, dp_s: &DMatrix<f64>, ma_s: &DVector<f64>, d_s: &DVector<f64>| {
        let pb_s = pa_s + dp_s;
        closed(&pb_s) * d_s - dp_s * (&c.hth * ma_s + &h_forcing)
    };

    for k in 0..=obs.steps() {
        first.means.push(ma.clone());
        first.covs.push(pa.clone());
        second.means.push(&ma + &delta);
        second.covs.push(repaired(&(&pa + &dp), k)?);
        gaps.push(delta.clone());
        if k == obs.steps() {
            break;
        }
        let dy = obs.increment(k);
        if dy.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteObservation { step: k });
        }
        let (sa, pa_next) = c.riccati_stages(&pa, dt);

        // Joint RK4 on (x̂_a, D, δ) along the stages of P_a.
        let e1 = cov_gap_rhs(&sa[0], &dp);
        let dp2 = &dp + &e1 * (dt / 2.0);
        let e2 = cov_gap_rhs(&sa[1], &dp2);
        let dp3 = &dp + &e2 * (dt / 2.0);
        let e3 = cov_gap_rhs(&sa[2], &dp3);
        let dp4 = &dp + &e3 * dt;
        let e4 = cov_gap_rhs(&sa[3], &dp4);

        let a1 = c.mean_rhs(&sa[0], &ma);
        let g1 = gap_rhs(&sa[0], &dp, &ma, &delta);
        let ma2 = &ma + &a1 * (dt / 2.0);
        let d2 = &delta + &g1 * (dt / 2.0);
        let a2 = c.mean_rhs(&sa[1], &ma2);
        let g2 = gap_rhs(&sa[1], &dp2, &ma2, &d2);
        let ma3 = &ma + &a2 * (dt / 2.0);
        let d3 = &delta + &g2 * (dt / 2.0);
        let a3 = c.mean_rhs(&sa[2], &ma3);
        let g3 = gap_rhs(&sa[2], &dp3, &ma3, &d3);
        let ma4 = &ma + &a3 * dt;
        let d4 = &delta + &g3 * dt;
        let a4 = c.mean_rhs(&sa[3], &ma4);
        let g4 = gap_rhs(&sa[3], &dp4, &ma4, &d4);

        let forcing_a = c.gain_forcing(&pa, dy);
        let forcing_gap = c.gain_forcing(&dp, dy);
        ma = &ma + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0) + forcing_a;
        delta = &delta + (g1 + g2 * 2.0 + g3 * 2.0 + g4) * (dt / 6.0) + forcing_gap;
        dp = linalg::symmetrize(&(&dp + (e1 + e2 * 2.0 + e3 * 2.0 + e4) * (dt / 6.0)));
        pa = repaired(&pa_next, k + 1)?;
    }
    Ok(TwinKalman {
        first,
        second,
        mean_gap: gaps,
    })
}

/// Riccati flow `P' = σσᵀ + F P + P Fᵀ - P HᵀH P` from `p0`, RK4 with PSD repair.
pub fn integrate_riccati(model: &ModelSpec, p0: &DMatrix<f64>, t_end: f64, dt: f64) -> Result<Vec<DMatrix<f64>>> {
    let c = Coefficients::new(model)?;
    let steps = crate::model::grid_steps(dt, t_end)?;
    let mut out = Vec::with_capacity(steps + 1);
    let mut p = p0.clone();
    out.push(p.clone());
    for k in 0..steps {
        let (_, next) = c.riccati_stages(&p, dt);
        p = repaired(&next, k + 1)?;
        out.push(p.clone());
    }
    Ok(out)
}

/// `Q_t = F - P_t HᵀH` along a trajectory.
pub fn closed_loop_path(traj: &KalmanTrajectory, model: &ModelSpec) -> Vec<DMatrix<f64>> {
    let hth = model.observation.transpose() * &model.observation;
    traj.covs.iter().map(|p| &model.drift - p * &hth).collect()
}

/// Outcome of a Hautus rank test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HautusResult {
    pub holds: bool,
    /// First eigenvalue with `Re λ ≥ 0` that fails the rank condition.
    pub witness: Option<(f64, f64)>,
}

const HAUTUS_RANK_TOL: f64 = 1e-8;

fn nonstable_eigenvalues(f: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut eigs: Vec<Complex<f64>> = linalg::complex_eigenvalues(f)
        .into_iter()
        .filter(|l| l.re >= -1e-10 * l.norm().max(1.0))
        .collect();
    eigs.sort_by(|a, b| b.re.total_cmp(&a.re).then(a.im.total_cmp(&b.im)));
    eigs
}

fn shifted(f: &DMatrix<f64>, lambda: Complex<f64>) -> DMatrix<Complex<f64>> {
    let d = f.nrows();
    DMatrix::from_fn(d, d, |i, j| {
        let v = Complex::new(f[(i, j)], 0.0);
        if i == j {
            v - lambda
        } else {
            v
        }
    })
}

/// Hautus test: `rank [F - λI; H] = d` for every eigenvalue with `Re λ ≥ 0`.
pub fn check_detectability(f: &DMatrix<f64>, h: &DMatrix<f64>) -> HautusResult {
    let d = f.nrows();
    for lambda in nonstable_eigenvalues(f) {
        let top = shifted(f, lambda);
        let n = h.nrows();
        let stacked = DMatrix::from_fn(d + n, d, |i, j| {
            if i < d {
                top[(i, j)]
            } else {
                Complex::new(h[(i - d, j)], 0.0)
            }
        });
        if linalg::complex_rank(&stacked, HAUTUS_RANK_TOL) < d {
            return HautusResult {
                holds: false,
                witness: Some((lambda.re, lambda.im)),
            };
        }
    }
    HautusResult {
        holds: true,
        witness: None,
    }
}

/// Dual Hautus test: `rank [F - λI, σ] = d` for every eigenvalue with `Re λ ≥ 0`.
pub fn check_stabilizability(f: &DMatrix<f64>, sigma: &DMatrix<f64>) -> HautusResult {
    let d = f.nrows();
    for lambda in nonstable_eigenvalues(f) {
        let left = shifted(f, lambda);
        let p = sigma.ncols();
        let side = DMatrix::from_fn(d, d + p, |i, j| {
            if j < d {
                left[(i, j)]
            } else {
                Complex::new(sigma[(i, j - d)], 0.0)
            }
        });
        if linalg::complex_rank(&side, HAUTUS_RANK_TOL) < d {
            return HautusResult {
                holds: false,
                witness: Some((lambda.re, lambda.im)),
            };
        }
    }
    HautusResult {
        holds: true,
        witness: None,
    }
}

/// Stationary covariance of the filter.
#[derive(Debug, Clone, PartialEq)]
pub struct AreSolution {
    pub p_inf: DMatrix<f64>,
    /// `F - P∞ HᵀH`.
    pub q_inf: DMatrix<f64>,
    /// `-max Re eig(Q∞)`.
    pub slowest_decay: f64,
    /// Frobenius norm of `σσᵀ + F P∞ + P∞ Fᵀ - P∞ HᵀH P∞`.
    pub residual: f64,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl AreSolution {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "p_inf": rows(&self.p_inf),
            "q_inf": rows(&self.q_inf),
            "decay": self.slowest_decay,
            "residual": self.residual,
        })
    }
}

pub fn are_residual(model: &ModelSpec, p: &DMatrix<f64>) -> f64 {
    let hth = model.observation.transpose() * &model.observation;
    let r = model.diffusion_cov() + &model.drift * p + p * model.drift.transpose() - p * hth * p;
    r.norm()
}

/// Flows the Riccati ODE from `P = 0` until `‖P'‖ ≤ tol (1 + ‖P‖)` or
/// `t = max_t`, then polishes with up to 20 Newton-Kleinman iterations.
pub fn solve_are(model: &ModelSpec, tol: f64, max_t: f64) -> Result<AreSolution> {
    let c = Coefficients::new(model)?;
    let det = check_detectability(&model.drift, &model.observation);
    if let Some((re, im)) = det.witness {
        return Err(Error::UndetectablePair {
            kind: "undetectable (F, H)",
            re,
            im,
        });
    }
    let stab = check_stabilizability(&model.drift, &model.diffusion);
    if let Some((re, im)) = stab.witness {
        return Err(Error::UndetectablePair {
            kind: "unstabilizable (F, sigma)",
            re,
            im,
        });
    }

    let d = model.state_dim();
    let scale = 1.0 + linalg::spectral_norm(&c.f) + linalg::spectral_norm(&c.hth) * (1.0 + linalg::spectral_norm(&c.q));
    let h = (0.05 / scale).min(1e-2);
    let mut p = DMatrix::zeros(d, d);
    let mut t = 0.0;
    let mut step = 0usize;
    let mut flow_converged = false;
    while t < max_t {
        let rhs = c.riccati_rhs(&p);
        if rhs.norm() <= tol * (1.0 + p.norm()) {
            flow_converged = true;
            break;
        }
        let (_, next) = c.riccati_stages(&p, h);
        step += 1;
        p = repaired(&next, step)?;
        t += h;
    }

    let mut best_residual = are_residual(model, &p);
    for _ in 0..20 {
        let closed = &c.f - &p * &c.hth;
        let forcing = &c.q + &p * &c.hth * &p;
        let Some(next) = linalg::solve_lyapunov(&closed, &forcing) else {
            break;
        };
        let Ok(next) = linalg::psd_repair(&next) else {
            break;
        };
        let r = are_residual(model, &next);
        if !(r < best_residual) {
            break;
        }
        p = next;
        best_residual = r;
        if r <= 1e-14 * (1.0 + p.norm()) {
            break;
        }
    }

    if !flow_converged && best_residual > 1e-9 * (1.0 + p.norm()) {
        return Err(Error::AreNotConverged { max_t });
    }
    let q_inf = &c.f - &p * &c.hth;
    let max_re = linalg::complex_eigenvalues(&q_inf)
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(AreSolution {
        p_inf: p,
        q_inf,
        slowest_decay: -max_re,
        residual: best_residual,
    })
}

/// `I_{k+1} = I_k + ΔY_k - (H x̂_k + h̃) dt`, `I_0 = 0`.
pub fn innovation_path(obs: &PathRecord, traj: &KalmanTrajectory, model: &ModelSpec) -> Result<Vec<DVector<f64>>> {
    if traj.len() != obs.len() || traj.times.iter().zip(&obs.times).any(|(a, b)| a != b) {
        return Err(Error::GridMismatch(format!(
            "trajectory has {} points but the observation path has {}",
            traj.len(),
            obs.len()
        )));
    }
    check_obs(obs, model)?;
    let n = model.obs_dim();
    let dt = obs.dt;
    let mut out = Vec::with_capacity(obs.len());
    let mut innov = DVector::zeros(n);
    out.push(innov.clone());
    for k in 0..obs.steps() {
        let predicted = model.observe_at(&traj.means[k]);
        let dy = DVector::from_column_slice(obs.increment(k));
        innov += dy - predicted * dt;
        out.push(innov.clone());
    }
    Ok(out)
}

/// Default ψ-decay window length.
pub const DEFAULT_PSI_WINDOW: f64 = 1.0;
/// Default burn-in fraction of the horizon.
pub const DEFAULT_PSI_BURN_IN: f64 = 0.2;

/// Estimates `c` in `E|ψ_{s:t}|² ≤ e^{-c (t-s)}` from `dψ/dt = Q_t ψ`.
///
/// `ψ` restarts at the identity on consecutive windows of length `window`
/// after the burn-in; `c = -(2/window) · mean log ‖ψ_window‖₂`. `q_path` is
/// sampled on a uniform grid of step `dt`; midpoint values are linear
/// interpolations inside RK4.
pub fn estimate_psi_decay(q_path: &[DMatrix<f64>], dt: f64, window: f64, burn_in: f64) -> Result<f64> {
    let steps = q_path.len().saturating_sub(1);
    let per_window = ((window / dt).round() as usize).max(1);
    let start = (burn_in.clamp(0.0, 1.0) * steps as f64).ceil() as usize;
    let available = steps.saturating_sub(start);
    if per_window > available || !(window > 0.0) {
        return Err(Error::WindowTooLong {
            window,
            available: available as f64 * dt,
        });
    }
    let d = q_path[0].nrows();
    let mut logs = Vec::new();
    let mut s = start;
    while s + per_window <= steps {
        let mut psi = DMatrix::<f64>::identity(d, d);
        for j in s..s + per_window {
            let q0 = &q_path[j];
            let q1 = &q_path[j + 1];
            let qm = (q0 + q1) * 0.5;
            let k1 = q0 * &psi;
            let k2 = &qm * (&psi + &k1 * (dt / 2.0));
            let k3 = &qm * (&psi + &k2 * (dt / 2.0));
            let k4 = q1 * (&psi + &k3 * dt);
            psi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        }
        logs.push(linalg::spectral_norm(&psi).ln());
        s += per_window;
    }
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(-2.0 / (per_window as f64 * dt) * mean)
}
