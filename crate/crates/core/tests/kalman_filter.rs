use fastab_core::experiments::simulate_realization;
use fastab_core::kalman::{self, innovation_path, run_kalman_bucy};
use fastab_core::{GaussianMeasure, ModelSpec, PathRecord};
use nalgebra::{DMatrix, DVector};

/// Discrete-time Kalman filter on `ΔY_k = H x_k dt + v_k`, `v_k ~ N(0, dt I)`,
/// with Euler transition `x_{k+1} = (I + F dt) x_k + w_k`, `w_k ~ N(0, σσᵀ dt)`.
fn discrete_kalman(obs: &PathRecord, prior: &GaussianMeasure, m: &ModelSpec) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let d = m.state_dim();
    let dt = obs.dt;
    let a = DMatrix::identity(d, d) + &m.drift * dt;
    let q = m.diffusion_cov() * dt;
    let hd = &m.observation * dt;
    let r = DMatrix::identity(m.obs_dim(), m.obs_dim()) * dt;
    let mut x = prior.mean.clone();
    let mut p = prior.cov.clone();
    let mut out = vec![(x.clone(), p.clone())];
    for k in 0..obs.steps() {
        let dy = DVector::from_column_slice(obs.increment(k));
        let s = &hd * &p * hd.transpose() + &r;
        let gain = &p * hd.transpose() * s.try_inverse().unwrap();
        x = &x + &gain * (dy - &hd * &x);
        p = (DMatrix::identity(d, d) - &gain * &hd) * &p;
        x = &a * x;
        p = &a * p * a.transpose() + &q;
        out.push((x.clone(), p.clone()));
    }
    out
}

fn two_d() -> ModelSpec {
    ModelSpec::linear(
        DMatrix::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, 0.3]),
        DMatrix::from_row_slice(1, 2, &[0.5, 1.0]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.2, 0.8]),
    )
    .unwrap()
}

#[test]
fn kalman_bucy_agrees_with_discrete_filter_to_first_order() {
    let m = two_d();
    let prior = GaussianMeasure::new(DVector::from_vec(vec![1.0, -1.0]), DMatrix::identity(2, 2)).unwrap();
    let mut errs = Vec::new();
    for dt in [4e-3, 2e-3, 1e-3] {
        let obs = simulate_realization(&m, &prior, 5.0, dt, 17).unwrap();
        let kb = run_kalman_bucy(&obs, &prior, &m).unwrap();
        let dk = discrete_kalman(&obs, &prior, &m);
        let mean_err = kb.means.iter().zip(&dk).map(|(a, (b, _))| (a - b).amax()).fold(0.0, f64::max);
        let cov_err = kb.covs.iter().zip(&dk).map(|(a, (_, b))| (a - b).amax()).fold(0.0, f64::max);
        assert!(mean_err < 0.05 && cov_err < 0.02, "dt {dt}: mean {mean_err:.3e} cov {cov_err:.3e}");
        errs.push(cov_err);
    }
    // Covariance differences are deterministic and shrink linearly with dt.
    assert!(errs[2] < 0.6 * errs[0], "{errs:?}");
}

fn block_lag_correlation(increments: &[f64], block: usize) -> (f64, usize) {
    let sums: Vec<f64> = increments.chunks_exact(block).map(|c| c.iter().sum()).collect();
    let pairs = sums.len() - 1;
    let num: f64 = sums.windows(2).map(|w| w[0] * w[1]).sum();
    let den: f64 = sums.iter().map(|s| s * s).sum::<f64>();
    (num / den * sums.len() as f64 / pairs as f64, pairs)
}

fn innovation_stats(true_model: &ModelSpec, filter_model: &ModelSpec, seeds: u64) -> (f64, f64, f64) {
    let prior = GaussianMeasure::isotropic(DVector::zeros(1), 1.0).unwrap();
    let mut qv = 0.0;
    let mut corr_sum = 0.0;
    let mut total_pairs = 0;
    for seed in 0..seeds {
        let obs = simulate_realization(true_model, &prior, 10.0, 1e-3, 300 + seed).unwrap();
        let traj = run_kalman_bucy(&obs, &prior, filter_model).unwrap();
        let innov = innovation_path(&obs, &traj, filter_model).unwrap();
        let inc: Vec<f64> = innov.windows(2).map(|w| w[1][0] - w[0][0]).collect();
        qv += inc.iter().map(|v| v * v).sum::<f64>() / seeds as f64;
        let (c, pairs) = block_lag_correlation(&inc, 250);
        corr_sum += c * pairs as f64;
        total_pairs += pairs;
    }
    let corr = corr_sum / total_pairs as f64;
    (qv, corr, 1.0 / (total_pairs as f64).sqrt())
}

fn scalar(f: f64) -> ModelSpec {
    ModelSpec::linear(
        DMatrix::from_element(1, 1, f),
        DMatrix::from_element(1, 1, 1.0),
        DMatrix::from_element(1, 1, 2.0),
    )
    .unwrap()
}

#[test]
fn misspecified_drift_leaves_serially_correlated_innovations() {
    let truth = scalar(-0.2);
    let (qv, corr, se) = innovation_stats(&truth, &truth, 60);
    assert!((qv / 10.0 - 1.0).abs() < 0.1, "correct filter QV {qv}");
    assert!(corr.abs() < 3.0 * se, "correct filter correlation {corr} (se {se})");

    let (qv, corr, se) = innovation_stats(&truth, &scalar(-4.0), 60);
    assert!((qv / 10.0 - 1.0).abs() < 0.1, "misspecified filter QV {qv}");
    assert!(corr > 3.0 * se, "misspecified filter correlation {corr} (se {se})");
}

#[test]
fn covariances_from_different_priors_forget_their_start() {
    let m = two_d();
    let a = GaussianMeasure::new(DVector::zeros(2), DMatrix::identity(2, 2) * 0.1).unwrap();
    let b = GaussianMeasure::new(DVector::zeros(2), DMatrix::identity(2, 2) * 10.0).unwrap();
    let pa = kalman::integrate_riccati(&m, &a.cov, 10.0, 1e-3).unwrap();
    let pb = kalman::integrate_riccati(&m, &b.cov, 10.0, 1e-3).unwrap();
    let gap = |k: usize| (&pa[k] - &pb[k]).norm();
    let rate_early = (gap(2000) / gap(1000)).ln();
    let rate_late = (gap(8000) / gap(7000)).ln();
    assert!(gap(10_000) < 1e-6 * gap(0), "{}", gap(10_000));
    assert!(rate_early < -0.5 && rate_late < -0.5, "{rate_early} {rate_late}");
}
