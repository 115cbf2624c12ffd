//! Wasserstein-2 distances.
//!
//! Gaussian pairs use the closed form
//! `W2² = |m_a - m_b|² + tr(Σ_a + Σ_b - 2 (Σ_b^{1/2} Σ_a Σ_b^{1/2})^{1/2})`.
//! Equal-size uniform clouds use an exact optimal matching (sorting in 1-D).

use nalgebra::{DMatrix, DVector};

use crate::assignment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::GaussianMeasure;
use crate::particle::{systematic_resample_to, ParticleCloud};
use crate::rng::{self, StreamTag};

/// Largest cloud accepted by the exact assignment route in d ≥ 2.
pub const MAX_ASSIGNMENT_SIZE: usize = 1024;

/// Squared Bures distance `tr(A + B - 2 (B^{1/2} A B^{1/2})^{1/2})`.
///
/// In the eigenbasis of a well-conditioned reference `B = V diag(b) Vᵀ`, set
/// `M = diag(√b) Vᵀ A V diag(√b)` and `L = M^{1/2} - diag(b)`. Expanding
/// `(diag(b) + L)² = M` gives `tr(A) - tr(B) - 2 tr(L) = Σ_i (L²)_ii / b_i`,
/// a sum of nonnegative terms. This stays accurate when `A ≈ B`, where the
/// textbook trace formula cancels catastrophically.
pub fn bures_squared(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let d = a.nrows();
    if d == 0 {
        return 0.0;
    }
    let (va, _) = linalg::sym_eigen(a);
    let (vb, _) = linalg::sym_eigen(b);
    let cond = |v: &DVector<f64>| {
        let max = v.max();
        if max > 0.0 {
            v.min() / max
        } else {
            0.0
        }
    };
    let (reference, other) = if cond(&vb) >= cond(&va) { (b, a) } else { (a, b) };
    let (vals, vecs) = linalg::sym_eigen(reference);
    let max = vals.max();
    if max > 0.0 && vals.min() > 1e-8 * max {
        let roots = vals.map(f64::sqrt);
        let rotated = vecs.transpose() * other * &vecs;
        let m = DMatrix::from_fn(d, d, |i, j| roots[i] * rotated[(i, j)] * roots[j]);
        let r = linalg::psd_sqrt(&m);
        let mut total = 0.0;
        for i in 0..d {
            let mut row_sq = 0.0;
            for j in 0..d {
                let l = r[(i, j)] - if i == j { vals[i] } else { 0.0 };
                row_sq += l * l;
            }
            total += row_sq / vals[i];
        }
        return total;
    }
    bures_squared_direct(a, b)
}

/// The plain trace formula, clamped at zero.
pub fn bures_squared_direct(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let sb = linalg::psd_sqrt(b);
    let cross = linalg::psd_sqrt(&(&sb * a * &sb));
    (a.trace() + b.trace() - 2.0 * cross.trace()).max(0.0)
}

/// W2 from a mean difference and the two covariances.
pub fn w2_from_parts(mean_diff: &DVector<f64>, cov_a: &DMatrix<f64>, cov_b: &DMatrix<f64>) -> f64 {
    let bures = if cov_a == cov_b { 0.0 } else { bures_squared(cov_a, cov_b) };
    (mean_diff.norm_squared() + bures).sqrt()
}

fn checked_cov(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::psd_repair(cov).map_err(|min| Error::NotPositiveSemidefinite { min_eigenvalue: min })
}

pub fn w2_gaussian(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidMeasure(format!(
            "dimension mismatch: {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let ca = checked_cov(&a.cov)?;
    let cb = checked_cov(&b.cov)?;
    Ok(w2_from_parts(&(&a.mean - &b.mean), &ca, &cb))
}

/// Commuting-covariance route: `√(|Δm|² + Σ_i (√σ_{a,i} - √σ_{b,i})²)` for
/// diagonal covariances.
pub fn w2_gaussian_diagonal(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<f64> {
    let off_diag = |m: &DMatrix<f64>| (0..m.nrows()).any(|i| (0..m.ncols()).any(|j| i != j && m[(i, j)] != 0.0));
    if a.dim() != b.dim() || off_diag(&a.cov) || off_diag(&b.cov) {
        return Err(Error::InvalidMeasure("diagonal route needs diagonal covariances of equal dimension".into()));
    }
    let spread: f64 = (0..a.dim())
        .map(|i| {
            let s = a.cov[(i, i)].max(0.0).sqrt() - b.cov[(i, i)].max(0.0).sqrt();
            s * s
        })
        .sum();
    Ok(((&a.mean - &b.mean).norm_squared() + spread).sqrt())
}

/// `|mean|² + trace(cov)`.
pub fn second_moment(g: &GaussianMeasure) -> f64 {
    g.second_moment()
}

fn check_pair(a: &ParticleCloud, b: &ParticleCloud) -> Result<()> {
    if a.dim != b.dim {
        return Err(Error::InvalidMeasure(format!("dimension mismatch: {} vs {}", a.dim, b.dim)));
    }
    if a.len() != b.len() {
        return Err(Error::InvalidMeasure(format!(
            "unequal particle counts: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// Systematic resample to `m` uniform points unless the cloud already is uniform of size `m`.
pub fn to_uniform(cloud: &ParticleCloud, m: usize, seed: u64) -> ParticleCloud {
    if cloud.len() == m && cloud.is_uniform() {
        return cloud.clone();
    }
    let mut rng = rng::stream(seed, StreamTag::Wasserstein, m as u64);
    systematic_resample_to(cloud, m, &mut rng).0
}

pub fn w2_empirical(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    w2_empirical_seeded(a, b, 0)
}

/// Empirical W2 between equal-size clouds. Non-uniform clouds are first
/// resampled to uniform weights with a stream derived from `seed`.
pub fn w2_empirical_seeded(a: &ParticleCloud, b: &ParticleCloud, seed: u64) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    let a = to_uniform(a, n, seed);
    let b = to_uniform(b, n, rng::sub_seed(seed, StreamTag::Wasserstein, 1));
    if a.dim == 1 {
        Ok(w2_sorted(&a.positions, &b.positions))
    } else {
        w2_assignment(&a, &b)
    }
}

/// 1-D quantile coupling: RMS of sorted differences.
pub fn w2_sorted(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let costs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
    (canonical_sum(costs) / a.len() as f64).sqrt()
}

/// Compensated sum in ascending order, so equal multisets give equal bits.
fn canonical_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for t in terms {
        let y = t - carry;
        let next = sum + y;
        carry = (next - sum) - y;
        sum = next;
    }
    sum
}

/// Exact optimal matching on squared distances, any dimension.
pub fn w2_assignment(a: &ParticleCloud, b: &ParticleCloud) -> Result<f64> {
    check_pair(a, b)?;
    let n = a.len();
    if n > MAX_ASSIGNMENT_SIZE {
        return Err(Error::AssignmentTooLarge {
            n,
            max: MAX_ASSIGNMENT_SIZE,
        });
    }
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        let x = a.particle(i);
        for j in 0..n {
            cost[i * n + j] = x.iter().zip(b.particle(j)).map(|(p, q)| (p - q) * (p - q)).sum();
        }
    }
    let matching = assignment::solve(&cost, n);
    let costs = matching.iter().enumerate().map(|(i, &j)| cost[i * n + j]).collect();
    Ok((canonical_sum(costs) / n as f64).sqrt())
}

/// Both moment inequalities with constant C = 2 and their margins.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MomentBoundReport {
    pub w2: f64,
    /// `2 (μ² + ν²)`, bounds `W2²`.
    pub second_moment_bound: f64,
    pub second_moment_margin: f64,
    /// `2 (√tr P_a + √tr P_b + |â - b̂|)`, bounds `W2`.
    pub spread_bound: f64,
    pub spread_margin: f64,
}

impl MomentBoundReport {
    pub fn holds(&self) -> bool {
        self.second_moment_margin >= 0.0 && self.spread_margin >= 0.0
    }
}

pub fn moment_bound_check(a: &GaussianMeasure, b: &GaussianMeasure) -> Result<MomentBoundReport> {
    let w2 = w2_gaussian(a, b)?;
    let second_moment_bound = 2.0 * (a.second_moment() + b.second_moment());
    let spread_bound = 2.0 * (a.cov.trace().max(0.0).sqrt() + b.cov.trace().max(0.0).sqrt() + (&a.mean - &b.mean).norm());
    Ok(MomentBoundReport {
        w2,
        second_moment_bound,
        second_moment_margin: second_moment_bound - w2 * w2,
        spread_bound,
        spread_margin: spread_bound - w2,
    })
}
