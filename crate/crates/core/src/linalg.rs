//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Complex, DMatrix, DVector};

/// Relative eigenvalue tolerance used for every PSD repair and matrix square root.
pub const PSD_REL_TOL: f64 = 1e-10;

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry of `m - mᵀ` relative to the largest absolute entry of `m`.
pub fn relative_asymmetry(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).amax() / scale
}

/// Symmetrizes and clamps negative eigenvalues to zero.
///
/// Returns `Err(min_eigenvalue)` when the most negative eigenvalue is below
/// `-PSD_REL_TOL * max(λ_max, 0)`. Matrices that are already PSD are returned
/// symmetrized but otherwise untouched, so the repair costs no rounding.
pub fn psd_repair(m: &DMatrix<f64>) -> Result<DMatrix<f64>, f64> {
    let sym = symmetrize(m);
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(f64::NAN);
    }
    if sym.nrows() == 0 {
        return Ok(sym);
    }
    let eig = sym.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return Ok(sym);
    }
    if min < -PSD_REL_TOL * max.max(0.0) {
        return Err(min);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    Ok(reconstruct(&eig.eigenvectors, &clamped))
}

fn reconstruct(vectors: &DMatrix<f64>, values: &DVector<f64>) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |i, j| {
        vectors[(i, j)] * values[j]
    });
    symmetrize(&(scaled * vectors.transpose()))
}

/// Symmetric PSD square root via eigendecomposition, eigenvalues clamped at zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    reconstruct(&eig.eigenvectors, &roots)
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of the symmetric part of `m`.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let eig = symmetrize(m).symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn complex_eigenvalues(m: &DMatrix<f64>) -> Vec<Complex<f64>> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    m.complex_eigenvalues().iter().copied().collect()
}

/// Operator 2-norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Numerical rank of a complex matrix: singular values above `rel_tol * max(1, σ_max)`.
pub fn complex_rank(m: &DMatrix<Complex<f64>>, rel_tol: f64) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let cutoff = rel_tol * sv.max().max(1.0);
    sv.iter().filter(|&&s| s > cutoff).count()
}

/// Solves `A X + X Aᵀ + C = 0` through the Kronecker-vectorized linear system.
/// Returns `None` when the operator is singular (A and -A share an eigenvalue).
pub fn solve_lyapunov(a: &DMatrix<f64>, c: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    let eye = DMatrix::<f64>::identity(d, d);
    let op = eye.kronecker(a) + a.kronecker(&eye);
    let rhs = DVector::from_iterator(d * d, c.iter().map(|v| -v));
    let x = op.lu().solve(&rhs)?;
    Some(symmetrize(&DMatrix::from_column_slice(d, d, x.as_slice())))
}

/// Factor `L` with `L Lᵀ = cov` (symmetric square root), used for sampling.
pub fn sampling_factor(cov: &DMatrix<f64>) -> DMatrix<f64> {
    psd_sqrt(cov)
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}
