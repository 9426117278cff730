//! Dense helpers built on nalgebra's SVD and symmetric eigensolvers.

use nalgebra::{DMatrix, DVector};

/// Singular values of `a`, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> DVector<f64> {
    if a.is_empty() {
        return DVector::zeros(0);
    }
    let mut s = a.clone().svd(false, false).singular_values;
    s.as_mut_slice().sort_by(|x, y| y.total_cmp(x));
    s
}

/// Ratio of the largest to the smallest of the `min(rows, cols)` singular values.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = singular_values(a);
    match (s.iter().next(), s.iter().next_back()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

/// Damped pseudo-inverse `Σ σᵢ/(σᵢ² + λ²) vᵢ uᵢᵀ` with `λ = rel_damping · σ_max`.
pub fn damped_pinv(a: &DMatrix<f64>, rel_damping: f64) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if a.is_empty() {
        return DMatrix::zeros(c, r);
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    let lambda2 = (rel_damping * smax).powi(2);
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s <= 0.0 {
            continue;
        }
        let w = s / (s * s + lambda2);
        out += w * v_t.row(k).transpose() * u.column(k).transpose();
    }
    out
}

/// Minimum-norm least-squares pseudo-inverse; singular values below
/// `rtol · σ_max` are treated as zero.
pub fn pinv(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let (r, c) = a.shape();
    if a.is_empty() {
        return DMatrix::zeros(c, r);
    }
    let smax = singular_values(a)[0];
    a.clone()
        .pseudo_inverse(rtol * smax)
        .unwrap_or_else(|_| DMatrix::zeros(c, r))
}

/// Orthogonal projector onto the null space of `a` (columns space dimension).
/// Directions with singular values below `rtol · σ_max` count as null.
pub fn null_space_projector(a: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let c = a.ncols();
    let mut proj = DMatrix::identity(c, c);
    if a.is_empty() {
        return proj;
    }
    let svd = a.clone().svd(false, true);
    let v_t = svd.v_t.as_ref().expect("v_t requested");
    let smax = svd.singular_values.max();
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rtol * smax {
            let v = v_t.row(k).transpose();
            proj -= &v * v.transpose();
        }
    }
    proj
}

/// Extreme eigenvalues `(min, max)` of a symmetric matrix.
pub fn symmetric_eigen_range(a: &DMatrix<f64>) -> (f64, f64) {
    if a.is_empty() {
        return (1.0, 1.0);
    }
    let e = a.clone().symmetric_eigenvalues();
    (e.min(), e.max())
}
