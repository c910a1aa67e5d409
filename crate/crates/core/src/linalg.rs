//! Small dense linear-algebra helpers on top of nalgebra's SVD.

use nalgebra::DMatrix;

/// Moore–Penrose pseudo-inverse, dropping singular values below
/// `rel_tol · σ_max`.
pub fn pseudo_inverse(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rel_tol * smax && s > 0.0 {
            // out += v_k · u_kᵀ / s
            for i in 0..a.ncols() {
                let vi = vt[(k, i)] / s;
                if vi == 0.0 {
                    continue;
                }
                for j in 0..a.nrows() {
                    out[(i, j)] += vi * u[(j, k)];
                }
            }
        }
    }
    out
}

/// Orthonormal basis of the null space of `a`, one vector per column.
///
/// A right-singular vector belongs to the null space when its singular value
/// is below `rel_tol · σ_max` (or is missing because `a` has fewer rows than
/// columns).
pub fn null_space(a: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = a.ncols();
    let padded = if a.nrows() < n { a.clone().resize_vertically(n, 0.0) } else { a.clone() };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("v_t requested");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let tol = rel_tol * smax;
    let cols: Vec<usize> = (0..n).filter(|&k| sv[k] <= tol).collect();
    let mut out = DMatrix::zeros(n, cols.len());
    for (c, &k) in cols.iter().enumerate() {
        for i in 0..n {
            out[(i, c)] = vt[(k, i)];
        }
    }
    out
}

/// Singular values, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}
