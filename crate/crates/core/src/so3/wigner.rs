//! Real Wigner-D matrices in the harmonic basis of [`super::harmonics`].
//!
//! The degree-`l` real harmonics are the restriction to the sphere of
//! harmonic homogeneous polynomials, so `Y^l(u) = C_l · u^{⊗l}` for a fixed
//! `(2l+1) × 3^l` intertwiner `C_l`. The intertwiner is solved numerically
//! once (least squares over sample directions) and the representation
//! follows by change of basis from the vector representation:
//!
//! `D^l(R) = C_l · R^{⊗l} · C_l⁺`.
//!
//! Because `C_l` is fitted against the very harmonics used to sample
//! kernels, `Y^l(Ru) = D^l(R) Y^l(u)` holds by construction.

use std::sync::OnceLock;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::pseudo_inverse;
use crate::so3::harmonics::{harmonics_unchecked, MAX_HARMONIC_ORDER};
use crate::so3::rotation::{Rotation, Vec3};

/// Highest irrep order allowed for feature fields.
pub const MAX_FEATURE_ORDER: usize = 2;

struct Intertwiner {
    c: DMatrix<f64>,
    c_pinv: DMatrix<f64>,
}

fn intertwiners() -> &'static [Intertwiner] {
    static CACHE: OnceLock<Vec<Intertwiner>> = OnceLock::new();
    CACHE.get_or_init(|| (0..=MAX_HARMONIC_ORDER).map(solve_intertwiner).collect())
}

fn fibonacci_sphere(n: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let phi = golden * i as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

fn tensor_power(u: Vec3, l: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..l {
        let mut next = Vec::with_capacity(out.len() * 3);
        for a in &out {
            for b in u {
                next.push(a * b);
            }
        }
        out = next;
    }
    out
}

fn solve_intertwiner(l: usize) -> Intertwiner {
    let pts = fibonacci_sphere(400);
    let dim = 2 * l + 1;
    let width = 3usize.pow(l as u32);
    let mut y = DMatrix::zeros(dim, pts.len());
    let mut u = DMatrix::zeros(width, pts.len());
    for (k, p) in pts.iter().enumerate() {
        for (i, v) in harmonics_unchecked(l, *p).into_iter().enumerate() {
            y[(i, k)] = v;
        }
        for (i, v) in tensor_power(*p, l).into_iter().enumerate() {
            u[(i, k)] = v;
        }
    }
    let c = &y * pseudo_inverse(&u, 1e-10);
    let c_pinv = pseudo_inverse(&c, 1e-10);
    Intertwiner { c, c_pinv }
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

/// `D^l(R)` for any harmonic order up to [`MAX_HARMONIC_ORDER`]; used for
/// filter harmonics inside the kernel solver.
pub(crate) fn wigner_d_any(l: usize, r: &Rotation) -> DMatrix<f64> {
    let tw = &intertwiners()[l];
    if l == 0 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    let m = r.matrix();
    let rm = DMatrix::from_fn(3, 3, |i, j| m[i][j]);
    let mut p = rm.clone();
    for _ in 1..l {
        p = kron(&p, &rm);
    }
    &tw.c * p * &tw.c_pinv
}

/// Real Wigner-D matrix of order `l ≤ 2` for the rotation `r`.
pub fn wigner_d_real(l: usize, r: &Rotation) -> Result<DMatrix<f64>> {
    if l > MAX_FEATURE_ORDER {
        return Err(Error::UnsupportedIrrep(l));
    }
    Ok(wigner_d_any(l, r))
}
