//! Real spherical harmonics.
//!
//! Convention used everywhere in this crate (and shared by the Wigner-D
//! matrices, so steerability holds):
//!
//! * orthonormal on the unit sphere, no Condon–Shortley phase;
//! * component `i` of a degree-`l` vector holds order `m = i − l`, so
//!   `m = −l..=l`;
//! * `m > 0` uses `cos(mφ)`, `m < 0` uses `sin(|m|φ)`.
//!
//! For `l = 1` this gives `√(3/4π)·(y, z, x)`.

use crate::error::{Error, Result};
use crate::so3::rotation::{norm, Vec3};

/// Largest harmonic order needed anywhere (filters of the `2 ⊗ 2` kernels).
pub const MAX_HARMONIC_ORDER: usize = 4;

/// Real spherical harmonics of order `l` at the unit vector `u`.
pub fn real_spherical_harmonics(l: usize, u: Vec3) -> Result<Vec<f64>> {
    if l > MAX_HARMONIC_ORDER {
        return Err(Error::UnsupportedIrrep(l));
    }
    let n = norm(u);
    if (n - 1.0).abs() > 1e-9 {
        return Err(Error::NotOnSphere(n));
    }
    Ok(harmonics_unchecked(l, u))
}

/// Harmonic polynomial evaluation without the sphere check. On the unit
/// sphere it agrees with [`real_spherical_harmonics`].
pub(crate) fn harmonics_unchecked(l: usize, u: Vec3) -> Vec<f64> {
    let [x, y, z] = u;
    let mut out = vec![0.0; 2 * l + 1];
    // (x + iy)^m, accumulated
    let (mut re, mut im) = (1.0, 0.0);
    for m in 0..=l {
        if m > 0 {
            let nre = re * x - im * y;
            im = re * y + im * x;
            re = nre;
        }
        let q = legendre_q(l, m, z);
        let nlm = normalization(l, m);
        if m == 0 {
            out[l] = nlm * q;
        } else {
            let s = std::f64::consts::SQRT_2 * nlm * q;
            out[l + m] = s * re;
            out[l - m] = s * im;
        }
    }
    out
}

/// `P_l^m(z) / (1 − z²)^{m/2}` without the Condon–Shortley phase.
fn legendre_q(l: usize, m: usize, z: f64) -> f64 {
    let mut pmm = 1.0;
    for k in 1..=m {
        pmm *= (2 * k - 1) as f64;
    }
    if l == m {
        return pmm;
    }
    let mut pm1 = (2 * m + 1) as f64 * z * pmm;
    let mut pm2 = pmm;
    for ll in (m + 2)..=l {
        let next = ((2 * ll - 1) as f64 * z * pm1 - (ll + m - 1) as f64 * pm2) / (ll - m) as f64;
        pm2 = pm1;
        pm1 = next;
    }
    pm1
}

fn normalization(l: usize, m: usize) -> f64 {
    let mut ratio = 1.0;
    for k in (l - m + 1)..=(l + m) {
        ratio /= k as f64;
    }
    ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * ratio).sqrt()
}
