use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::null_space;
use crate::so3::rotation::{random_rotation, Rotation};
use crate::so3::wigner::{wigner_d_any, MAX_FEATURE_ORDER};

/// Relative singular-value threshold for null-space membership.
pub const NULL_SPACE_TOL: f64 = 1e-8;

/// Seed for the generic rotations the constraint is sampled on.
const CONSTRAINT_SEED: u64 = 0x5eed_0b5e;
const CONSTRAINT_ROTATIONS: usize = 3;

/// One equivariant angular kernel component between irreps `l_in → l_out`
/// built from filter harmonics of order `l_filter`.
///
/// `coeff` is stored row-major as `[2·l_out+1][2·l_in+1][2·l_filter+1]` and
/// has unit Frobenius norm. The kernel it describes is
/// `κ(x)_{ij} = Σ_m coeff[i][j][m] · Y^{l_filter}_m(x / ‖x‖)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AngularSolution {
    pub l_in: usize,
    pub l_out: usize,
    pub l_filter: usize,
    pub coeff: Vec<f64>,
}

impl AngularSolution {
    pub fn dims(&self) -> (usize, usize, usize) {
        (2 * self.l_out + 1, 2 * self.l_in + 1, 2 * self.l_filter + 1)
    }

    pub fn at(&self, i: usize, j: usize, m: usize) -> f64 {
        let (_, din, df) = self.dims();
        self.coeff[(i * din + j) * df + m]
    }
}

/// Filter orders allowed between `l_in` and `l_out`: `|l_in − l_out| ..= l_in + l_out`.
pub fn selection_rule(l_in: usize, l_out: usize) -> std::ops::RangeInclusive<usize> {
    l_in.abs_diff(l_out)..=(l_in + l_out)
}

fn constraint_rotations() -> Vec<Rotation> {
    (0..CONSTRAINT_ROTATIONS as u64).map(|k| random_rotation(CONSTRAINT_SEED + k)).collect()
}

/// Stacks `D^{l_out}(R) ⊗ D^{l_in}(R) ⊗ D^{l_f}(R) − I` over `rotations`.
///
/// For orthogonal `D`, `D^{-T} = D`, so this is the intertwining constraint
/// `D^{l_out}(R) κ(x) D^{l_in}(R)^{-1} = κ(Rx)` written on the coefficient tensor.
pub fn constraint_matrix(l_in: usize, l_out: usize, l_filter: usize, rotations: &[Rotation]) -> DMatrix<f64> {
    let n = (2 * l_out + 1) * (2 * l_in + 1) * (2 * l_filter + 1);
    let mut stacked = DMatrix::zeros(n * rotations.len(), n);
    for (k, r) in rotations.iter().enumerate() {
        let m = wigner_d_any(l_out, r).kronecker(&wigner_d_any(l_in, r)).kronecker(&wigner_d_any(l_filter, r))
            - DMatrix::identity(n, n);
        stacked.view_mut((k * n, 0), (n, n)).copy_from(&m);
    }
    stacked
}

fn canonical_sign(v: &mut [f64]) {
    let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-6 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

/// Complete basis of equivariant angular kernels `l_in → l_out`, one per
/// filter order in the selection rule, ascending in `l_filter`.
pub fn solve_angular_basis(l_in: usize, l_out: usize) -> Result<Vec<AngularSolution>> {
    for l in [l_in, l_out] {
        if l > MAX_FEATURE_ORDER {
            return Err(Error::UnsupportedIrrep(l));
        }
    }
    let rotations = constraint_rotations();
    let mut out = Vec::new();
    for l_filter in selection_rule(l_in, l_out) {
        let ns = null_space(&constraint_matrix(l_in, l_out, l_filter, &rotations), NULL_SPACE_TOL);
        if ns.ncols() != 1 {
            return Err(Error::BasisConvention { l_in, l_out, l_f: l_filter });
        }
        let mut coeff: Vec<f64> = ns.column(0).iter().cloned().collect();
        let norm = coeff.iter().map(|v| v * v).sum::<f64>().sqrt();
        coeff.iter_mut().for_each(|v| *v /= norm);
        canonical_sign(&mut coeff);
        out.push(AngularSolution { l_in, l_out, l_filter, coeff });
    }
    Ok(out)
}
