use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3::rotation::Rotation;
use crate::so3::wigner::{wigner_d_real, MAX_FEATURE_ORDER};

/// Irreducible representation of SO(3) of order `l`, dimension `2l + 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Irrep {
    pub l: usize,
}

impl Irrep {
    pub const fn new(l: usize) -> Self {
        Self { l }
    }

    pub const fn dim(self) -> usize {
        2 * self.l + 1
    }
}

/// A direct sum of irreps with multiplicities, in canonical (ascending `l`)
/// order. Channel `c` of a feature field with this type belongs to exactly
/// one irrep copy ("slot").
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FieldType {
    entries: Vec<(Irrep, usize)>,
}

/// One copy of an irrep inside a [`FieldType`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub irrep: Irrep,
    /// First channel of this slot.
    pub offset: usize,
}

impl FieldType {
    /// Builds a field type from `(l, multiplicity)` pairs. Entries with zero
    /// multiplicity are dropped; repeated orders are merged.
    pub fn new(entries: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut mult = [0usize; MAX_FEATURE_ORDER + 1];
        for (l, m) in entries {
            if l > MAX_FEATURE_ORDER {
                return Err(Error::UnsupportedIrrep(l));
            }
            mult[l] += m;
        }
        Self::from_multiplicities(mult)
    }

    /// Multiplicities of irreps 0, 1, 2.
    pub fn from_multiplicities(mult: [usize; MAX_FEATURE_ORDER + 1]) -> Result<Self> {
        let entries: Vec<_> = mult
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0)
            .map(|(l, m)| (Irrep::new(l), *m))
            .collect();
        if entries.is_empty() {
            return Err(Error::FieldType("field type has no channels".into()));
        }
        Ok(Self { entries })
    }

    pub fn scalars(n: usize) -> Result<Self> {
        Self::new([(0, n)])
    }

    pub fn entries(&self) -> &[(Irrep, usize)] {
        &self.entries
    }

    pub fn multiplicity(&self, l: usize) -> usize {
        self.entries.iter().find(|(i, _)| i.l == l).map_or(0, |(_, m)| *m)
    }

    pub fn multiplicities(&self) -> [usize; MAX_FEATURE_ORDER + 1] {
        std::array::from_fn(|l| self.multiplicity(l))
    }

    pub fn total_channels(&self) -> usize {
        self.entries.iter().map(|(i, m)| i.dim() * m).sum()
    }

    pub fn max_order(&self) -> usize {
        self.entries.last().map_or(0, |(i, _)| i.l)
    }

    pub fn is_scalar(&self) -> bool {
        self.entries.iter().all(|(i, _)| i.l == 0)
    }

    /// Number of scalar channels; they always come first.
    pub fn scalar_channels(&self) -> usize {
        self.multiplicity(0)
    }

    pub fn slots(&self) -> Vec<Slot> {
        let mut out = Vec::new();
        let mut offset = 0;
        for (irrep, m) in &self.entries {
            for _ in 0..*m {
                out.push(Slot { irrep: *irrep, offset });
                offset += irrep.dim();
            }
        }
        out
    }

    pub fn non_scalar_slots(&self) -> Vec<Slot> {
        self.slots().into_iter().filter(|s| s.irrep.l > 0).collect()
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.entries.iter().map(|(i, m)| format!("{m}x{}", i.l)).collect();
        write!(f, "[{}]", parts.join(", "))
    }
}

/// Block-diagonal representation matrix `ρ(R)` of a field type.
pub fn rep_matrix(t: &FieldType, r: &Rotation) -> DMatrix<f64> {
    let c = t.total_channels();
    let mut out = DMatrix::zeros(c, c);
    let blocks: Vec<DMatrix<f64>> =
        (0..=MAX_FEATURE_ORDER).map(|l| wigner_d_real(l, r).expect("l within feature range")).collect();
    for slot in t.slots() {
        let d = &blocks[slot.irrep.l];
        let n = slot.irrep.dim();
        out.view_mut((slot.offset, slot.offset), (n, n)).copy_from(d);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::rotation::random_rotation;
    use nalgebra::DVector;

    #[test]
    fn dims_and_totals() {
        assert_eq!(Irrep::new(2).dim(), 5);
        let t = FieldType::new([(2, 1), (0, 5), (1, 2)]).unwrap();
        assert_eq!(t.total_channels(), 16);
        assert_eq!(t.entries()[0].0.l, 0);
        assert_eq!(t.to_string(), "[5x0, 2x1, 1x2]");
        assert!(FieldType::new([(0, 0)]).is_err());
        assert!(FieldType::new([(3, 1)]).is_err());
    }

    #[test]
    fn scalar_rep_is_identity() {
        let t = FieldType::scalars(4).unwrap();
        let m = rep_matrix(&t, &random_rotation(1));
        assert!((m - DMatrix::identity(4, 4)).norm() < 1e-15);
    }

    #[test]
    fn identity_rotation_gives_identity() {
        let t = FieldType::new([(0, 1), (1, 1)]).unwrap();
        let m = rep_matrix(&t, &Rotation::identity());
        assert!((m - DMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn two_vectors_block_diagonal() {
        let t = FieldType::new([(1, 2)]).unwrap();
        let r = random_rotation(9);
        let m = rep_matrix(&t, &r);
        let d = wigner_d_real(1, &r).unwrap();
        // direct action on two stacked vectors
        let a = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let b = DVector::from_vec(vec![1.5, 0.2, -0.7]);
        let mut stacked = DVector::zeros(6);
        stacked.rows_mut(0, 3).copy_from(&a);
        stacked.rows_mut(3, 3).copy_from(&b);
        let got = &m * stacked;
        assert!((got.rows(0, 3) - &d * a).norm() < 1e-14);
        assert!((got.rows(3, 3) - &d * b).norm() < 1e-14);
        assert!(m.view((0, 3), (3, 3)).norm() == 0.0);
    }
}
