//! SO(3) representation theory: rotations, real spherical harmonics, real
//! Wigner-D matrices and block-diagonal representations of irrep-typed
//! channel spaces.

pub mod harmonics;
pub mod irreps;
pub mod rotation;
pub mod wigner;

pub use harmonics::{real_spherical_harmonics, MAX_HARMONIC_ORDER};
pub use irreps::{rep_matrix, FieldType, Irrep, Slot};
pub use rotation::{octahedral_rotations, random_rotation, random_rotation_with, Mat3, Rotation, Vec3};
pub use wigner::{wigner_d_real, MAX_FEATURE_ORDER};
