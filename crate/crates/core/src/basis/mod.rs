//! Equivariant 3D kernel bases: angular solutions of the kernel constraint
//! (found as a numerical null space) times Gaussian radial rings, sampled on
//! a cubic voxel grid.

pub mod angular;
pub mod io;
pub mod sampling;

pub use angular::{selection_rule, solve_angular_basis, AngularSolution};
pub use io::{read_basis, write_basis, BasisBlob};
pub use sampling::{
    basis_equivariance_residual, cached_kernel_basis, sample_kernel_basis, BasisElement, KernelBasis,
    RadialProfileSet,
};
