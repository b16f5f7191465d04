//! Affine maps, B-spline lattices, stationary velocity fields, dense
//! displacement fields and the warping built on them.

mod affine;
mod bspline;
mod field;
mod svf;
mod warp;

pub use affine::AffineTransform;
pub use bspline::{basis, basis_d1, basis_d2, BSplineLattice};
pub use field::{DisplacementField, InversionReport};
pub use svf::{exp_velocity, squaring_steps, VelocityField, MAX_SQUARINGS};
pub use warp::{warp_labels, warp_scalar, Transform, TransformChain, WarpedLabels};

pub(crate) use svf::exp_with_tape;
