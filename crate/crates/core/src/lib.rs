//! Volumetric registration and population-atlas toolkit.
//!
//! The crate covers the whole path from raw subject volumes to group
//! atlases: intensity and spatial preprocessing, affine and diffeomorphic
//! (stationary-velocity B-spline) registration, atlas averaging and
//! unbiasing, registration quality metrics, cohort selection and
//! voxel-based morphometry. Synthetic phantoms with known ground truth make
//! every stage testable at desk scale.

pub mod atlas;
pub mod cohort;
pub mod error;
pub mod metrics;
pub mod phantom;
mod par;
pub mod preprocess;
pub mod registration;
pub mod transform;
pub mod vbm;
pub mod volume;

pub use error::{Error, Result};

/// Column 3-vector in world millimetres (or voxel units where stated).
pub type Vec3 = nalgebra::Vector3<f64>;
/// 3×3 real matrix.
pub type Mat3 = nalgebra::Matrix3<f64>;
