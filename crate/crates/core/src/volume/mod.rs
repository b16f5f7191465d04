//! Voxel containers placed in world space, interpolation, filtering and
//! NIfTI-1 file I/O.

mod data;
mod filter;
mod grid;
pub mod nifti;
mod sample;

pub use data::{LabelVolume, Mask, ScalarVolume};
pub use filter::{downsample2, gaussian_smooth, grid_pyramid, pyramid, DOWNSAMPLE_SIGMA_VOXELS};
pub use grid::ImageGrid;
pub use sample::Boundary;

pub(crate) use filter::gaussian_voxels;
pub(crate) use sample::zero_corners;
