//! On-disk form of registration results.
//!
//! Per subject: `affine.txt` (3×4 row-major, shortest round-trip decimals),
//! `velocity.nii.gz` (lattice coefficients as a vector image whose grid is
//! the lattice), `trace.csv`, warped image and labels, and `result.json`.

use std::collections::BTreeMap;
use std::path::Path;

use bodyatlas::transform::{AffineTransform, BSplineLattice, VelocityField};
use bodyatlas::volume::{nifti, ImageGrid};
use bodyatlas::{Mat3, Vec3};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const AFFINE: &str = "affine.txt";
pub const VELOCITY: &str = "velocity.nii.gz";
pub const TRACE: &str = "trace.csv";
pub const WARPED: &str = "warped.nii.gz";
pub const WARPED_LABELS: &str = "warped_labels.nii.gz";
pub const RESULT: &str = "result.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectResult {
    pub id: String,
    /// Hash of every input that determines the outputs.
    pub key: String,
    pub is_reference: bool,
    pub converged: bool,
    pub reverted_to_affine: bool,
    pub folding_ratio: f64,
    /// File name → SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn write_affine(path: &Path, a: &AffineTransform) -> CliResult<()> {
    let mut s = String::new();
    for r in 0..3 {
        let row: Vec<String> = (0..3).map(|c| a.matrix[(r, c)].to_string()).chain([a.translation[r].to_string()]).collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    std::fs::write(path, s)?;
    Ok(())
}

pub fn read_affine(path: &Path) -> CliResult<AffineTransform> {
    let text = std::fs::read_to_string(path)?;
    let bad = || CliError::Fatal(format!("{}: expected 3 rows of 4 numbers", path.display()));
    let vals: Vec<f64> = text.split_whitespace().map(|t| t.parse::<f64>().map_err(|_| bad())).collect::<CliResult<_>>()?;
    if vals.len() != 12 {
        return Err(bad());
    }
    let m = Mat3::from_fn(|r, c| vals[4 * r + c]);
    let t = Vec3::new(vals[3], vals[7], vals[11]);
    Ok(AffineTransform::new(m, t)?)
}

pub fn write_velocity(path: &Path, v: &VelocityField) -> CliResult<()> {
    let l = &v.lattice;
    let grid = ImageGrid::new(l.dims(), l.spacing(), l.origin(), *l.direction())?;
    nifti::save_vector_field(&grid, l.coeffs(), path)?;
    Ok(())
}

pub fn read_velocity(path: &Path) -> CliResult<VelocityField> {
    let (grid, coeffs) = nifti::load_vector_field(path)?;
    Ok(VelocityField::new(BSplineLattice::new(grid.dims(), grid.spacing(), grid.origin(), *grid.direction(), coeffs)?))
}

pub fn write_result(path: &Path, r: &SubjectResult) -> CliResult<()> {
    std::fs::write(path, serde_json::to_vec_pretty(r).expect("result serializes"))?;
    Ok(())
}

pub fn read_result(path: &Path) -> CliResult<SubjectResult> {
    serde_json::from_slice(&std::fs::read(path)?).map_err(|e| CliError::Fatal(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_text_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(AFFINE);
        let a = AffineTransform::new(Mat3::new(1.0, 0.1, 1.0 / 3.0, -0.2, 0.9, 0.0, 1e-17, 0.0, 1.1), Vec3::new(0.1, -2.5, 1.0 / 7.0)).unwrap();
        write_affine(&p, &a).unwrap();
        assert_eq!(read_affine(&p).unwrap(), a);
        std::fs::write(&p, "1 2 3").unwrap();
        assert!(read_affine(&p).is_err());
    }

    #[test]
    fn velocity_round_trips_to_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(VELOCITY);
        let g = ImageGrid::axis_aligned([10, 8, 6], [2.0, 3.0, 2.0], [-9.0, -10.5, -5.0]).unwrap();
        let mut v = VelocityField::zeros(&g, Vec3::new(8.0, 9.0, 8.0)).unwrap();
        for (i, c) in v.lattice.coeffs_mut().iter_mut().enumerate() {
            *c = Vec3::new(i as f64 * 0.1, -(i as f64) * 0.05, 0.3);
        }
        write_velocity(&p, &v).unwrap();
        let r = read_velocity(&p).unwrap();
        assert_eq!(r.lattice.dims(), v.lattice.dims());
        assert!((r.lattice.origin() - v.lattice.origin()).norm() < 1e-5);
        for (a, b) in r.lattice.coeffs().iter().zip(v.lattice.coeffs()) {
            assert!((a - b).norm() < 1e-5 * (1.0 + b.norm()));
        }
    }
}
