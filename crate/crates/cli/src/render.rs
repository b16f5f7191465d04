//! Orthogonal slice rendering: a windowed grayscale base with
//! alpha-blended color overlays.

use std::str::FromStr;

use bodyatlas::volume::ScalarVolume;
use image::{Rgb, RgbImage};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plane {
    /// Constant z; x to the right, y down.
    Axial,
    /// Constant y; x to the right, z up.
    Coronal,
    /// Constant x; y to the right, z up.
    Sagittal,
}

impl FromStr for Plane {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "axial" => Ok(Plane::Axial),
            "coronal" => Ok(Plane::Coronal),
            "sagittal" => Ok(Plane::Sagittal),
            _ => Err(CliError::Usage(format!("unknown plane `{s}` (axial, coronal or sagittal)"))),
        }
    }
}

/// A slice index, or a fraction of the axis when written with a decimal
/// point (`0.5` is the middle slice).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SlicePos {
    Index(usize),
    Fraction(f64),
}

impl FromStr for SlicePos {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || CliError::Usage(format!("invalid slice `{s}`"));
        if s.contains('.') {
            let f: f64 = s.parse().map_err(|_| bad())?;
            if !(0.0..=1.0).contains(&f) {
                return Err(bad());
            }
            Ok(SlicePos::Fraction(f))
        } else {
            s.parse().map(SlicePos::Index).map_err(|_| bad())
        }
    }
}

impl SlicePos {
    fn resolve(self, n: usize) -> Result<usize, CliError> {
        match self {
            SlicePos::Index(i) if i < n => Ok(i),
            SlicePos::Index(i) => Err(CliError::Usage(format!("slice {i} out of range 0..{n}"))),
            SlicePos::Fraction(f) => Ok(((f * (n - 1) as f64).round() as usize).min(n - 1)),
        }
    }
}

pub struct Overlay<'a> {
    /// Opacity weight per voxel, clamped to `[0, 1]`.
    pub volume: &'a ScalarVolume,
    pub color: [u8; 3],
    pub alpha: f64,
}

pub const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Renders one slice. The window defaults to the volume's full range.
pub fn render_slice(base: &ScalarVolume, overlays: &[Overlay], plane: Plane, pos: SlicePos, window: Option<(f64, f64)>) -> Result<RgbImage, CliError> {
    for o in overlays {
        base.grid().ensure_same(o.volume.grid(), "base volume and overlay").map_err(|e| CliError::Usage(e.to_string()))?;
        if !(0.0..=1.0).contains(&o.alpha) {
            return Err(CliError::Usage(format!("overlay alpha {} outside [0, 1]", o.alpha)));
        }
    }
    let [nx, ny, nz] = base.grid().dims();
    let (lo, hi) = window.unwrap_or_else(|| base.min_max());
    if !(hi > lo) && window.is_some() {
        return Err(CliError::Usage(format!("empty window [{lo}, {hi}]")));
    }
    let (w, h) = match plane {
        Plane::Axial => (nx, ny),
        Plane::Coronal => (nx, nz),
        Plane::Sagittal => (ny, nz),
    };
    let s = pos.resolve(match plane {
        Plane::Axial => nz,
        Plane::Coronal => ny,
        Plane::Sagittal => nx,
    })?;
    let voxel = |u: usize, v: usize| match plane {
        Plane::Axial => (u, v, s),
        Plane::Coronal => (u, s, nz - 1 - v),
        Plane::Sagittal => (s, u, nz - 1 - v),
    };
    let mut img = RgbImage::new(w as u32, h as u32);
    for v in 0..h {
        for u in 0..w {
            let (i, j, k) = voxel(u, v);
            let g = if hi > lo { ((base.get(i, j, k) - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 };
            let mut px = [g * 255.0; 3];
            for o in overlays {
                let a = o.alpha * o.volume.get(i, j, k).clamp(0.0, 1.0);
                for c in 0..3 {
                    px[c] = (1.0 - a) * px[c] + a * o.color[c] as f64;
                }
            }
            img.put_pixel(u as u32, v as u32, Rgb(px.map(|c| c.round().clamp(0.0, 255.0) as u8)));
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use bodyatlas::volume::ImageGrid;

    fn vol() -> ScalarVolume {
        let g = ImageGrid::axis_aligned([4, 3, 5], [1.0; 3], [0.0; 3]).unwrap();
        ScalarVolume::from_fn(g, |p| p.x + 10.0 * p.y + 100.0 * p.z)
    }

    #[test]
    fn grayscale_window_and_orientation() {
        let v = vol();
        let img = render_slice(&v, &[], Plane::Axial, SlicePos::Index(0), Some((0.0, 23.0))).unwrap();
        assert_eq!(img.dimensions(), (4, 3));
        assert_eq!(img.get_pixel(0, 0).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(3, 2).0, [255, 255, 255]);
        let c = render_slice(&v, &[], Plane::Coronal, SlicePos::Fraction(0.0), None).unwrap();
        // superior at the top
        assert_eq!(c.dimensions(), (4, 5));
        assert!(c.get_pixel(0, 0).0[0] > c.get_pixel(0, 4).0[0]);
        let s = render_slice(&v, &[], Plane::Sagittal, SlicePos::Fraction(1.0), None).unwrap();
        assert_eq!(s.dimensions(), (3, 5));
    }

    #[test]
    fn zero_alpha_overlay_is_invisible() {
        let v = vol();
        let ov = ScalarVolume::filled(v.grid().clone(), 1.0);
        let plain = render_slice(&v, &[], Plane::Axial, SlicePos::Index(2), None).unwrap();
        let zero = render_slice(&v, &[Overlay { volume: &ov, color: PALETTE[0], alpha: 0.0 }], Plane::Axial, SlicePos::Index(2), None).unwrap();
        assert_eq!(plain, zero);
        let full = render_slice(&v, &[Overlay { volume: &ov, color: PALETTE[0], alpha: 1.0 }], Plane::Axial, SlicePos::Index(2), None).unwrap();
        assert!(full.pixels().all(|p| p.0 == PALETTE[0]));
    }

    #[test]
    fn bad_positions() {
        assert!("7".parse::<SlicePos>().unwrap().resolve(5).is_err());
        assert!("1.5".parse::<SlicePos>().is_err());
        assert_eq!("0.5".parse::<SlicePos>().unwrap().resolve(5).unwrap(), 2);
        assert!("oblique".parse::<Plane>().is_err());
    }
}
